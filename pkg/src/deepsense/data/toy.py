"""Small synthetic classification sets for sanity runs."""

from __future__ import annotations

import numpy as np

from ..dsp import SensorSeries, preprocess_series
from .samples import Sample


def toy_classification_samples(n: int = 20, n_classes: int = 2, rate: float = 32.0, seconds: float = 5.0,
                               tau: float = 0.25, dims=(3, 3), seed: int = 0) -> list[Sample]:
    """Class c is a noisy multi-axis oscillation at (2 + 3c) Hz with random phase/amplitude."""
    rng = np.random.default_rng(seed)
    out = []
    n_t = int(round(seconds * rate))
    for i in range(n):
        c = i % n_classes
        t = np.arange(n_t) / rate + rng.uniform(0, 0.2 / rate, size=n_t)
        t.sort()
        inputs = []
        for k, d in enumerate(dims):
            amp = rng.uniform(0.5, 1.5, size=(d, 1))
            ph = rng.uniform(0, 2 * np.pi, size=(d, 1))
            x = amp * np.sin(2 * np.pi * (2 + 3 * c) * t[None, :] + ph) + rng.normal(0, 0.3, size=(d, n_t))
            inputs.append(preprocess_series(SensorSeries(k, x, t), tau).data)
        out.append(Sample(inputs, np.full(inputs[0].shape[2], tau), label=c, meta={"index": i}))
    return out
