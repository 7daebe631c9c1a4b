"""Model-ready samples and their on-disk container."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class Sample:
    inputs: list  # per sensor, (d_k, 2f, T)
    widths: np.ndarray  # (T,) seconds
    label: int = -1
    target_mean: np.ndarray | None = None  # (T, 2) metres
    target_cov: np.ndarray | None = None  # (T, 2, 2) m^2
    meta: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)  # extra per-sample arrays (truth tracks etc.)

    @property
    def T(self) -> int:
        return int(self.widths.shape[0])


def save_samples(path, samples: list[Sample]) -> None:
    payload = {}
    header = []
    for i, s in enumerate(samples):
        for k, x in enumerate(s.inputs):
            payload[f"s{i}_in{k}"] = x
        payload[f"s{i}_widths"] = s.widths
        if s.target_mean is not None:
            payload[f"s{i}_tmean"] = s.target_mean
            payload[f"s{i}_tcov"] = s.target_cov
        for name, arr in s.arrays.items():
            payload[f"s{i}_x_{name}"] = arr
        header.append({"K": len(s.inputs), "label": s.label, "meta": s.meta, "arrays": sorted(s.arrays)})
    payload["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_samples(path) -> list[Sample]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode("utf-8"))
        out = []
        for i, h in enumerate(header):
            s = Sample(
                inputs=[z[f"s{i}_in{k}"] for k in range(h["K"])],
                widths=z[f"s{i}_widths"],
                label=int(h["label"]),
                meta=h["meta"],
            )
            if f"s{i}_tmean" in z:
                s.target_mean = z[f"s{i}_tmean"]
                s.target_cov = z[f"s{i}_tcov"]
            s.arrays = {name: z[f"s{i}_x_{name}"] for name in h["arrays"]}
            out.append(s)
    return out
