"""Run configuration: flat dotted key=value text with task presets and layered overrides."""

from __future__ import annotations

import math
import os
from dataclasses import fields
from pathlib import Path

from .data.simulate import SyntheticIMUConfig
from .model import TASKS, VARIANTS, DeepSenseConfig
from .training import LossSpec, OptimConfig


class ConfigError(ValueError):
    """Invalid or contradictory configuration; the message names the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


TASK_PRESETS = {
    "hhar": {"model.task": "classification", "model.n_classes": "6", "model.dims": "3,3",
             "loss.name": "cross_entropy"},
    "userid": {"model.task": "classification", "model.n_classes": "9", "model.dims": "3,3",
               "loss.name": "cross_entropy"},
    "cartrack": {"model.task": "regression", "model.out_dim": "2", "model.dims": "3,3,3", "model.T": "128",
                 "model.f": "17", "loss.name": "cartrack"},
}

_LOSS_FOR_TASK = {"classification": ("cross_entropy",), "regression": ("mse", "cartrack")}


def _base_defaults() -> dict[str, str]:
    d = {
        "run.seed": "0",
        "run.task": "hhar",
        "run.data": "",
        "run.out": "out",
        "run.checkpoint": "",
        "run.split": "none",
        "loss.name": "cross_entropy",
        "loss.lambda": "1.0",
        "loss.theta": repr(math.pi / 6),
    }
    model = DeepSenseConfig()
    for f in fields(DeepSenseConfig):
        v = getattr(model, f.name)
        d[f"model.{f.name}"] = ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
    optim = OptimConfig()
    for f in fields(OptimConfig):
        d[f"optim.{f.name}"] = str(getattr(optim, f.name))
    d["optim.epochs"] = "10"
    sim = SyntheticIMUConfig()
    for f in fields(SyntheticIMUConfig):
        v = getattr(sim, f.name)
        if f.name == "seed":
            continue
        d[f"sim.{f.name}"] = ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
    d["sim.n_traces"] = "20"
    d["sim.duration"] = "60,120"
    d["sim.target_len"] = "32"
    d["data.tau"] = "0.25"
    d["data.sample_len"] = "5.0"
    return d


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}", f"expected key=value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigError(f"{source}:{n}", "empty key")
        out[k] = v
    return out


def to_text(cfg: dict[str, str]) -> str:
    return "".join(f"{k}={cfg[k]}\n" for k in sorted(cfg))


def resolve_config(file_text: str | None = None, overrides: dict[str, str] | None = None,
                   env: dict | None = None) -> dict[str, str]:
    """Layer base defaults < task preset < file < flag overrides, then validate.

    ``DEEPSENSE_SEED`` from ``env`` (default: the process environment) is the
    lowest-precedence seed source.
    """
    env = os.environ if env is None else env
    file_cfg = parse_text(file_text, "config file") if file_text else {}
    overrides = dict(overrides or {})
    layered = _base_defaults()
    if env.get("DEEPSENSE_SEED"):
        layered["run.seed"] = env["DEEPSENSE_SEED"]
    task = overrides.get("run.task", file_cfg.get("run.task", layered["run.task"]))
    if task not in TASK_PRESETS:
        raise ConfigError("run.task", f"unknown task {task!r}; expected one of {sorted(TASK_PRESETS)}")
    layered.update(TASK_PRESETS[task])
    for src in (file_cfg, overrides):
        for k, v in src.items():
            if k not in layered:
                raise ConfigError(k, "unknown configuration key")
            layered[k] = v
    validate(layered)
    return layered


def validate(cfg: dict[str, str]) -> None:
    task = cfg["run.task"]
    head = cfg["model.task"]
    if head not in TASKS:
        raise ConfigError("model.task", f"expected one of {TASKS}")
    if TASK_PRESETS[task]["model.task"] != head:
        raise ConfigError("model.task", f"task {task!r} needs a {TASK_PRESETS[task]['model.task']} head, got {head!r}")
    if cfg["loss.name"] not in _LOSS_FOR_TASK[head]:
        raise ConfigError("loss.name", f"{cfg['loss.name']!r} does not fit a {head} head; use {_LOSS_FOR_TASK[head]}")
    if cfg["model.variant"] not in VARIANTS:
        raise ConfigError("model.variant", f"expected one of {VARIANTS}")
    try:
        int(cfg["run.seed"])
    except ValueError:
        raise ConfigError("run.seed", f"not an integer: {cfg['run.seed']!r}") from None
    for builder, prefix in ((model_config, "model."), (loss_spec, "loss."), (optim_config, "optim."),
                            (sim_config, "sim.")):
        try:
            builder(cfg)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            key = _guess_key(cfg, prefix, str(exc))
            raise ConfigError(key, str(exc)) from None
    parse_split(cfg["run.split"])
    if int(cfg["optim.epochs"]) < 0:
        raise ConfigError("optim.epochs", "must be >= 0")
    if task != "cartrack" and int(cfg["model.n_classes"]) != int(TASK_PRESETS[task]["model.n_classes"]):
        raise ConfigError("model.n_classes", f"task {task!r} has {TASK_PRESETS[task]['model.n_classes']} classes")


def _guess_key(cfg, prefix, message: str) -> str:
    for k in sorted(cfg, key=len, reverse=True):
        if k.startswith(prefix) and k[len(prefix):] in message:
            return k
    return prefix.rstrip(".")


def _typed(raw: str, default):
    if isinstance(default, bool):
        if raw.lower() not in ("true", "false", "1", "0"):
            raise ValueError(f"expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        conv = type(default[0]) if default else float
        return tuple(conv(x) for x in raw.split(",") if x.strip())
    return raw


def _section(cfg: dict, prefix: str, cls, skip=()):
    kw = {}
    proto = cls()
    for f in fields(cls):
        if f.name in skip:
            continue
        key = prefix + f.name
        try:
            kw[f.name] = _typed(cfg[key], getattr(proto, f.name))
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None
    return kw


def model_config(cfg: dict) -> DeepSenseConfig:
    return DeepSenseConfig(**_section(cfg, "model.", DeepSenseConfig))


def loss_spec(cfg: dict) -> LossSpec:
    try:
        lam, theta = float(cfg["loss.lambda"]), float(cfg["loss.theta"])
    except ValueError as exc:
        raise ConfigError("loss.lambda" if "lambda" in str(exc) else "loss.theta", str(exc)) from None
    if lam < 0:
        raise ConfigError("loss.lambda", "must be >= 0")
    if not 0 <= theta < math.pi:
        raise ConfigError("loss.theta", "must lie in [0, pi)")
    return LossSpec(cfg["loss.name"], lam, theta)


def optim_config(cfg: dict) -> OptimConfig:
    return OptimConfig(**_section(cfg, "optim.", OptimConfig))


def sim_config(cfg: dict) -> SyntheticIMUConfig:
    return SyntheticIMUConfig(seed=int(cfg["run.seed"]), **_section(cfg, "sim.", SyntheticIMUConfig, skip=("seed",)))


def parse_split(raw: str):
    """'none' | 'loso:<user>' | 'kfold:<k>:<fold>'."""
    parts = raw.split(":")
    try:
        if parts == ["none"]:
            return ("none",)
        if parts[0] == "loso" and len(parts) == 2 and parts[1]:
            return ("loso", parts[1])
        if parts[0] == "kfold" and len(parts) == 3:
            k, fold = int(parts[1]), int(parts[2])
            if k >= 2 and 0 <= fold < k:
                return ("kfold", k, fold)
    except ValueError:
        pass
    raise ConfigError("run.split", f"expected none, loso:<user> or kfold:<k>:<fold>, got {raw!r}")


def load_file(path) -> str:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(p)
    return p.read_text(encoding="utf-8")
