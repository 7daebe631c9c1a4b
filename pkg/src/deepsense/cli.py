"""Command-line entry point: simulate, preprocess, train, eval, gradcheck.

Exit codes: 0 success, 1 failed check (gradcheck), 2 configuration or input
error, 3 training diverged.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .data import (Sample, load_hhar_csv, load_samples, make_cartrack_sample, make_samples,
                   read_trace_csv, read_truth_csv, save_samples, simulate_trace, split, synthetic_hhar_records,
                   write_trace_csv, write_truth_csv)
from .data.cartrack import interval_boundaries
from .eval import (GridMap, classification_metrics, mae_ci, map_snap_accuracy, metrics_document,
                   write_metrics_json, write_trajectory_csv)
from .model import VARIANTS, build, predict_class
from .training import (DivergedError, LossSpec, collate, gradient_check_model, load_checkpoint, micro_batch,
                       micro_config, save_checkpoint, train)

SIDECAR = "resolved_config.txt"
_EVAL_CHUNK = 8  # samples per inference batch; bounds im2col memory at the default 64-filter size

# flag -> config key
_FLAG_KEYS = {
    "seed": "run.seed", "task": "run.task", "data": "run.data", "out": "run.out", "checkpoint": "run.checkpoint",
    "split": "run.split", "variant": "model.variant", "epochs": "optim.epochs", "lr": "optim.lr",
    "batch_size": "optim.batch_size", "lam": "loss.lambda", "theta": "loss.theta", "loss": "loss.name",
    "n_traces": "sim.n_traces",
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepsense", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    common.add_argument("--seed", type=int)
    common.add_argument("--task", choices=sorted(C.TASK_PRESETS))
    common.add_argument("--out", help="output directory")
    common.add_argument("--data", help="input file or directory")
    specs = {
        "simulate": "simulate journeys to trace/truth CSV files",
        "preprocess": "turn raw CSV input into a samples .npz file",
        "train": "train a model and write checkpoint, loss log and metrics",
        "eval": "evaluate a checkpoint on samples",
        "gradcheck": "finite-difference gradient check",
    }
    for name, help_text in specs.items():
        sp = sub.add_parser(name, parents=[common], help=help_text)
        if name in ("simulate",):
            sp.add_argument("--n-traces", dest="n_traces", type=int)
        if name in ("train", "eval"):
            sp.add_argument("--checkpoint")
            sp.add_argument("--split")
            sp.add_argument("--variant", choices=VARIANTS)
        if name == "train":
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--lr", type=float)
            sp.add_argument("--batch-size", dest="batch_size", type=int)
            sp.add_argument("--lambda", dest="lam", type=float)
            sp.add_argument("--theta", type=float)
            sp.add_argument("--loss", choices=("cross_entropy", "mse", "cartrack"))
        if name == "gradcheck":
            sp.add_argument("--micro", action="store_true", help="micro configuration over all variants and heads")
            sp.add_argument("--tol", type=float, default=1e-4)
    return p


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise C.ConfigError(item, "--set expects KEY=VALUE")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for flag, key in _FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            out[key] = str(v)
    return out


def _write_sidecar(out: Path, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / SIDECAR).write_text(C.to_text(cfg), encoding="utf-8")


# -- data loading --------------------------------------------------------------------

def _f_and_len(cfg: dict) -> tuple[int, int]:
    f = int(cfg["model.f"])
    return f, 2 * (f - 1)


def _synthetic_samples(cfg: dict) -> list[Sample]:
    seed = int(cfg["run.seed"])
    f, m = _f_and_len(cfg)
    if cfg["run.task"] == "cartrack":
        return _simulate_samples(cfg, seed, f, m)
    recs = synthetic_hhar_records(users=("a", "b", "c"), seconds=15.0, seed=seed)
    label = "user" if cfg["run.task"] == "userid" else "activity"
    return list(make_samples(recs, float(cfg["data.tau"]), float(cfg["data.sample_len"]), label, f=f, target_len=m))


def _simulate_samples(cfg, seed, f, m):
    from .data import make_cartrack_samples

    sim = C.sim_config(cfg)
    dur = tuple(float(x) for x in cfg["sim.duration"].split(","))
    return make_cartrack_samples(int(cfg["sim.n_traces"]), sim, dur if len(dur) == 2 else dur[0], seed=seed,
                                 target_len=m, f=f)


def _samples_from_raw(cfg: dict, path: Path) -> list[Sample]:
    f, m = _f_and_len(cfg)
    if cfg["run.task"] == "cartrack":
        traces = sorted(path.glob("trace_*.csv")) if path.is_dir() else [path]
        if not traces:
            raise FileNotFoundError(f"no trace_*.csv files in {path}")
        sim = C.sim_config(cfg)
        out = []
        for tp in traces:
            sensors, gps = read_trace_csv(tp)
            truth_path = tp.with_name(tp.name.replace("trace_", "truth_"))
            truth = read_truth_csv(truth_path) if truth_path.exists() else None
            out.append(_cartrack_from_csv(sensors, gps, truth, sim, m, f, tp.stem))
        return out
    files = sorted(path.glob("*.csv")) if path.is_dir() else [path]
    if not files:
        raise FileNotFoundError(f"no CSV files in {path}")
    recs = []
    for fp in files:
        recs.extend(load_hhar_csv(fp))
    label = "user" if cfg["run.task"] == "userid" else "activity"
    return list(make_samples(recs, float(cfg["data.tau"]), float(cfg["data.sample_len"]), label, f=f, target_len=m))


class _CsvTrace:
    """Minimal stand-in for a KinematicTrace rebuilt from the truth sidecar."""

    def __init__(self, truth: np.ndarray):
        self.t = truth[:, 0]
        self._xy = truth[:, 1:3]

    def at(self, times):
        return {"pos": np.stack([np.interp(times, self.t, self._xy[:, 0]),
                                 np.interp(times, self.t, self._xy[:, 1])], axis=1)}


def _cartrack_from_csv(sensors, gps, truth, sim, m, f, name) -> Sample:
    if truth is None:
        # no truth sidecar: use the GPS fixes, anchored at the first fix
        g = np.vstack([gps[1][:1], gps[1]])
        truth = np.column_stack([interval_boundaries(gps[0]), g, np.zeros((g.shape[0], 2))])
    s = make_cartrack_sample(_CsvTrace(truth), sensors, gps, sim, m, f)
    s.meta["source"] = name
    return s


def _load_samples(cfg: dict) -> list[Sample]:
    data = cfg["run.data"]
    if not data:
        return _synthetic_samples(cfg)
    path = Path(data)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix == ".npz":
        return load_samples(path)
    return _samples_from_raw(cfg, path)


def _apply_split(cfg: dict, samples: list):
    sp = C.parse_split(cfg["run.split"])
    if sp[0] == "none":
        return samples, samples
    if sp[0] == "loso":
        try:
            return split(samples, "loso", user=sp[1])
        except ValueError as exc:
            raise C.ConfigError("run.split", str(exc)) from None
    return split(samples, "kfold", k=sp[1], fold=sp[2], seed=int(cfg["run.seed"]))


# -- evaluation ------------------------------------------------------------------------------

def _evaluate(model, samples, cfg, out: Path) -> dict:
    task = cfg["run.task"]
    variant = model.config.variant
    seed = int(cfg["run.seed"])
    if not samples:
        raise ValueError("no samples to evaluate")
    if model.config.task == "classification":
        preds, labels = [], []
        for lo in range(0, len(samples), _EVAL_CHUNK):
            b = collate(samples[lo:lo + _EVAL_CHUNK])
            preds.append(predict_class(model, b.inputs, b.widths) if b.mask is None else
                         np.argmax(model(b.inputs, b.widths, mask=b.mask).probs.data, axis=1))
            labels.append(b.labels)
        cm = classification_metrics(np.concatenate(preds), np.concatenate(labels), model.config.n_classes)
        doc = metrics_document(task, variant, cm.to_dict(), cm.confusion, len(samples), seed)
    else:
        pred_tracks, truth_tracks, base_tracks, errs, base_errs = [], [], [], [], []
        rows_t, rows_xy, rows_id = [], [], []
        for lo in range(0, len(samples), _EVAL_CHUNK):
            chunk = samples[lo:lo + _EVAL_CHUNK]
            b = collate(chunk)
            p = model(b.inputs, b.widths, mask=b.mask).output.data
            for i, s in enumerate(chunk):
                truth = s.arrays["truth_track"]
                track = truth[0] + np.vstack([np.zeros(2), np.cumsum(p[i, : s.T], axis=0)])
                pred_tracks.append(track)
                truth_tracks.append(truth)
                base_tracks.append(s.arrays["baseline_track"])
                errs.append(track[-1] - truth[-1])
                base_errs.append(s.arrays["baseline_track"][-1] - truth[-1])
                times = np.concatenate([[0.0], np.cumsum(s.widths)])
                rows_t.extend(times)
                rows_xy.extend(track)
                rows_id.extend([str(lo + i)] * len(times))
        gmap = GridMap.covering(np.vstack(truth_tracks + pred_tracks + base_tracks), block=float(cfg["sim.block"]))
        metrics = {}
        if len(samples) >= 2:
            mae, ci = mae_ci(errs)
            bmae, bci = mae_ci(base_errs)
            metrics.update({"mae": mae, "mae_ci95": ci, "baseline_mae": bmae, "baseline_mae_ci95": bci})
        metrics["map_aided_accuracy"] = map_snap_accuracy(pred_tracks, truth_tracks, gmap)
        metrics["baseline_map_aided_accuracy"] = map_snap_accuracy(base_tracks, truth_tracks, gmap)
        doc = metrics_document(task, variant, metrics, None, len(samples), seed)
        write_trajectory_csv(out / "trajectories.csv", np.array(rows_t), np.array(rows_xy), rows_id)
    write_metrics_json(out / "metrics.json", doc)
    return doc


# -- subcommands -------------------------------------------------------------------------------

def cmd_simulate(cfg: dict, out: Path) -> int:
    sim = C.sim_config(cfg)
    dur = [float(x) for x in cfg["sim.duration"].split(",")]
    ss = np.random.SeedSequence(int(cfg["run.seed"]))
    for k, child in enumerate(ss.spawn(int(cfg["sim.n_traces"]))):
        rng = np.random.default_rng(child)
        d = float(rng.uniform(dur[0], dur[-1]))
        trace, sensors, gps = simulate_trace(sim, d, seed=int(rng.integers(2 ** 63)))
        write_trace_csv(out / f"trace_{k:04d}.csv", sensors, gps)
        write_truth_csv(out / f"truth_{k:04d}.csv", trace)
    print(f"wrote {cfg['sim.n_traces']} traces to {out}")
    return 0


def cmd_preprocess(cfg: dict, out: Path) -> int:
    samples = _load_samples(cfg)
    save_samples(out / "samples.npz", samples)
    print(f"wrote {len(samples)} samples to {out / 'samples.npz'}")
    return 0


def cmd_train(cfg: dict, out: Path) -> int:
    samples = _load_samples(cfg)
    train_set, test_set = _apply_split(cfg, samples)
    mcfg = C.model_config(cfg)
    if train_set:
        got = train_set[0].inputs[0].shape[1] // 2
        if got != mcfg.f:
            raise C.ConfigError("model.f", f"data has {got} frequency bins, model expects {mcfg.f}")
    seed = int(cfg["run.seed"])
    model = build(mcfg, seed=seed)
    optim = C.optim_config(cfg)
    try:
        train(model, train_set, C.loss_spec(cfg), optim, int(cfg["optim.epochs"]), seed=seed,
              log_path=out / "loss_log.jsonl")
    except DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    save_checkpoint(out / "checkpoint.dsns", model)
    doc = _evaluate(model, test_set, cfg, out)
    print(json.dumps(doc["metrics"], sort_keys=True))
    return 0


def cmd_eval(cfg: dict, out: Path) -> int:
    ckpt = cfg["run.checkpoint"]
    if not ckpt:
        raise C.ConfigError("run.checkpoint", "eval needs --checkpoint")
    if not Path(ckpt).exists():
        raise FileNotFoundError(ckpt)
    model = load_checkpoint(ckpt)
    samples = _load_samples(cfg)
    _, test_set = _apply_split(cfg, samples)
    doc = _evaluate(model, test_set, cfg, out)
    print(json.dumps(doc["metrics"], sort_keys=True))
    return 0


def cmd_gradcheck(cfg: dict, out: Path, micro: bool, tol: float) -> int:
    seed = int(cfg["run.seed"])
    if micro:
        combos = [(v, t) for v in VARIANTS for t in ("classification", "regression")]
    else:
        mc = C.model_config(cfg)
        combos = [(mc.variant, mc.task)]
    lam = float(cfg["loss.lambda"]) or 1.0
    results = []
    worst = 0.0
    for variant, task in combos:
        mcfg = micro_config(variant, task) if micro else C.model_config(cfg)
        model = build(mcfg, seed=seed)
        batch = micro_batch(mcfg, batch=3, seed=seed)
        spec = LossSpec("cross_entropy") if task == "classification" else LossSpec("cartrack", lam,
                                                                                      float(cfg["loss.theta"]))
        rep = gradient_check_model(model, batch, spec, tolerance=tol, seed=seed)
        worst = max(worst, rep.max_rel_err)
        print(f"{variant:12s} {task:15s} {rep.summary()}")
        results.append({"variant": variant, "task": task, "max_rel_err": rep.max_rel_err, "passed": rep.passed,
                        "n_checked": rep.n_checked, "failures": [f[0] + f"[{f[1]}]" for f in rep.failures[:20]]})
    ok = all(r["passed"] for r in results)
    (out / "gradcheck.json").write_text(json.dumps({"max_rel_err": worst, "tolerance": tol, "passed": ok,
                                                    "results": results}, indent=2, sort_keys=True) + "\n")
    print(f"max relative error {worst:.3e} -> {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def run(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage to stderr
        return int(exc.code or 0)
    try:
        file_text = C.load_file(args.config) if args.config else None
        cfg = C.resolve_config(file_text, _overrides(args))
        out = Path(cfg["run.out"])
        _write_sidecar(out, cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "preprocess":
            return cmd_preprocess(cfg, out)
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "eval":
            return cmd_eval(cfg, out)
        return cmd_gradcheck(cfg, out, args.micro, args.tol)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing input {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
