"""Command-line entry point: train, eval, refine, synth, inspect."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import RunConfig, apply_overrides, load_config
from .data import gen_synthetic_multilabel, load_manifest, read_tensor_file, write_synthetic, write_tensor_file
from .infer import InferenceConfig, refine, refine_multicrop
from .experiments import SYNTHETIC_DEFAULTS
from .train import TrainConfig, evaluate, load_checkpoint, train_loop

log = logging.getLogger("ldrsp")


class UsageError(Exception):
    """Bad input from the user; reported with exit code 2."""


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in fields(RunConfig):
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f"set_{f.name}", metavar="VALUE",
                            help=argparse.SUPPRESS)


def _overrides(args) -> dict:
    return {k[4:]: v for k, v in vars(args).items() if k.startswith("set_") and v is not None}


def _load_dataset(manifest: str):
    if not manifest:
        raise UsageError("no dataset manifest configured")
    try:
        return load_manifest(manifest)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None


def _fmt(v: float) -> str:
    return f"{v:.4f}"


# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    path = Path(args.config)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        cfg = apply_overrides(load_config(path), _overrides(args))
        cfg.validate()
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    T.set_default_dtype(cfg.dtype)
    dataset = _load_dataset(cfg.manifest)
    run_dir = cfg.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.echo").write_text(cfg.to_text(), encoding="utf-8")
    tcfg, icfg = cfg.train_config(), cfg.infer_config()
    result = train_loop(tcfg, dataset, icfg, out_dir=run_dir)

    refined_dir = run_dir / "refined"
    refined_dir.mkdir(exist_ok=True)
    x_test, y_test = dataset.split("test")
    best = result.best
    if len(x_test):
        thresholds = None if tcfg.task == "segmentation" else (best.raw_threshold, best.refined_threshold)
        test = evaluate(x_test, y_test, result.G, result.D, icfg, tcfg, thresholds)
        raw, refined = _predict(x_test, result.G, result.D, icfg, tcfg)
        write_tensor_file(refined_dir / "test_raw.spt", raw)
        write_tensor_file(refined_dir / "test_refined.spt", refined)
        print(f"test raw={_fmt(test.raw_score)} refined={_fmt(test.refined_score)} delta={_fmt(test.delta)}")
    print(f"best epoch {result.best_epoch}: val raw={_fmt(best.raw_score)} "
          f"refined={_fmt(best.refined_score)} delta={_fmt(best.delta)}")
    print(f"run directory: {run_dir}")
    return 0


def _predict(x, G, D, icfg, tcfg):
    if tcfg.task == "segmentation":
        refined, raw = refine_multicrop(x, G, D, icfg, tcfg.crop, tcfg.n_crops, return_raw=True)
        return raw, refined
    raw = G.predict(x)
    return raw, refine(x, raw, D, icfg)[0]


def _infer_from(meta: dict, args) -> InferenceConfig:
    base = dict(meta.get("inference", {}))
    base.pop("bounds", None)
    if args.eta is not None:
        base["eta"] = args.eta
    if args.steps is not None:
        base["steps"] = args.steps
    if args.normalized is not None:
        base["normalized"] = args.normalized
    try:
        return InferenceConfig(**base)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None


def cmd_eval(args) -> int:
    G, D, meta = _load_ckpt(args.checkpoint)
    icfg = _infer_from(meta, args)
    tcfg = TrainConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta["train_config"].items()})
    manifest = args.manifest or meta.get("manifest")
    dataset = _load_dataset(manifest)
    x, y = dataset.split(args.split)
    thresholds = None
    if tcfg.task != "segmentation" and meta.get("raw_threshold") is not None:
        thresholds = (meta["raw_threshold"], meta["refined_threshold"])
        if icfg.steps == 0:
            thresholds = (thresholds[0], thresholds[0])
    res = evaluate(x, y, G, D, icfg, tcfg, thresholds)
    metric = "mean_iou" if tcfg.task == "segmentation" else "f1"
    print(f"split={args.split} metric={metric} raw={_fmt(res.raw_score)} "
          f"refined={_fmt(res.refined_score)} delta={_fmt(res.delta)}")
    out = Path(args.out) if args.out else Path(args.checkpoint) / f"eval_{args.split}.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split", "metric", "raw_score", "refined_score", "delta"])
        w.writerow([args.split, metric, repr(res.raw_score), repr(res.refined_score), repr(res.delta)])
    return 0


def cmd_refine(args) -> int:
    G, D, meta = _load_ckpt(args.checkpoint)
    icfg = _infer_from(meta, args)
    if not Path(args.input).exists():
        raise UsageError(f"input file not found: {args.input}")
    x = read_tensor_file(args.input).astype(T.get_default_dtype())
    expected = _input_shape(G)
    if expected is not None and (x.ndim != len(expected) + 1 or x.shape[1:] != expected):
        raise UsageError(f"input shape {x.shape} does not match checkpoint input (N, {', '.join(map(str, expected))})")
    try:
        if args.crops:
            crop = int(meta.get("train_config", {}).get("crop", 24))
            y = refine_multicrop(x, G, D, icfg, crop, args.crops)
            scores = [float(np.mean(D.score(x, y)))]
            trace = [(icfg.steps, scores[0])]
        else:
            y0 = G.predict(x)
            y, traj = refine(x, y0, D, icfg)
            trace = list(enumerate(traj.mean_scores()))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    write_tensor_file(out, y)
    trace_path = Path(args.trace) if args.trace else out.with_suffix(".trace.csv")
    with open(trace_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "mean_score"])
        for step, score in trace:
            w.writerow([step, repr(float(score))])
    print(f"wrote {out} and {trace_path}")
    return 0


def _input_shape(G):
    cfg = G.config
    if "feature_dim" in cfg:
        return (cfg["feature_dim"],)
    return None


def cmd_synth(args) -> int:
    try:
        ds = gen_synthetic_multilabel(args.n, args.d, args.labels, args.intervals, args.noise, args.seed,
                                      max_len=args.max_len)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    manifest = write_synthetic(args.out, ds)
    print(f"wrote {len(ds.features)} examples ({ds.feature_dim} features, {ds.label_dim} labels) to {manifest}")
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if not path.exists():
        raise UsageError(f"not found: {path}")
    if path.is_dir():
        G, D, meta = _load_ckpt(path)
        print(f"checkpoint {path} (task={meta.get('task')}, epoch={meta.get('epoch')})")
        for label, model in (("G", G), ("D", D)):
            print(f"{label}: {model.kind} {model.config}")
            for name, p in model.params.items():
                print(f"  {name:16s} {tuple(p.shape)}")
        if meta.get("raw_threshold") is not None:
            print(f"thresholds raw={meta['raw_threshold']} refined={meta['refined_threshold']}")
        return 0
    if path.suffix == ".csv":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        print(f"{path}: {len(rows)} rows, columns {list(rows[0]) if rows else []}")
        if rows and "mean_score" in rows[0]:
            s = [float(r["mean_score"]) for r in rows]
            print(f"score first={s[0]:.6f} last={s[-1]:.6f} max={max(s):.6f} at step {int(np.argmax(s))}")
        elif rows and "refined_score" in rows[0]:
            best = max(rows, key=lambda r: float(r["refined_score"]))
            print(f"best refined epoch {best['epoch']}: raw={float(best['raw_score']):.2f} "
                  f"refined={float(best['refined_score']):.2f} delta={float(best['delta']):.2f}")
        return 0
    arr = read_tensor_file(path)
    print(f"{path}: dtype={arr.dtype} shape={arr.shape} min={arr.min():.6g} max={arr.max():.6g} mean={arr.mean():.6g}")
    return 0


# ---------------------------------------------------------------------------


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes"):
        return True
    if low in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldrsp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a key=value config file; any config key may be overridden "
                                     "with --key VALUE")
    p.add_argument("config")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    def inference_flags(q):
        q.add_argument("--eta", type=float)
        q.add_argument("--steps", type=int)
        q.add_argument("--normalized", type=_bool, metavar="BOOL")

    p = sub.add_parser("eval", help="report raw and refined scores of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--manifest", help="dataset manifest (default: the one recorded in the checkpoint)")
    p.add_argument("--out", help="CSV output path (default: CHECKPOINT/eval_SPLIT.csv)")
    inference_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("refine", help="refine predictions for inputs stored in a TensorFile")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="per-step score CSV (default: OUT with .trace.csv suffix)")
    p.add_argument("--crops", type=int, default=0, help="segmentation: number of averaged crops (e.g. 36)")
    inference_flags(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("synth", help="generate the synthetic interval multi-label dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=SYNTHETIC_DEFAULTS["n"])
    p.add_argument("--d", type=int, default=SYNTHETIC_DEFAULTS["d"])
    p.add_argument("--labels", type=int, default=SYNTHETIC_DEFAULTS["m"])
    p.add_argument("--intervals", type=int, default=SYNTHETIC_DEFAULTS["k_intervals"])
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--noise", type=float, default=SYNTHETIC_DEFAULTS["noise"])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect", help="summarize a checkpoint, TensorFile, trace or metrics CSV")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("command failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
