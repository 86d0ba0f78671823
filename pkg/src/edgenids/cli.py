"""``edgenids`` command line.

Exit codes: 0 success, 1 usage error (help printed), 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import DEFAULT_ROWS, emit_report, load_splits, measure_host_latency, read_results_csv, run_sweep
from .costmodel import FREE_PARAMS, SHIPPED_PROFILES, calibrate_profile, load_profile, save_profile
from .dataset import (
    INPUT_WIDTH, load_flow_csv, save_matrix, save_schema, split_table, stratified_sample, synth_flows,
)
from .engine import infer_batch
from .errors import EdgeNidsError, InvalidParam
from .gradcheck import DEFAULT_TOL, run_gradcheck
from .kvfile import read_kv
from .modelio import load_model, save_model
from .models import Network, build, parse_tag
from .quantizer import QuantizedModel, quantize_network, write_calibration_report
from .trainer import TrainConfig, evaluate, train, write_history

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
logger = logging.getLogger("edgenids")

_CONFIG_CASTS = {
    "epochs": int, "batch_size": int, "learning_rate": float, "optimizer": str, "momentum": float,
    "seed": int, "early_stop_patience": int, "dtype": str,
    "max_train_rows": lambda v: None if v.lower() in ("", "none") else int(v),
    "balanced": lambda v: v.lower() in ("1", "true", "yes"),
    "class_weights": lambda v: None if v.lower() in ("", "none") else tuple(float(x) for x in v.split(",")),
}
_RUN_KEYS = ("profiles", "data", "rows", "workers")


class UsageError(Exception):
    def __init__(self, parser: argparse.ArgumentParser, message: str):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(self, message)


def load_config(path: str | None) -> tuple[dict, dict]:
    """Split a config file into TrainConfig fields and run options."""
    if not path:
        return {}, {}
    kv = read_kv(path)
    train_kw, run = {}, {}
    for key, value in kv.items():
        if key in _CONFIG_CASTS:
            try:
                train_kw[key] = _CONFIG_CASTS[key](value)
            except ValueError:
                raise InvalidParam(f"{path}: bad value for {key}: {value!r}") from None
        elif key in _RUN_KEYS:
            run[key] = value
        else:
            raise InvalidParam(f"{path}: unknown key {key!r}")
    return train_kw, run


def _train_config(args) -> TrainConfig:
    kw = dict(args.train_kw)
    if args.seed is not None:
        kw["seed"] = args.seed
    for name in ("epochs", "batch_size", "learning_rate", "max_train_rows"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    return TrainConfig(**kw)


def _profiles(args):
    names = args.profile or []
    if not names and "profiles" in args.run:
        names = [p.strip() for p in args.run["profiles"].split(",") if p.strip()]
    return [load_profile(n) for n in (names or SHIPPED_PROFILES)]


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    return int(args.train_kw.get("seed", 0))


def _data(args) -> str:
    return getattr(args, "data", None) or args.run.get("data", "synth")


def _rows(args) -> int:
    return getattr(args, "rows", None) or int(args.run.get("rows", DEFAULT_ROWS))


def _splits(args):
    return load_splits(_data(args), _rows(args), _seed(args))


# -- subcommands -------------------------------------------------------------

def cmd_ingest(args) -> int:
    table = load_flow_csv(args.csv)
    if args.rows:
        table = stratified_sample(table, args.rows, _seed(args))
    schema, parts = split_table(table, seed=_seed(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_schema(schema, out / "schema.txt")
    for name, part in zip(("train", "val", "test"), parts):
        save_matrix(part, out / f"{name}.npz")
    print(f"wrote schema ({schema.width} columns) and splits "
          f"{'/'.join(str(len(p)) for p in parts)} to {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    m = synth_flows(args.rows, args.class_ratio, _seed(args))
    out = Path(args.out)
    if out.suffix == ".csv":
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"f{i}" for i in range(INPUT_WIDTH)] + ["label"])
            for row, y in zip(m.data, m.labels):
                w.writerow([repr(float(v)) for v in row] + [int(y)])
    else:
        save_matrix(m, out)
    print(f"wrote {len(m)} rows ({m.class_counts()[1]} malicious) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    tag = parse_tag(args.model)
    tr, va, te = _splits(args)
    cfg = _train_config(args)
    result = train(build(tag, cfg.seed), tr, va, cfg)
    save_model(result.net, args.out)
    if args.history:
        write_history(result.history, args.history)
    rep = evaluate(result.net, te)
    print(f"{tag}: best epoch {result.best_epoch}, val macro-F1 {result.best_val_f1:.4f}, "
          f"test macro-F1 {rep.macro_f1:.4f}")
    return EXIT_OK


def cmd_quantize(args) -> int:
    net = load_model(args.model)
    if not isinstance(net, Network):
        raise InvalidParam(f"{args.model} is already quantized")
    tr, _, te = _splits(args)
    q = quantize_network(net, tr, args.calib_rows)
    save_model(q, args.out)
    if args.report:
        write_calibration_report(q, args.report)
    from .engine import agreement
    print(f"quantized {net.tag}: {q.size_kib:.2f} KiB, agreement on test split {agreement(net, q, te):.4f}")
    return EXIT_OK


def _read_rows(path: str) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".npz":
        from .dataset import load_matrix
        return load_matrix(p).data
    with open(p, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    return np.array([[float(v) for v in r[:INPUT_WIDTH]] for r in rows], dtype=np.float64)


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def cmd_infer(args) -> int:
    q = load_model(args.model)
    if not isinstance(q, QuantizedModel):
        raise InvalidParam(f"{args.model} is not a quantized model")
    if args.row:
        rows = np.array([[float(v) for v in args.row.split(",")]])
    else:
        rows = _read_rows(args.input)
    labels, probs = infer_batch(q, rows)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["label", "p_benign", "p_malicious"])
        for y, p in zip(labels, probs):
            w.writerow([int(y), repr(float(p[0])), repr(float(p[1]))])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _train_config(args)
    train_models = not args.no_train
    data = _splits(args) if train_models else None
    workers = args.workers or int(args.run.get("workers", 1))

    def show(row):
        status = row.error or f"size {row.size_kib:.2f} KiB, macro-F1 {row.macro_f1:.4f}"
        print(f"{row.tag}: {status}", flush=True)

    rows = run_sweep(args.family, data, _profiles(args), cfg, args.out, train_models=train_models,
                     workers=workers, measure_reps=args.measure, save_models=args.save_models,
                     progress=show)
    emit_report(rows, args.out)
    failed = sum(not r.ok for r in rows)
    print(f"{len(rows)} rows, {failed} failed; results in {Path(args.out) / 'results.csv'}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = read_results_csv(args.results)
    for p in emit_report(rows, args.out, args.accelerator, args.cpu):
        print(p)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(args.configs, _seed(args))
    ok = True
    for kind in sorted({r.kind for r in results}):
        worst = max(r.max_rel_error for r in results if r.kind == kind)
        passed = worst < args.tol
        ok &= passed
        print(f"{kind:<11} max rel error {worst:.3e}  {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_calibrate(args) -> int:
    """Observation file: CSV with columns model,latency_s."""
    initial = _profiles(args)[0]
    obs = []
    with open(args.observations, newline="") as fh:
        for rec in csv.DictReader(fh):
            obs.append((parse_tag(rec["model"]), float(rec["latency_s"])))
    free = [p.strip() for p in args.free.split(",") if p.strip()] if args.free else []
    res = calibrate_profile(obs, initial, free)
    fitted = res.profile
    if args.name:
        fitted = fitted.replace(name=args.name)
    save_profile(fitted, args.out)
    for p in free:
        print(f"{p} = {fitted.get(p)!r}")
    print(f"max |relative residual| = {np.abs(res.residuals).max():.3e}")
    return EXIT_OK


def cmd_measure(args) -> int:
    q = load_model(args.model)
    if not isinstance(q, QuantizedModel):
        raise InvalidParam(f"{args.model} is not a quantized model")
    h = measure_host_latency(q, args.reps)
    print(f"median {h.median_ms:.4f} ms, IQR {h.iqr_ms:.4f} ms over {h.samples} warm runs")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("--config", default=argparse.SUPPRESS, help="key-value config file")
    common.add_argument("--profile", action="append", default=argparse.SUPPRESS,
                        help="platform profile name or file (repeatable)")

    parser = _Parser(prog="edgenids", parents=[common],
                     description="Intrusion-detection models for edge platforms: training, int8 "
                                 "inference, cost modelling and sweeps.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        p.set_defaults(func=func)
        return p

    def data_opts(p):
        p.add_argument("--data", help="'synth', a flow CSV or an encoded .npz (default synth)")
        p.add_argument("--rows", type=int, help=f"desk-scale row count (default {DEFAULT_ROWS})")

    def train_opts(p):
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--max-train-rows", dest="max_train_rows", type=int)

    p = add("ingest", cmd_ingest, "encode a flow CSV into schema + train/val/test matrices")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--rows", type=int, help="stratified subsample size")

    p = add("synth", cmd_synth, "generate the synthetic flow fixture (.npz or .csv)")
    p.add_argument("--rows", type=int, default=10_000)
    p.add_argument("--class-ratio", dest="class_ratio", type=float, default=0.5,
                   help="fraction of malicious rows")
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train one model and save it as an ENID file")
    p.add_argument("--model", required=True, help="family tag, e.g. ff(2) or cnn_small(16,3)")
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="write per-epoch history CSV here")
    data_opts(p)
    train_opts(p)

    p = add("quantize", cmd_quantize, "post-training int8 quantization of a float model")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="calibration report CSV")
    p.add_argument("--calib-rows", dest="calib_rows", type=int, default=1024)
    data_opts(p)

    p = add("infer", cmd_infer, "classify flow rows with a quantized model")
    p.add_argument("--model", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--row", help="comma-separated feature values")
    g.add_argument("--input", help="CSV or .npz of rows")
    p.add_argument("--out", help="prediction CSV (default stdout)")

    p = add("sweep", cmd_sweep, "sweep a model family and write results.csv plus plots")
    p.add_argument("--family", required=True, choices=("ff", "cnn_small", "cnn_deep"))
    p.add_argument("--out", required=True)
    p.add_argument("--no-train", dest="no_train", action="store_true",
                   help="cost estimates only (macro_f1 left as nan)")
    p.add_argument("--workers", type=int)
    p.add_argument("--measure", type=int, default=0, help="host timing repetitions per model")
    p.add_argument("--save-models", dest="save_models", action="store_true")
    data_opts(p)
    train_opts(p)

    p = add("report", cmd_report, "re-emit plots from a results.csv")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--accelerator", help="profile in the ratio numerator")
    p.add_argument("--cpu", help="profile in the ratio denominator")

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of every layer gradient")
    p.add_argument("--configs", type=int, default=50)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)

    p = add("calibrate", cmd_calibrate, "fit profile constants to measured latencies")
    p.add_argument("--observations", required=True, help="CSV with columns model,latency_s")
    p.add_argument("--free", help=f"comma list from {','.join(FREE_PARAMS)}")
    p.add_argument("--out", required=True)
    p.add_argument("--name", help="name of the fitted profile")

    p = add("measure", cmd_measure, "time single-row inference on this machine")
    p.add_argument("--model", required=True)
    p.add_argument("--reps", type=int, default=100)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        exc.parser.print_help(sys.stderr)
        print(f"\nerror: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not getattr(args, "command", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.seed = getattr(args, "seed", None)
    args.profile = getattr(args, "profile", None)
    try:
        args.train_kw, args.run = load_config(getattr(args, "config", None))
        return args.func(args)
    except (EdgeNidsError, OSError, ValueError) as exc:
        print(f"edgenids {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
