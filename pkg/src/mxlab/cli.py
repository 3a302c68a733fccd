"""Command-line entry point: ``mxlab {gen,train,eval,check}``.

Exit codes: 0 success, 1 a check or training run failed, 2 bad config or
arguments, 3 missing or corrupted files.
"""

from __future__ import annotations

import os

# BLAS pools are sized when numpy loads, so cap them first.
if os.environ.get("MXL_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["MXL_THREADS"])

import argparse
import logging
import sys
import time
from pathlib import Path

from . import __version__

log = logging.getLogger("mxlab")

EXIT_FAIL, EXIT_CONFIG, EXIT_FILES = 1, 2, 3


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="key = value config file (overrides the preset)")
    p.add_argument("--seed", type=int, help="override train.seed, eval.seed and system.trace_seed")
    p.add_argument("--out-dir", type=Path, default=Path("mxl_out"), help="run directory (default: mxl_out)")
    p.add_argument("--desk-scale", action="store_true", help="start from the reduced-dimension preset")
    p.add_argument("--no-plots", action="store_true", help="skip SVG output")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    from .sweeps import SweepKind
    parser = argparse.ArgumentParser(prog="mxlab", description="Channel extrapolation laboratory.")
    parser.add_argument("--version", action="version", version=f"mxlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="simulate channel traces and write them with a manifest")
    _common(p)

    p = sub.add_parser("train", help="train networks on a generated dataset")
    p.add_argument("model", choices=["sfcen", "udccn", "dcen", "all"])
    _common(p)

    p = sub.add_parser("eval", help="run an evaluation sweep on the test traces")
    p.add_argument("kind", choices=[k.value for k in SweepKind])
    p.add_argument("--axis", help="comma-separated sweep points (default: built-in axis)")
    p.add_argument("--ignore-flags", action="store_true", help="exit 0 even if a threshold flag fails")
    _common(p)

    p = sub.add_parser("check", help="run the property suite")
    p.add_argument("--only", action="append", help="run just this check (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


# ---------------------------------------------------------------------------


def _write_run_manifest(path: Path, rc, command: str, files: dict):
    from .container import file_sha256, write_manifest
    entries = {"tool.version": __version__, "command": command,
               "created": time.strftime("%Y-%m-%dT%H:%M:%S"), **rc.as_manifest()}
    for name, p in sorted(files.items()):
        entries[f"file.{name}"] = file_sha256(p)
    write_manifest(path, entries)


def _verify_checkpoints(out: Path):
    """Compare checkpoints against the sums recorded at training time."""
    from .container import file_sha256, read_manifest
    from .pipeline import DatasetError
    mpath = out / "train_manifest.txt"
    if not mpath.is_file():
        return
    for key, digest in read_manifest(mpath).items():
        if key.startswith("file.checkpoints/"):
            path = out / key[len("file."):]
            if path.is_file() and file_sha256(path) != digest:
                raise DatasetError(f"checksum mismatch for {path}")


def cmd_gen(rc, args) -> int:
    from .pipeline import write_traces
    sysc = rc.system()
    log.info("generating %d traces of dims %s", rc["system.n_traces"],
             [sysc.n_subframes, sysc.n_slot, sysc.n_tx, sysc.n_rx, sysc.n_sc])
    path = write_traces(rc, args.out_dir)
    print(f"wrote {rc['system.n_traces']} traces and {path}")
    return 0


def cmd_train(rc, args) -> int:
    from . import pipeline as pl
    out = args.out_dir
    traces = pl.read_traces(rc, out)
    _verify_checkpoints(out)
    train, valid, _ = pl.split(rc, traces)
    ckpt, logs = out / "checkpoints", out / "logs"
    todo = ["sfcen", "udccn", "dcen"] if args.model == "all" else [args.model]

    if "sfcen" in todo:
        models, results = pl.train_sfcen_models(rc, train, valid)
        for key, net in models.items():
            tag = pl.sfcen_tag(*key)
            pl.save_model(net.store, ckpt / f"{tag}.ckpt")
            pl.write_loss_log(results[key], logs / f"{tag}_loss.csv")
            print(f"{tag}: best valid loss {results[key].best_valid:.4e} at epoch {results[key].best_epoch}")
    parts = [p for p in ("udccn", "dcen") if p in todo]
    if parts:
        needs_sfcen = rc["train.udccn_input"] == "sfcen"
        sfcen = pl.load_sfcen_models(rc, ckpt, [(rc["eval.r_s"], rc["eval.comb"])]) if needs_sfcen else {}
        model = None if "udccn" in parts else pl.load_tudcen(rc, ckpt)
        model, results = pl.train_tudcen_model(rc, train, valid, sfcen, model=model, parts=parts)
        pl.save_model(model.store, ckpt / "tudcen.ckpt")
        for part, res in results.items():
            pl.write_loss_log(res, logs / f"{part}_loss.csv")
            print(f"{part}: best valid NMSE {res.best_valid:.4e} at epoch {res.best_epoch}")
    files = {f"checkpoints/{p.name}": p for p in sorted(ckpt.glob("*.ckpt"))}
    _write_run_manifest(out / "train_manifest.txt", rc, f"train {args.model}", files)
    return 0


def cmd_eval(rc, args) -> int:
    from . import pipeline as pl
    from .config import ConfigError
    from .sweeps import acceptance_flags, plot_report, run_sweep
    out = args.out_dir
    axis = None
    if args.axis:
        try:
            axis = [float(a) if "." in a else int(a) for a in args.axis.split(",")]
        except ValueError:
            raise ConfigError(f"--axis expects comma-separated numbers, got {args.axis!r}") from None
    traces = pl.read_traces(rc, out)
    _verify_checkpoints(out)
    _, _, test = pl.split(rc, traces)
    ckpt = out / "checkpoints"
    sfcen = {}
    if ckpt.is_dir():
        n_sc = rc.system().n_sc
        patterns = {(rc["eval.r_s"], c) for c in (1, 2, 4, 8, 16) if n_sc % c == 0}
        patterns |= {(r, rc["eval.comb"]) for r in (1, 2, 4, 8) if rc["system.n_tx"] % r == 0}
        patterns |= set(rc.sfcen_patterns())
        sfcen = pl.load_sfcen_models(rc, ckpt, sorted(patterns), required=False)
    tudcen = pl.load_tudcen(rc, ckpt, required=False)
    report = run_sweep(args.kind, pl.eval_context(rc, test, sfcen, tudcen), axis)

    rep = out / "reports"
    rep.mkdir(parents=True, exist_ok=True)
    files = {f"reports/eval_{args.kind}.csv": rep / f"eval_{args.kind}.csv"}
    report.write_csv(files[f"reports/eval_{args.kind}.csv"])
    if not args.no_plots:
        plot_report(report, rep / f"eval_{args.kind}_nmse.svg")
        if report.sum_rate:
            plot_report(report, rep / f"eval_{args.kind}_rate.svg", metric="sum_rate")
    _write_run_manifest(out / f"eval_{args.kind}_manifest.txt", rc, f"eval {args.kind}", files)
    for note in report.notes:
        print(f"note: {note}")
    print(f"wrote {rep / f'eval_{args.kind}.csv'} ({report.runtime_s:.1f} s)")
    flags = acceptance_flags(report)
    for name, ok, detail in flags:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<22} {detail}")
    return EXIT_FAIL if any(not ok for _, ok, _ in flags) and not args.ignore_flags else 0


def cmd_check(args) -> int:
    from .checks import CHECKS, run_checks
    unknown = [n for n in args.only or [] if n not in CHECKS]
    if unknown:
        print(f"unknown check(s): {', '.join(unknown)}; available: {', '.join(CHECKS)}", file=sys.stderr)
        return EXIT_CONFIG
    results = run_checks(args.only)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<18} {detail}")
    n_fail = sum(not ok for _, ok, _ in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed")
    return EXIT_FAIL if n_fail else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    if args.command == "check":
        return cmd_check(args)

    from .config import ConfigError
    from .container import ContainerError
    from .pipeline import DatasetError
    from .runconfig import RunConfig
    from .training import TrainingDiverged
    try:
        rc = RunConfig.load(args.config, desk_scale=args.desk_scale, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FILES
    handler = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval}[args.command]
    try:
        return handler(rc, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, ContainerError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FILES
    except TrainingDiverged as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
