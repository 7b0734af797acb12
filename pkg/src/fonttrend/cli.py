"""``fonttrend`` command line.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import evaluation as ev
from . import plotting
from .config import ConfigError, RunConfig
from .data import DataError, DatasetManifest, SyntheticSpec, build_manifest, generate_synthetic, proportional_splits
from .pipeline import codebook_path, extract_all, fit_codebook
from .runs import GRID_CSV, evaluate_run, load_run, run_grid, train_run
from .trainer import History

log = logging.getLogger("fonttrend")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

# data fields are taken from the manifest rather than from flags
_DATA_FIELDS = ("base_year", "span", "quota", "split_counts")
_CONFIG_FLAGS = [f.name for f in fields(RunConfig) if f.name not in _DATA_FIELDS]


def _int_list(text: str) -> list[int]:
    """``1932,1950`` or ``1932:2016`` or ``1932:2016:12`` (inclusive stop)."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            bits = [int(b) for b in part.split(":")]
            start, stop = bits[0], bits[1]
            step = bits[2] if len(bits) > 2 else 1
            out.extend(range(start, stop + 1, step))
        else:
            out.append(int(part))
    return out


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (defaults: the full-scale setup)")
    g.add_argument("--config", type=Path, help="flat key = value config file; flags override it")
    for name in _CONFIG_FLAGS:
        flag = "--" + name.replace("_", "-")
        extra = ["--lr"] if name == "learning_rate" else []
        g.add_argument(flag, *extra, dest=name, default=None, metavar=name.upper())


def _config_from_args(args, manifest: DatasetManifest | None = None) -> RunConfig:
    base = RunConfig.read(args.config) if getattr(args, "config", None) else None
    given = {n: getattr(args, n) for n in _CONFIG_FLAGS if getattr(args, n, None) is not None}
    if manifest is not None:
        given.update(
            base_year=manifest.base_year, span=manifest.span, quota=manifest.quota, split_counts=manifest.split_counts
        )
    return RunConfig.from_mapping(given, base)


def _read_manifest(path: Path) -> DatasetManifest:
    if not path.exists():
        raise DataError(f"manifest {path} does not exist (run `fonttrend prepare` first)")
    return DatasetManifest.read(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    years = _int_list(args.years)
    if not years:
        raise ConfigError("--years selects no years")
    spec = SyntheticSpec(height=args.height, width=args.width)
    recs = generate_synthetic(args.out, args.n_per_year, years, args.outlier_rate, args.seed, spec)
    n_out = sum(r.is_outlier for r in recs)
    print(f"wrote {len(recs)} images ({n_out} style outliers) over {len(years)} years to {args.out}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    quota = args.quota
    splits = tuple(_int_list(args.splits)) if args.splits else proportional_splits(quota)
    expected = _int_list(args.expect_years) if args.expect_years else None
    manifest = build_manifest(args.root, args.seed, quota, splits, args.base_year, args.span, expected)
    out = args.out or Path(args.root) / "manifest.csv"
    checksum = manifest.write(out)
    counts = manifest.counts()
    print(f"manifest {out}  years={len(manifest.years)}  checksum={checksum[:16]}")
    for name in ("TRAIN", "VAL", "TEST"):
        print(f"  {name:<5s} {counts[name]}")
    return EXIT_OK


def cmd_extract_features(args) -> int:
    manifest = _read_manifest(args.manifest)
    config = _config_from_args(args, manifest)
    descs = extract_all(manifest, config, args.workdir)
    n = np.array([len(d) for d in descs.values()])
    print(f"descriptors for {len(n)} images: total {n.sum()}, min {n.min()}, max {n.max()}, empty {int((n == 0).sum())}")
    return EXIT_OK


def cmd_fit_codebook(args) -> int:
    manifest = _read_manifest(args.manifest)
    config = _config_from_args(args, manifest)
    book = fit_codebook(manifest, config, args.workdir, refit=args.refit)
    print(f"codebook {codebook_path(manifest, config, args.workdir)}  k={book.k} inertia={book.inertia:.6g}")
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = _read_manifest(args.manifest)
    config = _config_from_args(args, manifest)
    out = train_run(config, args.manifest, args.workdir, args.checkpoint_every, args.stop_after)
    if out.history is not None and len(out.history):
        last = out.history.records[-1]
        print(f"epoch {last.epoch}/{config.epochs}  phase {last.phase}  val_mae {last.val_mae:.4f}")
    if out.resumed_from:
        print(f"resumed from epoch {out.resumed_from}")
    print(out.run_dir)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    rep = evaluate_run(args.run_dir, args.split)
    print(ev.table_row(rep.method, rep.loss, rep.mae, rep.r2, rep.corr))
    return EXIT_OK


def cmd_grid(args) -> int:
    manifest = _read_manifest(args.manifest)
    base = _config_from_args(args, manifest)
    rows = run_grid(base, args.manifest, args.workdir, args.jobs, args.checkpoint_every)
    for r in rows:
        line = ev.table_row(r.method, r.loss, r.mae, r.r2, r.corr)
        print(line + (f"  FAILED: {r.error}" if r.error else ""))
    print(Path(args.workdir) / GRID_CSV)
    failed = sum(bool(r.error) for r in rows)
    if failed:
        print(f"{failed} of {len(rows)} runs failed (see grid_failures.csv)", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    written: list[Path] = []
    for run_dir in args.run_dir or []:
        written += report_run(run_dir)
    if args.grid_dir is not None:
        grid = Path(args.grid_dir) / GRID_CSV
        if not grid.exists():
            raise DataError(f"{grid} not found (run `fonttrend grid` first)")
        written.append(plotting.plot_grid(ev.read_metrics_csv(grid), Path(args.grid_dir) / "grid_mae.png"))
    if args.loss_shapes is not None:
        written.append(plotting.plot_loss_shapes(args.loss_shapes))
    if not written:
        raise ConfigError("nothing to report: give --run-dir, --grid-dir or --loss-shapes")
    for p in written:
        print(p)
    return EXIT_OK


def report_run(run_dir: Path) -> list[Path]:
    config, manifest, _ = load_run(run_dir)
    report_dir = Path(run_dir) / "report"
    if not (report_dir / "confusion.csv").exists():
        evaluate_run(run_dir)
    title = f"{config.method} / {config.loss}"
    out = [
        plotting.plot_confusion(
            ev.read_confusion_csv(report_dir / "confusion.csv"),
            ev.decade_labels(manifest.base_year, manifest.span),
            report_dir / "confusion.png",
            title,
        )
    ]
    hist = Path(run_dir) / "history.csv"
    if hist.exists():
        out.append(plotting.plot_history(History.read_csv(hist), report_dir / "history.png", title))
    return out


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fonttrend", description="Estimate release years from title typography.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic <root>/<year>/ dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--years", required=True, help="e.g. 1932:2016:12 or 1932,1960,2016")
    p.add_argument("--n-per-year", type=int, required=True)
    p.add_argument("--outlier-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=64)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="sample and split a <root>/<year>/ tree into a manifest")
    p.add_argument("--root", type=Path, required=True)
    p.add_argument("--out", type=Path, help="manifest path (default <root>/manifest.csv)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quota", type=int, default=56)
    p.add_argument("--splits", help="train,val,test counts (default proportional to 20,8,28)")
    p.add_argument("--expect-years", help="years that must be present, e.g. 1932:2016")
    p.add_argument("--base-year", type=int, default=1932)
    p.add_argument("--span", type=int, default=84)
    p.set_defaults(func=cmd_prepare)

    for name, func, helptext in (
        ("extract-features", cmd_extract_features, "compute and cache keypoint descriptors"),
        ("fit-codebook", cmd_fit_codebook, "fit the k-means codebook on the train split"),
        ("train", cmd_train, "train one run (resumes from state.ckpt)"),
        ("grid", cmd_grid, "run all 12 method x loss combinations plus both baselines"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--manifest", type=Path, required=True)
        p.add_argument("--workdir", type=Path, required=True)
        _add_config_flags(p)
        if name == "fit-codebook":
            p.add_argument("--refit", action="store_true")
        if name in ("train", "grid"):
            p.add_argument("--checkpoint-every", type=int, default=25)
        if name == "train":
            p.add_argument("--stop-after", type=int, help="stop after this epoch (state is saved)")
        if name == "grid":
            p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="score a trained run and write report CSVs")
    p.add_argument("--run-dir", type=Path, required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render figures next to the report CSVs")
    p.add_argument("--run-dir", type=Path, action="append")
    p.add_argument("--grid-dir", type=Path)
    p.add_argument("--loss-shapes", type=Path, metavar="PNG", help="also plot the four loss curves")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
