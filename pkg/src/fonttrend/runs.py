"""Run directories: train (resumable), evaluate, and the full method x loss grid.

Layout of ``<workdir>/runs/<METHOD>-<LOSS>-<hash12>/``::

    config.txt      the full RunConfig; re-hashing it reproduces the name
    run.txt         manifest reference (path relative to the run dir, checksum)
    state.ckpt      resumable trainer state (neural methods)
    model.ckpt      final predictor (best validation MAE weights, or baseline)
    history.csv     per-epoch losses and phase
    report/         metrics.csv, confusion.csv, residuals.csv, predictions.csv
"""

from __future__ import annotations

import csv
import logging
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .config import BASELINES, LOSSES, NEURAL_METHODS, NO_LOSS, Method, RunConfig
from .data import DatasetManifest
from .models import load_checkpoint, load_model, save_checkpoint, save_model
from .pipeline import build_dataset, build_network, fit_codebook
from .trainer import Dataset, History, Trainer

log = logging.getLogger(__name__)

RUNS = "runs"
GRID_CSV = "grid.csv"
GRID_FAILURES = "grid_failures.csv"


class RunError(RuntimeError):
    """A run directory is missing pieces or is inconsistent."""


def run_dir_for(workdir: str | Path, config: RunConfig) -> Path:
    return Path(workdir) / RUNS / config.run_name()


def _write_run_ref(run_dir: Path, manifest_path: Path, manifest: DatasetManifest) -> None:
    rel = Path(os.path.relpath(manifest_path.resolve(), run_dir.resolve())).as_posix()
    (run_dir / "run.txt").write_text(f"manifest = {rel}\nmanifest_checksum = {manifest.checksum()}\n")


def _read_run_ref(run_dir: Path) -> dict[str, str]:
    ref = run_dir / "run.txt"
    if not ref.exists():
        raise RunError(f"{run_dir}: no run.txt (not a run directory?)")
    out = {}
    for line in ref.read_text().splitlines():
        if "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            out[k] = v
    return out


def load_run(run_dir: str | Path) -> tuple[RunConfig, DatasetManifest, Path]:
    """Config, manifest and workdir of a run; verifies name and manifest checksum."""
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.txt"
    if not cfg_path.exists():
        raise RunError(f"{run_dir}: missing config.txt")
    config = RunConfig.read(cfg_path)
    if config.run_name() != run_dir.name:
        raise RunError(f"{run_dir}: directory name does not match config hash ({config.run_name()})")
    ref = _read_run_ref(run_dir)
    manifest = DatasetManifest.read(run_dir / ref["manifest"])
    if manifest.checksum() != ref.get("manifest_checksum"):
        raise RunError(f"{run_dir}: manifest changed since the run was created")
    return config, manifest, run_dir.parent.parent


def _prepare_run_dir(config: RunConfig, manifest_path: Path, manifest: DatasetManifest, workdir: Path) -> Path:
    run_dir = run_dir_for(workdir, config)
    run_dir.mkdir(parents=True, exist_ok=True)
    config.write(run_dir / "config.txt")
    _write_run_ref(run_dir, manifest_path, manifest)
    return run_dir


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainOutcome:
    run_dir: Path
    epochs_done: int
    resumed_from: int
    history: History | None


def _fit_baseline(config: RunConfig, data: Dataset, run_dir: Path) -> None:
    meta = {"method": config.method, "loss": config.loss, "config_hash": config.hash()}
    if config.method_enum is Method.CONSTANT:
        base = ev.ConstantBaseline(data.train.targets)
        spec = {"name": "constant"}
        arrays = {"value": np.array([base.value])}
    else:
        x = np.stack(data.train.inputs)
        base = ev.LinearBaseline(x, data.train.targets)
        spec = {"name": "linear", "lambda": ev.RIDGE_LAMBDA}
        arrays = {"coef": base.coef, "intercept": np.array([base.intercept])}
    save_checkpoint(run_dir / "model.ckpt", spec, arrays, meta)


def train_run(
    config: RunConfig,
    manifest_path: str | Path,
    workdir: str | Path,
    checkpoint_every: int = 25,
    stop_after: int | None = None,
) -> TrainOutcome:
    """Train (or resume) the run for ``config``; returns where it lives.

    ``stop_after`` halts after that epoch with state saved, as if interrupted.
    """
    manifest_path = Path(manifest_path)
    workdir = Path(workdir)
    manifest = DatasetManifest.read(manifest_path)
    run_dir = _prepare_run_dir(config, manifest_path, manifest, workdir)
    data = build_dataset(manifest, config, workdir)
    if config.method_enum in BASELINES:
        _fit_baseline(config, data, run_dir)
        return TrainOutcome(run_dir, 0, 0, None)

    trainer = Trainer(build_network(config), data, config.train_config())
    state = run_dir / "state.ckpt"
    if state.exists():
        trainer.load_state(state)
    resumed_from = trainer.epoch
    if resumed_from >= config.epochs and (run_dir / "model.ckpt").exists():
        return TrainOutcome(run_dir, trainer.epoch, resumed_from, trainer.history)

    def on_epoch(tr: Trainer, rec) -> None:
        if checkpoint_every > 0 and tr.epoch % checkpoint_every == 0 and tr.epoch < config.epochs:
            tr.save_state(state)

    result = trainer.fit(stop_after=stop_after, on_epoch=on_epoch)
    trainer.save_state(state)
    trainer.history.write_csv(run_dir / "history.csv")
    if result.epochs_done >= config.epochs:
        ctrl = result.controller
        meta = {
            "method": config.method,
            "loss": config.loss,
            "config_hash": config.hash(),
            "best_epoch": result.best_epoch,
            "best_val_mae": result.best_val_mae,
            "switch_epoch": ctrl.switch_epoch_actual if ctrl else None,
        }
        save_model(run_dir / "model.ckpt", result.model, meta)
    return TrainOutcome(run_dir, result.epochs_done, resumed_from, trainer.history)


# ---------------------------------------------------------------------------
# evaluation


def predict_split(run_dir: Path, config: RunConfig, data: Dataset, split: str = "test") -> np.ndarray:
    ckpt = run_dir / "model.ckpt"
    if not ckpt.exists():
        raise RunError(f"{run_dir}: no model.ckpt (train the run to completion first)")
    target = data.split(split)
    if config.method_enum in NEURAL_METHODS:
        model, _ = load_model(ckpt)
        return model.predict_many(target.inputs)
    spec, arrays, _ = load_checkpoint(ckpt)
    if spec["name"] == "constant":
        return np.full(len(target), float(arrays["value"][0]))
    x = np.stack(target.inputs)
    return x @ arrays["coef"] + float(arrays["intercept"][0])


def evaluate_run(run_dir: str | Path, split: str = "test") -> ev.EvalReport:
    """Score a finished run on ``split`` and write its report CSVs."""
    run_dir = Path(run_dir)
    config, manifest, workdir = load_run(run_dir)
    if not (run_dir / "model.ckpt").exists():
        raise RunError(f"{run_dir}: no model.ckpt (train the run to completion first)")
    data = build_dataset(manifest, config, workdir)
    preds = predict_split(run_dir, config, data, split)
    target = data.split(split)
    report = ev.make_report(
        target.ids, preds, target.targets, config.method, config.loss, manifest.base_year, manifest.span
    )
    ev.write_report(report, run_dir / "report")
    return report


# ---------------------------------------------------------------------------
# grid


def grid_configs(base: RunConfig) -> list[RunConfig]:
    """The 12 method x loss runs followed by the two baselines."""
    out = [base.replace(method=m.value, loss=loss) for m in NEURAL_METHODS for loss in LOSSES]
    out += [base.replace(method=m.value, loss=NO_LOSS) for m in BASELINES]
    return out


@dataclass
class GridRow:
    method: str
    loss: str
    mae: float
    r2: float
    corr: float
    run_dir: str
    error: str = ""

    def metrics(self) -> dict:
        return {"method": self.method, "loss": self.loss, "mae": self.mae, "r2": self.r2, "corr": self.corr}


def _grid_job(args) -> GridRow:
    config, manifest_path, workdir, checkpoint_every = args
    try:
        outcome = train_run(config, manifest_path, workdir, checkpoint_every)
        rep = evaluate_run(outcome.run_dir)
        return GridRow(config.method, config.loss, rep.mae, rep.r2, rep.corr, str(outcome.run_dir))
    except Exception as exc:  # recorded, the grid carries on
        log.error("grid run %s/%s failed: %s", config.method, config.loss, exc)
        log.debug("%s", traceback.format_exc())
        nan = math.nan
        return GridRow(config.method, config.loss, nan, nan, nan, "", f"{type(exc).__name__}: {exc}")


def run_grid(
    base: RunConfig,
    manifest_path: str | Path,
    workdir: str | Path,
    jobs: int = 1,
    checkpoint_every: int = 25,
) -> list[GridRow]:
    """Run all 14 rows (process-parallel when ``jobs > 1``) and write grid.csv."""
    workdir = Path(workdir)
    configs = grid_configs(base)
    manifest = DatasetManifest.read(manifest_path)
    # the codebook is shared by FEATURE and LINEAR rows; fit it once up front
    try:
        fit_codebook(manifest, configs[-2], workdir)
    except Exception as exc:
        log.error("codebook fit failed: %s", exc)
    tasks = [(c, Path(manifest_path), workdir, checkpoint_every) for c in configs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_grid_job, tasks))
    else:
        rows = [_grid_job(t) for t in tasks]
    write_grid(rows, workdir)
    return rows


def write_grid(rows: list[GridRow], workdir: str | Path) -> Path:
    workdir = Path(workdir)
    path = workdir / GRID_CSV
    path.write_text(ev.metrics_csv([r.metrics() for r in rows]))
    failures = [r for r in rows if r.error]
    fail_path = workdir / GRID_FAILURES
    if failures:
        with open(fail_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "loss", "error"])
            w.writerows([r.method, r.loss, r.error] for r in failures)
    elif fail_path.exists():
        fail_path.unlink()
    return path
