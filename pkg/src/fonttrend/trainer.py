"""Training loop with the automatic MSE -> Tukey loss switch.

The switch controller watches the validation loss. Once it has not improved
for ``patience`` epochs the network output is considered stable, and after a
further ``switch_delay`` epochs training moves to Tukey's biweight loss. A
deadline epoch forces the switch if stability is never reached.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import losses
from .losses import LossKind, LossSpec
from .models import Sequential, load_checkpoint, save_checkpoint
from .nn.optim import Adam
from .nn.tensor import no_grad


class Phase(str, enum.Enum):
    MSE_PHASE = "MSE_PHASE"
    TUKEY_PHASE = "TUKEY_PHASE"


class Regimen(str, enum.Enum):
    L1 = "L1"
    MSE = "MSE"
    TUKEY = "TUKEY"
    MSE_TUKEY = "MSE_TUKEY"


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


@dataclass
class SwitchController:
    """Decides when the hybrid regimen leaves the MSE phase.

    ``patience`` or ``forced_switch_epoch`` set to None disables that trigger.
    After the switch the best-loss tracking restarts, since MSE and Tukey
    values are not comparable.
    """

    patience: int | None = 50
    forced_switch_epoch: int | None = 450
    switch_delay: int = 0
    phase: Phase = Phase.MSE_PHASE
    best_val_loss: float = math.inf
    epochs_since_improvement: int = 0
    stable_epoch: int | None = None
    switch_epoch_actual: int | None = None
    last_epoch: int | None = None

    def __post_init__(self):
        self.phase = Phase(self.phase)
        if self.patience is not None and self.patience <= 0:
            raise ValueError("patience must be positive")
        if self.forced_switch_epoch is not None and self.forced_switch_epoch <= 0:
            raise ValueError("forced_switch_epoch must be positive")
        if self.switch_delay < 0:
            raise ValueError("switch_delay must be non-negative")

    def observe_epoch(self, epoch: int, val_loss: float) -> "SwitchController":
        if self.last_epoch is not None and epoch <= self.last_epoch:
            raise ValueError(f"epochs must increase: got {epoch} after {self.last_epoch}")
        self.last_epoch = epoch

        if val_loss < self.best_val_loss:
            self.best_val_loss = val_loss
            self.epochs_since_improvement = 0
        else:
            self.epochs_since_improvement += 1

        if self.phase is Phase.TUKEY_PHASE:
            return self

        if (
            self.stable_epoch is None
            and self.patience is not None
            and self.epochs_since_improvement >= self.patience
        ):
            self.stable_epoch = epoch

        stable_due = self.stable_epoch is not None and epoch >= self.stable_epoch + self.switch_delay
        forced_due = self.forced_switch_epoch is not None and epoch >= self.forced_switch_epoch
        if stable_due or forced_due:
            self.phase = Phase.TUKEY_PHASE
            self.switch_epoch_actual = epoch
            self.best_val_loss = math.inf
            self.epochs_since_improvement = 0
        return self

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["phase"] = self.phase.value
        d["best_val_loss"] = None if math.isinf(self.best_val_loss) else self.best_val_loss
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SwitchController":
        d = dict(d)
        if d.get("best_val_loss") is None:
            d["best_val_loss"] = math.inf
        return cls(**d)


def observe_epoch(ctrl: SwitchController, epoch: int, val_loss: float) -> SwitchController:
    return ctrl.observe_epoch(epoch, val_loss)


@dataclass
class TrainConfig:
    epochs: int = 3000
    batch_size: int = 128
    learning_rate: float = 1e-4
    regimen: Regimen = Regimen.MSE_TUKEY
    tukey_c: float = losses.TUKEY_C
    huber_delta: float = 1.0
    mad_scaling: bool = True
    patience: int | None = 50
    forced_switch_epoch: int | None = 450
    switch_delay: int = 0
    seed: int = 0
    reset_optimizer_on_switch: bool = True

    def __post_init__(self):
        self.regimen = Regimen(self.regimen)
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if (
            self.regimen is Regimen.MSE_TUKEY
            and self.forced_switch_epoch is not None
            and self.epochs < self.forced_switch_epoch
        ):
            raise ValueError(
                f"epochs ({self.epochs}) must be >= forced_switch_epoch ({self.forced_switch_epoch}) "
                "when loss switching is enabled"
            )

    def loss_for(self, phase: Phase) -> LossSpec:
        kind = {
            Regimen.L1: LossKind.L1,
            Regimen.MSE: LossKind.MSE,
            Regimen.TUKEY: LossKind.TUKEY,
        }.get(self.regimen)
        if kind is None:
            kind = LossKind.MSE if phase is Phase.MSE_PHASE else LossKind.TUKEY
        return LossSpec(kind, tukey_c=self.tukey_c, huber_delta=self.huber_delta, mad_scaling=self.mad_scaling)

    def controller(self) -> SwitchController | None:
        if self.regimen is not Regimen.MSE_TUKEY:
            return None
        return SwitchController(self.patience, self.forced_switch_epoch, self.switch_delay)


@dataclass
class SplitData:
    """Model inputs (images or vectors) with normalized-year targets."""

    inputs: list[np.ndarray]
    targets: np.ndarray
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if len(self.inputs) != self.targets.size:
            raise ValueError(f"{len(self.inputs)} inputs but {self.targets.size} targets")
        if not self.ids:
            self.ids = [str(i) for i in range(len(self.inputs))]

    def __len__(self) -> int:
        return len(self.inputs)


@dataclass
class Dataset:
    train: SplitData
    val: SplitData
    test: SplitData | None = None

    def split(self, name: str) -> SplitData:
        s = getattr(self, name.lower(), None)
        if s is None:
            raise ValueError(f"dataset has no {name!r} split")
        return s


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    train_loss: float
    val_loss: float
    val_mae: float


HISTORY_COLUMNS = ("epoch", "phase", "train_loss", "val_loss", "val_mae")


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, rec: EpochRecord) -> None:
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def phases(self) -> list[str]:
        return [r.phase for r in self.records]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in self.records:
            w.writerow([r.epoch, r.phase, repr(r.train_loss), repr(r.val_loss), repr(r.val_mae)])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path: str | Path) -> "History":
        h = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                h.append(
                    EpochRecord(
                        int(row["epoch"]),
                        row["phase"],
                        float(row["train_loss"]),
                        float(row["val_loss"]),
                        float(row["val_mae"]),
                    )
                )
        return h


@dataclass
class TrainResult:
    model: Sequential
    history: History
    best_epoch: int
    best_val_mae: float
    best_params: list[np.ndarray]
    phase_best: dict[str, tuple[int, float, list[np.ndarray]]]
    controller: SwitchController | None
    epochs_done: int


def evaluate_split(model: Sequential, split: SplitData, loss_spec: LossSpec) -> float:
    """Mean loss over a split, dropout off."""
    if len(split) == 0:
        raise ValueError("cannot evaluate an empty split")
    preds = model.predict_many(split.inputs)
    return losses.loss_value(loss_spec, preds, split.targets)


def _rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    shuffle_ss, dropout_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(shuffle_ss), np.random.default_rng(dropout_ss)


class Trainer:
    """Owns one model and runs (or resumes) a training session."""

    def __init__(self, model: Sequential, data: Dataset, config: TrainConfig):
        if len(data.train) == 0 or len(data.val) == 0:
            raise ValueError("training needs non-empty train and validation splits")
        self.model = model
        self.data = data
        self.config = config
        self.optimizer = Adam(model.params(), lr=config.learning_rate)
        self.shuffle_rng, self.dropout_rng = _rngs(config.seed)
        self.controller = config.controller()
        self.history = History()
        self.epoch = 0
        self.best_val_mae = math.inf
        self.best_epoch = 0
        self.best_params = model.get_flat()
        self.phase_best: dict[str, tuple[int, float, list[np.ndarray]]] = {}

    @property
    def phase(self) -> Phase:
        return self.controller.phase if self.controller is not None else Phase.MSE_PHASE

    def _phase_label(self) -> str:
        if self.config.regimen is Regimen.MSE_TUKEY:
            return self.phase.value
        return self.config.regimen.value

    def run_epoch(self) -> EpochRecord:
        cfg = self.config
        epoch = self.epoch + 1
        spec = cfg.loss_for(self.phase)
        label = self._phase_label()
        train = self.data.train
        order = self.shuffle_rng.permutation(len(train))

        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            pred = self.model.forward_batch([train.inputs[i] for i in idx], training=True, rng=self.dropout_rng)
            if not np.all(np.isfinite(pred.data)):
                raise TrainingError(f"non-finite predictions at epoch {epoch}, batch {b}", epoch, b)
            loss = losses.loss_tensor(spec, pred, train.targets[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}", epoch, b)
            self.optimizer.zero_grad()
            loss.backward()
            try:
                self.optimizer.step()
            except FloatingPointError as exc:
                raise TrainingError(f"{exc} at epoch {epoch}, batch {b}", epoch, b) from exc
            total += value * len(idx)
            count += len(idx)

        val = self.data.val
        with no_grad():
            val_pred = self.model.predict_many(val.inputs)
        val_loss = losses.loss_value(spec, val_pred, val.targets)
        val_mae = float(np.mean(np.abs(val_pred - val.targets)))
        rec = EpochRecord(epoch, label, total / count, val_loss, val_mae)
        self.history.append(rec)

        if val_mae < self.best_val_mae:
            self.best_val_mae = val_mae
            self.best_epoch = epoch
            self.best_params = self.model.get_flat()
        best = self.phase_best.get(label)
        if best is None or val_loss < best[1]:
            self.phase_best[label] = (epoch, val_loss, self.model.get_flat())

        if self.controller is not None:
            before = self.controller.phase
            self.controller.observe_epoch(epoch, val_loss)
            # Tukey gradients are orders of magnitude smaller than MSE ones, so
            # stale second moments would stall the new phase
            if self.controller.phase is not before and self.config.reset_optimizer_on_switch:
                self.optimizer.reset()
        self.epoch = epoch
        return rec

    def fit(
        self,
        stop_after: int | None = None,
        on_epoch: Callable[["Trainer", EpochRecord], None] | None = None,
        restore_best: bool = True,
    ) -> TrainResult:
        """Train up to ``config.epochs`` (or until epoch ``stop_after``)."""
        last = self.config.epochs if stop_after is None else min(stop_after, self.config.epochs)
        while self.epoch < last:
            rec = self.run_epoch()
            if on_epoch is not None:
                on_epoch(self, rec)
        if restore_best and self.epoch == self.config.epochs:
            self.model.set_flat(self.best_params)
        return TrainResult(
            model=self.model,
            history=self.history,
            best_epoch=self.best_epoch,
            best_val_mae=self.best_val_mae,
            best_params=self.best_params,
            phase_best=self.phase_best,
            controller=self.controller,
            epochs_done=self.epoch,
        )

    # -- resumable state -----------------------------------------------------

    def save_state(self, path: str | Path) -> str:
        arrays: dict[str, np.ndarray] = {}
        for i, p in enumerate(self.model.params()):
            arrays[f"param.{i:03d}"] = p.data
            arrays[f"m1.{i:03d}"] = p.first_moment
            arrays[f"m2.{i:03d}"] = p.second_moment
        for i, a in enumerate(self.best_params):
            arrays[f"best.{i:03d}"] = a
        phase_meta = {}
        for label, (ep, loss, params) in self.phase_best.items():
            phase_meta[label] = {"epoch": ep, "val_loss": loss}
            for i, a in enumerate(params):
                arrays[f"phase.{label}.{i:03d}"] = a
        meta = {
            "epoch": self.epoch,
            "step_counts": [p.step_count for p in self.model.params()],
            "best_epoch": self.best_epoch,
            "best_val_mae": None if math.isinf(self.best_val_mae) else self.best_val_mae,
            "phase_best": phase_meta,
            "controller": self.controller.to_dict() if self.controller else None,
            "shuffle_rng": self.shuffle_rng.bit_generator.state,
            "dropout_rng": self.dropout_rng.bit_generator.state,
            "history": [asdict(r) for r in self.history.records],
            "config": _config_dict(self.config),
        }
        return save_checkpoint(path, self.model.spec(), arrays, meta)

    def load_state(self, path: str | Path) -> None:
        _, arrays, meta = load_checkpoint(path)
        params = self.model.params()
        n = len(params)
        self.model.set_flat(arrays[f"param.{i:03d}"] for i in range(n))
        for i, p in enumerate(params):
            p.first_moment[...] = arrays[f"m1.{i:03d}"]
            p.second_moment[...] = arrays[f"m2.{i:03d}"]
            p.step_count = meta["step_counts"][i]
        self.best_params = [arrays[f"best.{i:03d}"].copy() for i in range(n)]
        self.phase_best = {
            label: (d["epoch"], d["val_loss"], [arrays[f"phase.{label}.{i:03d}"].copy() for i in range(n)])
            for label, d in meta["phase_best"].items()
        }
        self.epoch = meta["epoch"]
        self.best_epoch = meta["best_epoch"]
        self.best_val_mae = math.inf if meta["best_val_mae"] is None else meta["best_val_mae"]
        self.controller = SwitchController.from_dict(meta["controller"]) if meta["controller"] else None
        self.shuffle_rng.bit_generator.state = meta["shuffle_rng"]
        self.dropout_rng.bit_generator.state = meta["dropout_rng"]
        self.history = History([EpochRecord(**r) for r in meta["history"]])


def _config_dict(cfg: TrainConfig) -> dict[str, Any]:
    d = asdict(cfg)
    d["regimen"] = cfg.regimen.value
    return d


def train(
    model: Sequential,
    data: Dataset,
    config: TrainConfig,
    **fit_kwargs,
) -> tuple[Sequential, History]:
    """Train ``model`` in place; returns it (best-val-MAE weights) and the history."""
    result = Trainer(model, data, config).fit(**fit_kwargs)
    return result.model, result.history

