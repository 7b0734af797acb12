"""Metrics, baselines, decade confusion matrices and residual rankings."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg

from .data import BASE_YEAR, YEAR_SPAN

METRIC_COLUMNS = ("method", "loss", "mae", "r2", "corr")
DECADE = 10


def _pair(predictions, targets) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise ValueError("metrics of an empty set")
    if p.shape != t.shape:
        raise ValueError(f"predictions ({p.size}) and targets ({t.size}) differ in length")
    return p, t


def pearson(predictions, targets) -> float:
    """Pearson correlation; 0 when either side is constant."""
    p, t = _pair(predictions, targets)
    if np.ptp(p) == 0.0 or np.ptp(t) == 0.0:
        return 0.0
    dp, dt = p - p.mean(), t - t.mean()
    denom = math.sqrt(float(dp @ dp) * float(dt @ dt))
    if denom == 0.0:
        return 0.0
    return float(np.clip((dp @ dt) / denom, -1.0, 1.0))


def compute_metrics(predictions, targets) -> tuple[float, float, float]:
    """(MAE, R^2, Pearson r). R^2 is 0 when the targets are constant."""
    p, t = _pair(predictions, targets)
    mae = float(np.mean(np.abs(p - t)))
    ss_res = float(np.sum((t - p) ** 2))
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    r2 = 0.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return mae, r2, pearson(p, t)


def n_decades(span: int = YEAR_SPAN) -> int:
    return span // DECADE + 1


def decade_index(values, span: int = YEAR_SPAN) -> np.ndarray:
    """Bin normalized years into decades anchored at the base year.

    Values are clamped into [0, span] first (reporting-only clamp).
    """
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, span)
    return np.minimum(np.floor(v / DECADE).astype(int), n_decades(span) - 1)


def decade_confusion(predictions, targets, base_year: int = BASE_YEAR, span: int = YEAR_SPAN) -> np.ndarray:
    """Counts with rows = true decade, columns = predicted decade."""
    p, t = _pair(predictions, targets)
    k = n_decades(span)
    m = np.zeros((k, k), dtype=np.int64)
    np.add.at(m, (decade_index(t, span), decade_index(p, span)), 1)
    return m


def decade_labels(base_year: int = BASE_YEAR, span: int = YEAR_SPAN) -> list[str]:
    out = []
    for i in range(n_decades(span)):
        lo = base_year + DECADE * i
        out.append(f"{lo}-{min(lo + DECADE - 1, base_year + span)}")
    return out


def column_entropy(confusion: np.ndarray) -> float:
    """Shannon entropy (nats) of the predicted-decade distribution."""
    col = np.asarray(confusion, dtype=np.float64).sum(axis=0)
    total = col.sum()
    if total == 0:
        return 0.0
    q = col[col > 0] / total
    return float(-(q * np.log(q)).sum())


@dataclass
class SampleResult:
    id: str
    target: float
    prediction: float

    @property
    def residual(self) -> float:
        return self.prediction - self.target


@dataclass
class EvalReport:
    mae: float
    r2: float
    corr: float
    per_sample: list[SampleResult]
    confusion: np.ndarray
    method: str = ""
    loss: str = ""
    base_year: int = BASE_YEAR
    span: int = YEAR_SPAN
    extra: dict = field(default_factory=dict)

    def row(self) -> dict[str, object]:
        return {"method": self.method, "loss": self.loss, "mae": self.mae, "r2": self.r2, "corr": self.corr}


def make_report(
    ids: Sequence[str],
    predictions,
    targets,
    method: str = "",
    loss: str = "",
    base_year: int = BASE_YEAR,
    span: int = YEAR_SPAN,
) -> EvalReport:
    p, t = _pair(predictions, targets)
    mae, r2, corr = compute_metrics(p, t)
    rows = [SampleResult(str(i), float(a), float(b)) for i, a, b in zip(ids, t, p)]
    return EvalReport(mae, r2, corr, rows, decade_confusion(p, t, base_year, span), method, loss, base_year, span)


@dataclass
class Ranking:
    smallest_by_decade: dict[int, list[SampleResult]]
    largest: list[SampleResult]


def residual_ranking(report: EvalReport, per_decade_k: int = 4, largest_k: int = 10) -> Ranking:
    """Per true decade, the ``per_decade_k`` smallest |residual| samples, and
    the ``largest_k`` largest |residual| samples overall. Ties keep input order."""
    if not report.per_sample:
        raise ValueError("residual ranking of an empty report")
    decades = decade_index([s.target for s in report.per_sample], report.span)
    by_decade: dict[int, list[SampleResult]] = {}
    for s, d in zip(report.per_sample, decades):
        by_decade.setdefault(int(d), []).append(s)
    smallest = {
        d: sorted(items, key=lambda s: abs(s.residual))[:per_decade_k] for d, items in sorted(by_decade.items())
    }
    largest = sorted(report.per_sample, key=lambda s: -abs(s.residual))[:largest_k]
    return Ranking(smallest, largest)


# ---------------------------------------------------------------------------
# baselines


class ConstantBaseline:
    """Predicts the mean training target for every input."""

    def __init__(self, train_targets):
        t = np.asarray(train_targets, dtype=np.float64).reshape(-1)
        if t.size == 0:
            raise ValueError("constant baseline needs at least one training target")
        self.value = float(t.mean())

    def predict(self, n_or_inputs) -> np.ndarray:
        n = n_or_inputs if isinstance(n_or_inputs, int) else len(n_or_inputs)
        return np.full(n, self.value)


def constant_baseline(train_targets) -> ConstantBaseline:
    return ConstantBaseline(train_targets)


RIDGE_LAMBDA = 1e-6


class LinearBaseline:
    """Ridge least squares with an unpenalized intercept.

    Solves ``(Xc^T Xc + lam I) w = Xc^T yc`` on centred data by Cholesky.
    The ridge is only added when the plain Gram matrix is ill-conditioned, so
    well-posed systems are solved exactly.
    """

    RCOND = 1e-10

    def __init__(self, x, y, lam: float = RIDGE_LAMBDA):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] < 1:
            raise ValueError("linear baseline needs at least one training row")
        if x.shape[0] != y.size:
            raise ValueError(f"{x.shape[0]} rows but {y.size} targets")
        self.x_mean = x.mean(axis=0)
        self.y_mean = float(y.mean())
        xc, yc = x - self.x_mean, y - self.y_mean
        gram = xc.T @ xc
        eig = linalg.eigvalsh(gram)
        self.ridge = 0.0 if eig[0] > self.RCOND * max(eig[-1], 1e-300) else lam
        gram = gram + self.ridge * np.eye(x.shape[1])
        try:
            factor = linalg.cho_factor(gram, check_finite=True)
        except linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("linear baseline: system is numerically singular even with ridge") from exc
        self.coef = linalg.cho_solve(factor, xc.T @ yc)
        self.intercept = self.y_mean - float(self.x_mean @ self.coef)

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        return x @ self.coef + self.intercept


def linear_regression_baseline(train_bovw, train_targets, test_bovw, lam: float = RIDGE_LAMBDA) -> np.ndarray:
    return LinearBaseline(train_bovw, train_targets, lam).predict(test_bovw)


# ---------------------------------------------------------------------------
# report files


def fmt4(x: float) -> str:
    """Four decimals, never printing a negative zero."""
    if not math.isfinite(x):
        return "nan"
    s = f"{x:.4f}"
    return "0.0000" if s == "-0.0000" else s


def table_row(method: str, loss: str, mae: float, r2: float, corr: float) -> str:
    mae_s = "nan" if not math.isfinite(mae) else f"{mae:.2f}"
    return f"{method:<10s} {loss:<10s} MAE {mae_s:>6s}  R2 {fmt4(r2):>7s}  Corr {fmt4(corr):>7s}"


def metrics_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([r["method"], r["loss"], fmt4(r["mae"]), fmt4(r["r2"]), fmt4(r["corr"])])
    return buf.getvalue()


def read_metrics_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {"method": r["method"], "loss": r["loss"], "mae": float(r["mae"]), "r2": float(r["r2"]), "corr": float(r["corr"])}
            for r in csv.DictReader(fh)
        ]


def confusion_csv(confusion: np.ndarray, base_year: int = BASE_YEAR, span: int = YEAR_SPAN) -> str:
    labels = decade_labels(base_year, span)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred"] + labels)
    for label, row in zip(labels, confusion):
        w.writerow([label] + [int(v) for v in row])
    return buf.getvalue()


def read_confusion_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)


def ranking_csv(ranking: Ranking, paths: dict[str, str] | None = None, base_year: int = BASE_YEAR) -> str:
    paths = paths or {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["list", "decade", "rank", "id", "path", "target_year", "predicted_year", "residual"])

    def emit(kind, decade, items):
        for rank, s in enumerate(items, start=1):
            w.writerow(
                [kind, decade, rank, s.id, paths.get(s.id, ""), repr(s.target + base_year),
                 repr(s.prediction + base_year), repr(s.residual)]
            )

    for d, items in ranking.smallest_by_decade.items():
        emit("smallest", base_year + DECADE * d, items)
    emit("largest", "", ranking.largest)
    return buf.getvalue()


def predictions_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "target", "prediction", "residual"])
    for s in report.per_sample:
        w.writerow([s.id, repr(s.target), repr(s.prediction), repr(s.residual)])
    return buf.getvalue()


def write_report(report: EvalReport, out_dir: str | Path, paths: dict[str, str] | None = None) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "metrics": out / "metrics.csv",
        "confusion": out / "confusion.csv",
        "residuals": out / "residuals.csv",
        "predictions": out / "predictions.csv",
    }
    files["metrics"].write_text(metrics_csv([report.row()]))
    files["confusion"].write_text(confusion_csv(report.confusion, report.base_year, report.span))
    files["residuals"].write_text(ranking_csv(residual_ranking(report), paths, report.base_year))
    files["predictions"].write_text(predictions_csv(report))
    return files
