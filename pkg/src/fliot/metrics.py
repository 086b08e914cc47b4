"""Detection metrics, threshold-sweep curves, energy proxy and CSV reports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import MetricError, ParameterError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ParameterError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionCounts":
        y_true = np.asarray(y_true).astype(bool)
        y_pred = np.asarray(y_pred).astype(bool)
        if y_true.shape != y_pred.shape:
            raise ParameterError("label and prediction shapes differ")
        return cls(
            tp=int(np.sum(y_true & y_pred)), fp=int(np.sum(~y_true & y_pred)),
            tn=int(np.sum(~y_true & ~y_pred)), fn=int(np.sum(y_true & ~y_pred)),
        )


def confusion_metrics(c: ConfusionCounts) -> dict:
    """Accuracy, precision, recall, F1. Undefined ratios are 0 and flagged."""
    out = {
        "accuracy": (c.tp + c.tn) / c.total if c.total else 0.0,
        "precision_undefined": c.tp + c.fp == 0,
        "recall_undefined": c.tp + c.fn == 0,
    }
    p = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    r = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    out["precision"] = p
    out["recall"] = r
    out["f1"] = 2 * p * r / (p + r) if p + r else 0.0
    return out


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    fpr: float
    tpr: float


@dataclass(frozen=True)
class PrPoint:
    threshold: float
    precision: float
    recall: float


def _scores_labels(scores, labels=None):
    if labels is None:
        pairs = list(scores)
        s = np.array([p[0] for p in pairs], dtype=np.float64)
        y = np.array([p[1] for p in pairs], dtype=np.int64)
    else:
        s = np.asarray(scores, dtype=np.float64).ravel()
        y = np.asarray(labels).astype(np.int64).ravel()
    if s.shape != y.shape:
        raise ParameterError("scores and labels differ in length")
    pos = int(y.sum())
    if pos == 0 or pos == y.size:
        raise MetricError("curve needs both positive and negative examples")
    return s, y


def _sweep(s, y):
    """Cumulative (threshold, tp, fp) at each distinct score, highest first."""
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tps = np.cumsum(y)[last]
    fps = last + 1 - tps
    return s[last], tps, fps


def roc_auc(scores, labels=None) -> tuple[list[RocPoint], float]:
    """ROC points over all distinct scores (tied scores share a point) and trapezoid AUC.

    A step is predicted positive when its score is ``>=`` the threshold.
    """
    s, y = _scores_labels(scores, labels)
    thr, tps, fps = _sweep(s, y)
    P, N = tps[-1], fps[-1]
    tpr = np.r_[0.0, tps / P]
    fpr = np.r_[0.0, fps / N]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    points = [RocPoint(math.inf, 0.0, 0.0)] + [
        RocPoint(float(t), float(f), float(r)) for t, f, r in zip(thr, fpr[1:], tpr[1:])
    ]
    return points, auc


def auc_score(scores, labels) -> float:
    return roc_auc(scores, labels)[1]


def pr_curve(scores, labels=None) -> list[PrPoint]:
    s, y = _scores_labels(scores, labels)
    thr, tps, fps = _sweep(s, y)
    P = tps[-1]
    return [PrPoint(float(t), float(tp / (tp + fp)), float(tp / P)) for t, tp, fp in zip(thr, tps, fps)]


@dataclass(frozen=True)
class EnergyModel:
    """Joule-equivalents per FLOP, per big-integer multiply and per byte sent."""

    alpha: float = 2e-10
    beta: float = 1e-6
    gamma: float = 8e-7

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ParameterError("energy constants must be non-negative")


def energy_estimate(flops: float, bigint_mults: float, nbytes: float, model: EnergyModel) -> float:
    if min(flops, bigint_mults, nbytes) < 0:
        raise ParameterError("energy inputs must be non-negative")
    return model.alpha * flops + model.beta * bigint_mults + model.gamma * nbytes


# --- CSV reports -------------------------------------------------------------

ROUNDS_COLUMNS = (
    "round", "global_loss", "accuracy", "precision", "recall", "f1", "auc",
    "uplink_bytes", "downlink_bytes", "latency_s", "energy_proxy", "flops",
    "bigint_mults", "n_participants", "participants",
)
PER_ATTACK_COLUMNS = (
    "attack_kind", "unit", "n_units", "tp", "fp", "tn", "fn",
    "accuracy", "precision", "recall", "f1", "auc",
)
MODE_COMPARISON_COLUMNS = (
    "label", "aggregation_mode", "dp_sigma", "compression", "prune_fraction", "quant_bits",
    "accuracy", "precision", "recall", "f1", "auc", "final_loss",
    "uplink_bytes", "downlink_bytes", "total_bytes", "uplink_bytes_per_round",
    "energy_proxy", "latency_s", "latency_per_round_s",
)
ROC_COLUMNS = ("attack_kind", "threshold", "fpr", "tpr")
PR_COLUMNS = ("attack_kind", "threshold", "precision", "recall")
NOISE_SWEEP_COLUMNS = ("sigma",) + MODE_COMPARISON_COLUMNS
SCALING_COLUMNS = ("n_devices",) + MODE_COMPARISON_COLUMNS

SCHEMAS = {
    "rounds.csv": ROUNDS_COLUMNS,
    "per_attack_metrics.csv": PER_ATTACK_COLUMNS,
    "mode_comparison.csv": MODE_COMPARISON_COLUMNS,
    "roc_points.csv": ROC_COLUMNS,
    "pr_points.csv": PR_COLUMNS,
    "noise_sweep.csv": NOISE_SWEEP_COLUMNS,
    "scaling.csv": SCALING_COLUMNS,
}


def format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return ";".join(str(x) for x in v)
    return str(v)


def write_table(path, columns: Sequence[str], rows: Iterable[dict]) -> Path:
    """Write ``rows`` under ``columns`` (extra keys ignored, missing keys blank)."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([format_cell(row.get(c)) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc.strerror or exc}") from exc
    return path


def read_table(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def emit_report(out_dir, reports: Sequence = (), per_attack: Sequence[dict] = (),
                comparison: Sequence[dict] = (), roc: Optional[dict] = None,
                pr: Optional[dict] = None) -> dict:
    """Write the per-run CSVs into ``out_dir``; returns ``{filename: path}``.

    ``reports`` are RoundReport-like objects with ``as_row()``; ``roc``/``pr``
    map an attack kind to its curve points.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    roc_rows = [
        {"attack_kind": k, "threshold": p.threshold, "fpr": p.fpr, "tpr": p.tpr}
        for k, pts in (roc or {}).items() for p in pts
    ]
    pr_rows = [
        {"attack_kind": k, "threshold": p.threshold, "precision": p.precision, "recall": p.recall}
        for k, pts in (pr or {}).items() for p in pts
    ]
    written = {
        "rounds.csv": write_table(out / "rounds.csv", ROUNDS_COLUMNS, [r.as_row() for r in reports]),
        "per_attack_metrics.csv": write_table(out / "per_attack_metrics.csv", PER_ATTACK_COLUMNS, per_attack),
        "mode_comparison.csv": write_table(out / "mode_comparison.csv", MODE_COMPARISON_COLUMNS, comparison),
        "roc_points.csv": write_table(out / "roc_points.csv", ROC_COLUMNS, roc_rows),
        "pr_points.csv": write_table(out / "pr_points.csv", PR_COLUMNS, pr_rows),
    }
    return written
