"""EER / ROC / AUC metrics over trial score sets.

The ROC is a descending-score threshold sweep with tied scores grouped
into a single sweep point, so the curve handles ties by proportional
splitting. EER interpolates linearly between the adjacent sweep points
where the false-accept and false-reject rates cross.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError


@dataclass(frozen=True)
class ScoreSet:
    """Per-trial scores and kin/nonkin labels for one relation (or pooled)."""

    scores: np.ndarray
    labels: np.ndarray  # 1 = kin, 0 = nonkin
    relation: str = "all"

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        y = np.asarray(self.labels)
        if y.dtype.kind in "US":
            y = (y == "kin").astype(np.int64)
        y = y.astype(np.int64)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)
        if s.shape != y.shape or s.ndim != 1 or s.size == 0:
            raise DimensionError("scores and labels must be equal-length non-empty vectors")
        if not np.all(np.isfinite(s)):
            raise DataError("scores must be finite")
        if set(np.unique(y)) - {0, 1}:
            raise DataError("labels must be kin(1)/nonkin(0)")

    def require_both_classes(self):
        if self.labels.min() == self.labels.max():
            raise DataError(f"score set {self.relation!r} contains a single class")


def roc_curve(scoreset: ScoreSet) -> np.ndarray:
    """(FPR, TPR) points of the descending-threshold sweep, (0,0) to (1,1)."""
    scoreset.require_both_classes()
    s, y = scoreset.scores, scoreset.labels
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # keep only the last index of each tied-score group
    last = np.r_[s[1:] != s[:-1], True]
    tpr = np.r_[0.0, tp[last] / n_pos]
    fpr = np.r_[0.0, fp[last] / n_neg]
    return np.column_stack([fpr, tpr])


def auc(scoreset: ScoreSet) -> float:
    """Trapezoidal area under the ROC; equals the Mann-Whitney statistic."""
    pts = roc_curve(scoreset)
    return float(np.trapezoid(pts[:, 1], pts[:, 0]))


def eer(scoreset: ScoreSet) -> float:
    """Equal error rate in percent: FAR = FRR along the sweep, interpolated."""
    pts = roc_curve(scoreset)
    far = pts[:, 0]
    frr = 1.0 - pts[:, 1]
    diff = far - frr  # monotone non-decreasing along the sweep
    idx = int(np.searchsorted(diff >= 0, True))
    if idx == 0:
        return float(far[0] * 100.0)
    d0, d1 = diff[idx - 1], diff[idx]
    if d1 == d0:
        t = 0.0
    else:
        t = -d0 / (d1 - d0)
    value = far[idx - 1] + t * (far[idx] - far[idx - 1])
    return float(value * 100.0)


@dataclass(frozen=True)
class RelationMetrics:
    eer: float
    auc: float
    roc: np.ndarray
    n_trials: int


@dataclass(frozen=True)
class EvalReport:
    """Per-relation metrics plus the unweighted cross-relation average EER."""

    method: str
    relations: dict[str, RelationMetrics]
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def average_eer(self) -> float:
        return float(np.mean([m.eer for m in self.relations.values()]))

    @property
    def average_auc(self) -> float:
        return float(np.mean([m.auc for m in self.relations.values()]))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "relations": {
                rel: {
                    "eer_percent": m.eer,
                    "auc": m.auc,
                    "n_trials": m.n_trials,
                    "roc": [[float(a), float(b)] for a, b in m.roc],
                }
                for rel, m in sorted(self.relations.items())
            },
            "average_eer_percent": self.average_eer,
            "average_auc": self.average_auc,
            "extra": self.extra,
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def report_from_scores(method: str, scoresets: list[ScoreSet], seed: int = 0,
                       extra: dict | None = None) -> EvalReport:
    relations = {}
    for ss in scoresets:
        relations[ss.relation] = RelationMetrics(
            eer=eer(ss), auc=auc(ss), roc=roc_curve(ss), n_trials=ss.scores.size
        )
    return EvalReport(method, relations, seed, extra or {})


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())


def write_roc_tsv(roc: np.ndarray, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for fpr, tpr in roc:
            fh.write(f"{fpr:.10g}\t{tpr:.10g}\n")
