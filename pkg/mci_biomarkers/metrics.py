"""Classification statistics with MCI (label 1) as the positive class."""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from mci_biomarkers.errors import ValidationError

STAT_NAMES = ('acc', 'sens', 'spec', 'auc')
DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class StatBlock:
    acc: float
    sens: float
    spec: float
    auc: float

    def __post_init__(self):
        for name in STAT_NAMES:
            value = getattr(self, name)
            if not np.isfinite(value) or not 0.0 <= value <= 1.0:
                raise ValidationError(f"statistic {name} = {value} outside [0, 1]")

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in STAT_NAMES}

    @classmethod
    def mean(cls, blocks) -> 'StatBlock':
        """Unweighted mean of each statistic."""
        blocks = list(blocks)
        if not blocks:
            raise ValidationError("cannot average zero stat blocks")
        return cls(**{name: float(np.mean([getattr(b, name) for b in blocks])) for name in STAT_NAMES})


def _check(labels, scores) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(labels).astype(int)
    s = np.asarray(scores, dtype=float)
    if y.shape != s.shape or y.ndim != 1:
        raise ValidationError(f"{y.shape} labels vs {s.shape} scores")
    if not np.isfinite(s).all():
        raise ValidationError("scores must be finite")
    if not np.isin(y, (0, 1)).all():
        raise ValidationError("labels must be 0 or 1")
    if y.min() == y.max():
        raise ValidationError("labels contain a single class; statistics are undefined")
    return y, s


def roc_auc(labels, scores) -> float:
    """Mann-Whitney AUC; tied scores earn half credit through midranks."""
    y, s = _check(labels, scores)
    ranks = rankdata(s)
    n1 = int(y.sum())
    n0 = len(y) - n1
    u = ranks[y == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def compute_metrics(labels, scores, threshold: float = DEFAULT_THRESHOLD) -> StatBlock:
    y, s = _check(labels, scores)
    pred = (s >= threshold).astype(int)
    tp = int(np.sum((pred == 1) & (y == 1)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    return StatBlock(
        acc=(tp + tn) / len(y),
        sens=tp / (tp + fn),
        spec=tn / (tn + fp),
        auc=roc_auc(y, s),
    )
