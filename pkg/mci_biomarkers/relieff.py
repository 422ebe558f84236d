"""ReliefF feature ranking and positive-score selection."""

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from mci_biomarkers.dataset import FeatureMatrix
from mci_biomarkers.errors import ValidationError
from mci_biomarkers.logger import get_logger

_log = get_logger('relieff')

DEFAULT_NEIGHBORS = 10


@dataclass(frozen=True)
class ReliefFConfig:
    J: int = DEFAULT_NEIGHBORS
    L: int | None = None  # None: every row once, in order
    seed: int = 0
    discrete: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.J < 1:
            raise ValidationError(f"ReliefF neighbor count J must be >= 1, got {self.J}")
        if self.L is not None and self.L < 1:
            raise ValidationError(f"ReliefF sample count L must be >= 1, got {self.L}")


@dataclass(frozen=True, eq=False)
class RankingVector:
    names: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self):
        scores = np.array(self.scores, dtype=float)
        if scores.shape != (len(self.names),):
            raise ValidationError(f"{scores.shape[0]} scores for {len(self.names)} features")
        if not np.isfinite(scores).all():
            raise ValidationError("ReliefF produced a non-finite score")
        scores.setflags(write=False)
        object.__setattr__(self, 'names', tuple(self.names))
        object.__setattr__(self, 'scores', scores)

    def to_frame(self) -> pd.DataFrame:
        """(feature, score) sorted by descending score, name breaking ties."""
        frame = pd.DataFrame({'feature': list(self.names), 'score': self.scores})
        return frame.sort_values(['score', 'feature'], ascending=[False, True], kind='mergesort').reset_index(drop=True)


def relieff_scores(values, labels, cfg: ReliefFConfig = ReliefFConfig()) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    y = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValidationError(f"ReliefF got {x.shape} features for {y.shape[0]} labels")
    m, n = x.shape
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise ValidationError("ReliefF needs both classes present")
    small = [(c, k) for c, k in zip(classes, counts) if k < cfg.J + 1]
    if small:
        c, k = small[0]
        raise ValidationError(f"class {c} has {k} rows; ReliefF with J={cfg.J} needs at least {cfg.J + 1}")

    discrete = np.zeros(n, dtype=bool)
    discrete[list(cfg.discrete)] = True
    span = np.ptp(x, axis=0)
    if np.all(span[~discrete] == 0) and all(len(np.unique(x[:, j])) == 1 for j in np.flatnonzero(discrete)):
        _log.warning("all rows are identical; ReliefF ranking is all zeros")
        return np.zeros(n)

    # Range-normalised copy; zero-range columns contribute nothing.
    scaled = np.zeros_like(x)
    live = (span > 0) & ~discrete
    scaled[:, live] = (x[:, live] - x[:, live].min(axis=0)) / span[live]
    dist = cdist(scaled[:, ~discrete], scaled[:, ~discrete], 'cityblock') if (~discrete).any() else np.zeros((m, m))
    if discrete.any():
        dist = dist + cdist(x[:, discrete], x[:, discrete], 'hamming') * discrete.sum()

    if cfg.L is None:
        sample = np.arange(m)
    else:
        sample = np.random.default_rng(cfg.seed).integers(0, m, size=cfg.L)

    def diff(i, rows):
        d = np.abs(scaled[rows] - scaled[i])
        if discrete.any():
            d[:, discrete] = (x[rows][:, discrete] != x[i, discrete]).astype(float)
        return d.sum(axis=0)

    total = np.zeros(n)
    for i in sample:
        order = np.argsort(dist[i], kind='stable')
        same = order[(y[order] == y[i]) & (order != i)]
        other = order[y[order] != y[i]]
        total += diff(i, other[:cfg.J]) - diff(i, same[:cfg.J])
    return total / (len(sample) * cfg.J)


def relieff_rank(features: FeatureMatrix, labels, cfg: ReliefFConfig = ReliefFConfig()) -> RankingVector:
    scores = relieff_scores(features.values, labels, cfg)
    _log.debug("ReliefF ranked %d features (%d positive)", len(scores), int((scores > 0).sum()))
    return RankingVector(features.names, scores)


def select_positive(ranking: RankingVector) -> list[int]:
    return [int(i) for i in np.flatnonzero(ranking.scores > 0)]
