"""Stratified K-fold assignment."""

from dataclasses import dataclass

import numpy as np

from mci_biomarkers.errors import ValidationError


@dataclass(frozen=True, eq=False)
class FoldPlan:
    n: int
    K: int
    seed: int
    assignment: np.ndarray  # fold index per row, 0-based

    def test_rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def train_rows(self, *excluded: int) -> np.ndarray:
        return np.flatnonzero(~np.isin(self.assignment, excluded))

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.K)


def partition(n: int, K: int, seed: int, labels) -> FoldPlan:
    """Shuffle each class with ``seed`` and deal its rows round-robin.

    The dealing position carries over from one class to the next, so fold
    sizes differ by at most one overall as well as within each class.
    """
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValidationError(f"{labels.shape[0]} labels for {n} rows")
    if K < 2:
        raise ValidationError(f"need at least 2 folds, got {K}")
    if n < K:
        raise ValidationError(f"cannot split {n} rows into {K} folds")
    classes, counts = np.unique(labels, return_counts=True)
    for c, count in zip(classes, counts):
        if count < K:
            raise ValidationError(
                f"class {c} has {count} rows, fewer than K={K}; stratified folds are infeasible"
            )

    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=int)
    offset = 0
    for c in classes:
        rows = rng.permutation(np.flatnonzero(labels == c))
        assignment[rows] = (offset + np.arange(len(rows))) % K
        offset = (offset + len(rows)) % K
    assignment.setflags(write=False)
    return FoldPlan(n, K, int(seed), assignment)
