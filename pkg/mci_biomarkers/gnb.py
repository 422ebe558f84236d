"""Gaussian Naive Bayes with floored class-conditional variances."""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from mci_biomarkers.errors import ValidationError

VAR_SMOOTHING = 1e-9
ABSOLUTE_VAR_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class GaussianNBModel:
    feature_names: tuple[str, ...]
    means: np.ndarray      # (2, n_features)
    variances: np.ndarray  # (2, n_features)
    priors: np.ndarray     # (2,)

    kind = 'GNB'

    def decision(self, x: np.ndarray) -> np.ndarray:
        """Log-posterior ratio of class 1 over class 0."""
        x = np.asarray(x, dtype=float)
        lp = np.log(self.priors)[:, None] - 0.5 * np.sum(
            np.log(2 * np.pi * self.variances)[:, None, :]
            + (x[None, :, :] - self.means[:, None, :]) ** 2 / self.variances[:, None, :],
            axis=2,
        )
        return lp[1] - lp[0]

    def scores(self, x: np.ndarray) -> np.ndarray:
        return expit(self.decision(x))

    def to_dict(self) -> dict:
        return {
            'kind': self.kind,
            'feature_names': list(self.feature_names),
            'means': self.means.tolist(),
            'variances': self.variances.tolist(),
            'priors': self.priors.tolist(),
        }


def gnb_fit(x, y, feature_names=None) -> GaussianNBModel:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y).astype(int)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValidationError(f"GNB got {x.shape} features for {y.shape[0]} labels")
    counts = np.bincount(y, minlength=2)
    if len(counts) > 2:
        raise ValidationError("GNB labels must be 0 or 1")
    if counts.min() < 2:
        raise ValidationError(f"GNB needs at least 2 rows per class, got {counts[0]}/{counts[1]}")

    global_var = x.var(axis=0)
    floor = np.where(global_var > 0, VAR_SMOOTHING * global_var, ABSOLUTE_VAR_FLOOR)
    means = np.vstack([x[y == c].mean(axis=0) for c in (0, 1)])
    variances = np.vstack([np.maximum(x[y == c].var(axis=0), floor) for c in (0, 1)])
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(x.shape[1]))
    return GaussianNBModel(tuple(feature_names), means, variances, counts / counts.sum())
