"""Common interface over the GNB, KSVM and GLMNET classifiers.

A classifier kind exposes a hyperparameter grid (possibly a single empty
candidate), per-candidate test scores for a train/test split, and a final
fit at a chosen candidate. Nested cross-validation and the standalone
``fit_model`` both drive selection through these three calls.
"""

from dataclasses import dataclass, field, fields

import numpy as np
from scipy.special import expit

from mci_biomarkers.dataset import FeatureMatrix
from mci_biomarkers.errors import ValidationError
from mci_biomarkers.folds import partition
from mci_biomarkers.glmnet import (
    DEFAULT_ALPHA,
    DEFAULT_LAMBDA_MIN_RATIO,
    DEFAULT_N_LAMBDA,
    GlmnetPath,
    glmnet_fit_path,
    glmnet_lambda_grid,
)
from mci_biomarkers.gnb import GaussianNBModel, gnb_fit
from mci_biomarkers.logger import get_logger
from mci_biomarkers.metrics import compute_metrics
from mci_biomarkers.svm import KernelSVMModel, svm_fit_c_path, svm_fit_fixed

_log = get_logger('classifiers')

CLASSIFIER_KINDS = ('GNB', 'KSVM', 'GLMNET')
CRITERIA = ('auc', 'acc')
# Every second power of two: 7 x 7 candidates spanning gamma 2^-9..2^3 and C 2^-5..2^7.
DEFAULT_GAMMA_GRID = tuple(2.0 ** e for e in range(-9, 4, 2))
DEFAULT_C_GRID = tuple(2.0 ** e for e in range(-5, 8, 2))
DEFAULT_INNER_FOLDS = 5


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str
    gamma_grid: tuple[float, ...] = field(default=DEFAULT_GAMMA_GRID)
    c_grid: tuple[float, ...] = field(default=DEFAULT_C_GRID)
    alpha: float = DEFAULT_ALPHA
    n_lambda: int = DEFAULT_N_LAMBDA
    lambda_min_ratio: float = DEFAULT_LAMBDA_MIN_RATIO
    criterion: str = 'auc'
    inner_folds: int = DEFAULT_INNER_FOLDS
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CLASSIFIER_KINDS:
            raise ValidationError(f"classifier must be one of {', '.join(CLASSIFIER_KINDS)}, got {self.kind!r}")
        object.__setattr__(self, 'gamma_grid', tuple(float(g) for g in self.gamma_grid))
        object.__setattr__(self, 'c_grid', tuple(float(c) for c in self.c_grid))
        if not self.gamma_grid or min(self.gamma_grid) <= 0:
            raise ValidationError("gamma grid must be non-empty and positive")
        if not self.c_grid or min(self.c_grid) <= 0:
            raise ValidationError("C grid must be non-empty and positive")
        if not 0 < self.alpha <= 1:
            raise ValidationError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.n_lambda < 1 or not 0 < self.lambda_min_ratio < 1:
            raise ValidationError("lambda grid needs n_lambda >= 1 and 0 < lambda_min_ratio < 1")
        if self.criterion not in CRITERIA:
            raise ValidationError(f"selection criterion must be one of {CRITERIA}, got {self.criterion!r}")
        if self.inner_folds < 2:
            raise ValidationError(f"inner_folds must be >= 2, got {self.inner_folds}")

    @classmethod
    def from_options(cls, kind: str, options: dict | None = None) -> 'ClassifierSpec':
        options = dict(options or {})
        known = {f.name for f in fields(cls)} - {'kind'}
        unknown = sorted(set(options) - known)
        if unknown:
            raise ValidationError(f"unknown {kind} option(s): {', '.join(unknown)}")
        for key in ('gamma_grid', 'c_grid'):
            if key in options:
                options[key] = tuple(options[key])
        return cls(kind=kind, **options)

    def to_dict(self) -> dict:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data['gamma_grid'] = list(self.gamma_grid)
        data['c_grid'] = list(self.c_grid)
        return data


@dataclass(frozen=True, eq=False)
class GlmnetModel:
    feature_names: tuple[str, ...]
    intercept: float
    coef: np.ndarray
    lambda_: float
    lambda_index: int
    path: GlmnetPath

    kind = 'GLMNET'

    def decision(self, x) -> np.ndarray:
        return self.intercept + np.asarray(x, dtype=float) @ self.coef

    def scores(self, x) -> np.ndarray:
        return expit(self.decision(x))

    def to_dict(self) -> dict:
        return {
            'kind': self.kind,
            'feature_names': list(self.feature_names),
            'alpha': self.path.alpha,
            'lambda': self.lambda_,
            'lambda_index': self.lambda_index,
            'intercept': self.intercept,
            'coef': self.coef.tolist(),
            'path': {
                'lambdas': self.path.lambdas.tolist(),
                'intercepts': self.path.intercepts.tolist(),
                'coefs': self.path.coefs.tolist(),
                'lambda_max': self.path.lambda_max,
                'n_requested': self.path.n_requested,
            },
        }


TrainedModel = GaussianNBModel | KernelSVMModel | GlmnetModel


def candidate_grid(spec: ClassifierSpec, x, y) -> list[dict]:
    """Hyperparameter candidates in tie-break order (earlier wins)."""
    if spec.kind == 'GNB':
        return [{}]
    if spec.kind == 'KSVM':
        return [{'gamma': g, 'C': c} for g in spec.gamma_grid for c in spec.c_grid]
    lambdas = glmnet_lambda_grid(x, y, alpha=spec.alpha, n_lambda=spec.n_lambda,
                                 min_ratio=spec.lambda_min_ratio)
    return [{'lambda': float(lam)} for lam in lambdas]


def candidate_scores(spec: ClassifierSpec, grid: list[dict], x_train, y_train, x_test) -> np.ndarray:
    """Test-set scores for every candidate, shape (len(grid), n_test).

    GLMNET rows past a saturated path's last fitted lambda are NaN.
    """
    if spec.kind == 'GNB':
        return gnb_fit(x_train, y_train).scores(x_test)[None, :]
    if spec.kind == 'KSVM':
        scores = np.empty((len(grid), np.asarray(x_test).shape[0]))
        by_gamma: dict[float, list[int]] = {}
        for i, c in enumerate(grid):
            by_gamma.setdefault(c['gamma'], []).append(i)
        for gamma, rows in by_gamma.items():
            models = svm_fit_c_path(x_train, y_train, gamma, [grid[i]['C'] for i in rows])
            for i, model in zip(rows, models):
                scores[i] = model.scores(x_test)
        return scores
    path = glmnet_fit_path(x_train, y_train, [c['lambda'] for c in grid], alpha=spec.alpha)
    scores = np.full((len(grid), np.asarray(x_test).shape[0]), np.nan)
    scores[:path.n_fitted] = path.scores(x_test)
    return scores


def select_best(values) -> int:
    """First index attaining the maximum; NaN marks a candidate that was never fitted."""
    values = np.asarray(values, dtype=float)
    if values.size == 0 or np.isnan(values).all():
        raise ValidationError("no candidates to select from")
    return int(np.argmax(np.where(np.isnan(values), -np.inf, values)))


def candidate_value(spec: ClassifierSpec, labels, scores) -> float:
    if np.isnan(scores).any():
        return np.nan
    return criterion_value(spec, labels, scores)


def fit_candidate(spec: ClassifierSpec, grid: list[dict], index: int, x, y, feature_names) -> TrainedModel:
    feature_names = tuple(feature_names)
    if spec.kind == 'GNB':
        return gnb_fit(x, y, feature_names)
    if spec.kind == 'KSVM':
        c = grid[index]
        return svm_fit_fixed(x, y, c['gamma'], c['C'], feature_names)
    path = glmnet_fit_path(x, y, [c['lambda'] for c in grid], alpha=spec.alpha)
    if index >= path.n_fitted:
        _log.debug("refit path saturated at %d of %d points; using its last lambda",
                   path.n_fitted, path.n_requested)
        index = path.n_fitted - 1
    return GlmnetModel(
        feature_names=feature_names,
        intercept=float(path.intercepts[index]),
        coef=path.coefs[index].copy(),
        lambda_=float(path.lambdas[index]),
        lambda_index=index,
        path=path,
    )


def criterion_value(spec: ClassifierSpec, labels, scores) -> float:
    return getattr(compute_metrics(labels, scores), spec.criterion)


def inner_search(spec: ClassifierSpec, x, y) -> tuple[list[dict], int]:
    """Stratified inner grid search; returns the grid and the winning index."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y).astype(int)
    grid = candidate_grid(spec, x, y)
    if len(grid) == 1:
        return grid, 0
    folds = min(spec.inner_folds, int(np.bincount(y, minlength=2).min()))
    if folds < 2:
        raise ValidationError("too few rows per class for an inner hyperparameter search")
    plan = partition(len(y), folds, spec.seed, y)
    totals = np.zeros(len(grid))
    for k in range(folds):
        train, test = plan.train_rows(k), plan.test_rows(k)
        scores = candidate_scores(spec, grid, x[train], y[train], x[test])
        totals += [candidate_value(spec, y[test], s) for s in scores]
    best = select_best(totals / folds)
    _log.debug("%s inner search over %d candidates chose %s", spec.kind, len(grid), grid[best])
    return grid, best


def ksvm_fit(x, y, spec: ClassifierSpec, feature_names=None) -> KernelSVMModel:
    """KSVM with (gamma, C) picked by inner grid search, then refit on all rows."""
    if spec.kind != 'KSVM':
        raise ValidationError(f"ksvm_fit needs a KSVM spec, got {spec.kind}")
    return fit_model(spec, x, y, feature_names)


def fit_model(spec: ClassifierSpec, features, labels, feature_names=None) -> TrainedModel:
    if isinstance(features, FeatureMatrix):
        feature_names = features.names
        features = features.values
    x = np.asarray(features, dtype=float)
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(x.shape[1]))
    grid, best = inner_search(spec, x, labels)
    return fit_candidate(spec, grid, best, x, np.asarray(labels).astype(int), feature_names)


def predict_scores(model: TrainedModel, features) -> np.ndarray:
    if isinstance(features, FeatureMatrix):
        if features.names != model.feature_names:
            raise ValidationError("feature columns differ from the columns the model was trained on")
        x = features.values
    else:
        x = np.atleast_2d(np.asarray(features, dtype=float))
        if x.shape[1] != len(model.feature_names):
            raise ValidationError(
                f"model expects {len(model.feature_names)} features, got {x.shape[1]}"
            )
    return model.scores(x)
