"""Penalised logistic regression along a lambda path (GLMNET-style).

Minimises ``-(1/W) sum_i w_i loglik_i + lambda * ((1 - alpha)/2 |b|^2 + alpha |b|_1)``
over standardised features by cyclic coordinate descent inside an IRLS
loop, with warm starts from one lambda to the next. Coefficients are
reported on the original feature scale.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from mci_biomarkers.errors import ConvergenceError, ValidationError
from mci_biomarkers.logger import get_logger
from mci_biomarkers.metrics import compute_metrics

_log = get_logger('glmnet')

DEFAULT_ALPHA = 1.0
DEFAULT_N_LAMBDA = 100
DEFAULT_LAMBDA_MIN_RATIO = 1e-4
OUTER_TOL = 1e-7
INNER_TOL = 1e-13
MAX_SWEEPS = 10_000
DEVIANCE_RATIO_STOP = 0.999
_MIN_WEIGHT = 1e-5


@dataclass(frozen=True, eq=False)
class GlmnetPath:
    lambdas: np.ndarray       # (T,), strictly decreasing
    intercepts: np.ndarray    # (T,)
    coefs: np.ndarray         # (T, n_features), original scale
    alpha: float
    lambda_max: float
    n_requested: int          # grid length asked for; the path stops early once saturated

    @property
    def n_fitted(self) -> int:
        return len(self.lambdas)

    @property
    def saturated(self) -> bool:
        return self.n_fitted < self.n_requested

    def scores(self, x) -> np.ndarray:
        """Logistic scores, one row per lambda."""
        x = np.asarray(x, dtype=float)
        return expit(self.intercepts[:, None] + self.coefs @ x.T)


def _normalise_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,) or (w < 0).any() or w.sum() <= 0:
        raise ValidationError("observation weights must be non-negative with a positive sum")
    return w / w.sum()


def _standardise(x: np.ndarray, w: np.ndarray):
    mu = w @ x
    sd = np.sqrt(w @ (x - mu) ** 2)
    live = sd > 0
    xs = np.zeros_like(x)
    xs[:, live] = (x[:, live] - mu[live]) / sd[live]
    return xs, mu, sd, live


def glmnet_lambda_max(x, y, weights=None, alpha: float = DEFAULT_ALPHA) -> tuple[float, bool]:
    """Smallest lambda with an all-zero solution, on already standardised ``x``.

    Returns ``(lambda_max, degenerate)``; a constant response is degenerate
    with lambda_max 0.
    """
    if not 0 < alpha <= 1:
        raise ValidationError(f"alpha must be in (0, 1], got {alpha}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = _normalise_weights(weights, len(y))
    ybar = w @ y
    if ybar <= 0 or ybar >= 1:
        return 0.0, True
    return float(np.max(np.abs((w * (y - ybar)) @ x)) / alpha), False


def lambda_grid(lambda_max: float, n_lambda: int = DEFAULT_N_LAMBDA,
                min_ratio: float = DEFAULT_LAMBDA_MIN_RATIO) -> np.ndarray:
    if lambda_max <= 0:
        raise ValidationError("lambda grid needs lambda_max > 0 (response is constant)")
    if n_lambda < 1:
        raise ValidationError(f"lambda grid needs at least one point, got {n_lambda}")
    if n_lambda == 1:
        return np.array([lambda_max])
    return np.geomspace(lambda_max, lambda_max * min_ratio, n_lambda)


def glmnet_lambda_grid(x, y, weights=None, alpha: float = DEFAULT_ALPHA,
                       n_lambda: int = DEFAULT_N_LAMBDA,
                       min_ratio: float = DEFAULT_LAMBDA_MIN_RATIO) -> np.ndarray:
    """Lambda grid for raw features, standardised the same way the fit does."""
    x = np.asarray(x, dtype=float)
    w = _normalise_weights(weights, x.shape[0])
    xs, *_ = _standardise(x, w)
    lmax, degenerate = glmnet_lambda_max(xs, y, w, alpha)
    if degenerate:
        raise ValidationError("cannot build a lambda grid for a single-class response")
    return lambda_grid(lmax, n_lambda, min_ratio)


def _deviance(y, p, w) -> float:
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-2 * w @ (y * np.log(p) + (1 - y) * np.log1p(-p)))


def glmnet_fit_path(x, y, lambdas=None, alpha: float = DEFAULT_ALPHA, weights=None,
                    n_lambda: int = DEFAULT_N_LAMBDA,
                    min_ratio: float = DEFAULT_LAMBDA_MIN_RATIO) -> GlmnetPath:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValidationError(f"GLMNET got {x.shape} features for {y.shape[0]} labels")
    w = _normalise_weights(weights, len(y))
    xs, mu, sd, live = _standardise(x, w)
    lmax, degenerate = glmnet_lambda_max(xs, y, w, alpha)
    if degenerate:
        raise ValidationError("GLMNET training needs both classes present")
    if lambdas is None:
        lambdas = lambda_grid(lmax, n_lambda, min_ratio)
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.ndim != 1 or len(lambdas) == 0 or (lambdas <= 0).any():
        raise ValidationError("lambda grid must be a non-empty list of positive values")
    if (np.diff(lambdas) >= 0).any():
        raise ValidationError("lambda grid must be strictly decreasing")

    n_feat = x.shape[1]
    n_requested = len(lambdas)
    ybar = w @ y
    null_b0 = float(logit(ybar))
    null_dev = _deviance(y, np.full_like(y, ybar), w)
    b0, beta = null_b0, np.zeros(n_feat)
    intercepts = np.empty(len(lambdas))
    coefs = np.empty((len(lambdas), n_feat))
    n_fitted = len(lambdas)

    for t, lam in enumerate(lambdas):
        if lam >= lmax:
            b0, beta = null_b0, np.zeros(n_feat)
            ratio = 0.0
        else:
            b0, beta = _solve_one(xs, y, w, lam, alpha, b0, beta, live, t)
            ratio = 1.0 - _deviance(y, expit(b0 + xs @ beta), w) / null_dev
        intercepts[t] = b0
        coefs[t] = beta
        if ratio >= DEVIANCE_RATIO_STOP:
            n_fitted = t + 1
            _log.debug("deviance ratio %.4f at lambda index %d; path stops at %d of %d points",
                       ratio, t, n_fitted, len(lambdas))
            break

    lambdas, intercepts, coefs = lambdas[:n_fitted], intercepts[:n_fitted], coefs[:n_fitted]
    # Back to the original feature scale.
    scale = np.where(live, sd, 1.0)
    coefs = np.where(live, coefs / scale, 0.0)
    intercepts = intercepts - coefs @ mu
    return GlmnetPath(lambdas, intercepts, coefs, float(alpha), float(lmax), n_requested)


def _solve_one(xs, y, w, lam, alpha, b0, beta, live, index):
    beta = beta.copy()
    l1 = lam * alpha
    l2 = lam * (1 - alpha)
    sweeps = 0
    while True:
        eta = b0 + xs @ beta
        p = expit(eta)
        var = np.maximum(p * (1 - p), _MIN_WEIGHT)
        ww = w * var
        z = eta + (y - p) / var
        r = z - eta
        xv = ww @ xs ** 2
        old_b0, old_beta = b0, beta.copy()
        active = np.flatnonzero(beta != 0)
        while True:
            # Cycle the active set to convergence, then check KKT over everything.
            while True:
                sweeps += 1
                if sweeps > MAX_SWEEPS:
                    raise ConvergenceError(
                        f"GLMNET did not converge within {MAX_SWEEPS} sweeps at lambda index {index}"
                    )
                biggest = 0.0
                for j in active:
                    prev = beta[j]
                    g = ww @ (xs[:, j] * r) + xv[j] * prev
                    new = np.sign(g) * max(abs(g) - l1, 0.0) / (xv[j] + l2)
                    if new != prev:
                        r -= xs[:, j] * (new - prev)
                        beta[j] = new
                        biggest = max(biggest, xv[j] * (new - prev) ** 2)
                shift = (ww @ r) / ww.sum()
                b0 += shift
                r -= shift
                biggest = max(biggest, ww.sum() * shift ** 2)
                if biggest < INNER_TOL:
                    break
            grad = np.abs((ww * r) @ xs)
            violators = np.flatnonzero(live & (beta == 0) & (grad > l1))
            if len(violators) == 0:
                break
            active = np.union1d(active, violators)
        if max(abs(b0 - old_b0), np.max(np.abs(beta - old_beta), initial=0.0)) < OUTER_TOL:
            return b0, beta


def glmnet_pick_lambda(path: GlmnetPath, x_val, y_val, criterion: str = 'auc') -> int:
    """Index maximising the validation criterion; ties go to the larger lambda."""
    x_val = np.asarray(x_val, dtype=float)
    y_val = np.asarray(y_val)
    if len(y_val) == 0:
        raise ValidationError("validation fold is empty")
    scores = path.scores(x_val)
    values = [getattr(compute_metrics(y_val, s), criterion) for s in scores]
    return int(np.argmax(values))
