"""Soft-margin RBF support vector machine trained by SMO.

The solver follows LIBSVM's first-order working-set selection: each step
optimises the maximal violating pair of the dual and stops once the KKT gap
falls below ``tol``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit

from mci_biomarkers.errors import ConvergenceError, ValidationError
from mci_biomarkers.logger import get_logger

_log = get_logger('svm')

KKT_TOL = 1e-3
MAX_ITER = 1_000_000
_TAU = 1e-12


def rbf_kernel(a, b, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(np.atleast_2d(a), np.atleast_2d(b), 'sqeuclidean'))


@dataclass(frozen=True, eq=False)
class SmoSolution:
    alpha: np.ndarray
    rho: float
    iterations: int


def smo_solve(kernel: np.ndarray, y_signed: np.ndarray, C: float,
              tol: float = KKT_TOL, max_iter: int = MAX_ITER, alpha0=None) -> SmoSolution:
    """Solve min 1/2 a'Qa - e'a s.t. 0 <= a <= C, y'a = 0 with Q = yy'K.

    ``alpha0`` is an optional feasible starting point.
    """
    y = np.asarray(y_signed, dtype=float)
    n = len(y)
    if C <= 0:
        raise ValidationError(f"box constraint C must be > 0, got {C}")
    qd = np.diag(kernel).copy()
    if alpha0 is None:
        alpha = np.zeros(n)
        grad = -np.ones(n)
    else:
        alpha = np.clip(np.asarray(alpha0, dtype=float), 0.0, C)
        if alpha.shape != (n,) or abs(y @ alpha) > 1e-9 * max(1.0, C * n):
            raise ValidationError("SMO starting point must satisfy 0 <= a <= C and y'a = 0")
        grad = y * (kernel @ (y * alpha)) - 1.0

    iterations = 0
    while True:
        at_upper = alpha >= C
        at_lower = alpha <= 0
        up = ((y > 0) & ~at_upper) | ((y < 0) & ~at_lower)
        low = ((y > 0) & ~at_lower) | ((y < 0) & ~at_upper)
        viol = -y * grad
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(viol[up])])
        j = int(np.flatnonzero(low)[np.argmin(viol[low])])
        if viol[i] - viol[j] < tol:
            break
        if iterations >= max_iter:
            raise ConvergenceError(f"SMO did not reach KKT tolerance {tol} in {max_iter} iterations")
        iterations += 1

        q_i = y * y[i] * kernel[:, i]
        q_j = y * y[j] * kernel[:, j]
        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(qd[i] + qd[j] + 2 * q_i[j], _TAU)
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, C - diff
            elif alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            quad = max(qd[i] + qd[j] - 2 * q_i[j], _TAU)
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, total - C
            elif alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, total
            if total > C:
                if alpha[j] > C:
                    alpha[j], alpha[i] = C, total - C
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, total
        grad += q_i * (alpha[i] - old_i) + q_j * (alpha[j] - old_j)

    return SmoSolution(alpha, _rho(alpha, grad, y, C), iterations)


def _rho(alpha, grad, y, C) -> float:
    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(yg[free].mean())
    at_upper = alpha >= C
    # Bounded variables only: midpoint of the feasible interval.
    ub_mask = (at_upper & (y < 0)) | (~at_upper & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (~at_upper & (y < 0))
    ub = yg[ub_mask].min() if ub_mask.any() else np.inf
    lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
    return float((ub + lb) / 2)


@dataclass(frozen=True, eq=False)
class KernelSVMModel:
    feature_names: tuple[str, ...]
    support_indices: np.ndarray
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i
    bias: float
    gamma: float
    C: float

    kind = 'KSVM'

    def decision(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if len(self.dual_coef) == 0:
            return np.full(x.shape[0], self.bias)
        return rbf_kernel(x, self.support_vectors, self.gamma) @ self.dual_coef + self.bias

    def scores(self, x) -> np.ndarray:
        return expit(self.decision(x))

    def to_dict(self) -> dict:
        return {
            'kind': self.kind,
            'feature_names': list(self.feature_names),
            'gamma': self.gamma,
            'C': self.C,
            'bias': self.bias,
            'support_indices': self.support_indices.tolist(),
            'support_vectors': self.support_vectors.tolist(),
            'dual_coef': self.dual_coef.tolist(),
        }


def _check_training(x, y, gamma: float):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y).astype(int)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValidationError(f"SVM got {x.shape} features for {y.shape[0]} labels")
    if len(np.unique(y)) != 2:
        raise ValidationError("SVM training needs both classes present")
    if gamma <= 0:
        raise ValidationError(f"RBF width gamma must be > 0, got {gamma}")
    return x, np.where(y == 1, 1.0, -1.0)


def _model(x, y_signed, solution: SmoSolution, gamma: float, C: float, feature_names) -> KernelSVMModel:
    sv = np.flatnonzero(solution.alpha > 0)
    _log.debug("SMO gamma=%g C=%g: %d iterations, %d support vectors",
               gamma, C, solution.iterations, len(sv))
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(x.shape[1]))
    return KernelSVMModel(
        feature_names=tuple(feature_names),
        support_indices=sv,
        support_vectors=x[sv],
        dual_coef=solution.alpha[sv] * y_signed[sv],
        bias=-solution.rho,
        gamma=float(gamma),
        C=float(C),
    )


def svm_fit_fixed(x, y, gamma: float, C: float, feature_names=None,
                  tol: float = KKT_TOL, max_iter: int = MAX_ITER) -> KernelSVMModel:
    """Train at fixed hyperparameters; ``y`` uses 0/1 labels."""
    x, y_signed = _check_training(x, y, gamma)
    solution = smo_solve(rbf_kernel(x, x, gamma), y_signed, C, tol, max_iter)
    return _model(x, y_signed, solution, gamma, C, feature_names)


def svm_fit_c_path(x, y, gamma: float, c_values, feature_names=None,
                   tol: float = KKT_TOL, max_iter: int = MAX_ITER) -> list[KernelSVMModel]:
    """One model per C at a shared gamma.

    The kernel is built once; each solve starts from the previous dual
    scaled by C_new / C_old, which stays inside the new box and keeps y'a = 0.
    """
    x, y_signed = _check_training(x, y, gamma)
    kernel = rbf_kernel(x, x, gamma)
    models = []
    alpha, prev_c = None, None
    for C in c_values:
        start = None if alpha is None else alpha * (C / prev_c)
        solution = smo_solve(kernel, y_signed, C, tol, max_iter, alpha0=start)
        models.append(_model(x, y_signed, solution, gamma, C, feature_names))
        alpha, prev_c = solution.alpha, C
    return models
