import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import expit

from mci_biomarkers.errors import ValidationError
from mci_biomarkers.glmnet import (
    glmnet_fit_path,
    glmnet_lambda_grid,
    glmnet_lambda_max,
    glmnet_pick_lambda,
    lambda_grid,
)


def logistic_problem(n, p, seed, coef_scale=0.3):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p)) * rng.uniform(0.5, 3.0, p) + rng.normal(0, 2, p)
    beta = coef_scale * rng.standard_normal(p)
    eta = 0.2 + (x - x.mean(axis=0)) / x.std(axis=0) @ beta
    y = (rng.uniform(size=n) < expit(eta)).astype(float)
    y[0], y[1] = 0.0, 1.0
    return x, y


def newton_mle(x, y, iterations=100):
    design = np.column_stack([np.ones(len(y)), x])
    b = np.zeros(design.shape[1])
    for _ in range(iterations):
        p = expit(design @ b)
        hess = design.T @ (design * (p * (1 - p))[:, None])
        step = np.linalg.solve(hess, design.T @ (y - p))
        b += step
        if np.max(np.abs(step)) < 1e-12:
            break
    return b


def standardised(x):
    return (x - x.mean(axis=0)) / x.std(axis=0)


def test_lambda_max_closed_form():
    x, y = logistic_problem(40, 4, seed=1)
    xs = standardised(x)
    lmax, degenerate = glmnet_lambda_max(xs, y)
    assert not degenerate
    assert_allclose(lmax, np.max(np.abs(xs.T @ (y - y.mean()))) / len(y))
    assert glmnet_lambda_max(xs, y, alpha=0.5)[0] == pytest.approx(2 * lmax)


def test_lambda_max_of_constant_response_is_degenerate():
    assert glmnet_lambda_max(np.ones((5, 2)), np.ones(5)) == (0.0, True)


def test_at_or_above_lambda_max_every_coefficient_is_zero():
    x, y = logistic_problem(50, 5, seed=2)
    lmax = glmnet_lambda_grid(x, y, n_lambda=1)[0]

    path = glmnet_fit_path(x, y, lambdas=[2 * lmax, lmax])

    assert np.all(path.coefs == 0.0)
    assert_allclose(path.intercepts, np.log(y.mean() / (1 - y.mean())))


def test_just_below_lambda_max_the_most_correlated_feature_enters():
    x, y = logistic_problem(50, 5, seed=2)
    lmax = glmnet_lambda_grid(x, y, n_lambda=1)[0]
    corr = standardised(x).T @ (y - y.mean()) / len(y)
    lead = int(np.argmax(np.abs(corr)))

    path = glmnet_fit_path(x, y, lambdas=[lmax, 0.95 * lmax])

    assert np.sign(path.coefs[1][lead]) == np.sign(corr[lead])


@pytest.mark.parametrize("seed", range(20))
def test_small_lambda_matches_unpenalised_mle(seed):
    x, y = logistic_problem(30, 3, seed=100 + seed, coef_scale=0.2)
    oracle = newton_mle(x, y)

    path = glmnet_fit_path(x, y, n_lambda=100, min_ratio=1e-5)

    assert_allclose(path.coefs[-1], oracle[1:], atol=1e-3)
    assert_allclose(path.intercepts[-1], oracle[0], atol=1e-3)


def assert_kkt(path, x, y, tol=1e-6):
    xs = standardised(x)
    sd = x.std(axis=0)
    for t in range(len(path.lambdas)):
        lam = path.lambdas[t]
        p = expit(path.intercepts[t] + x @ path.coefs[t])
        grad = xs.T @ (y - p) / len(y)
        beta = path.coefs[t] * sd
        assert abs(np.mean(y - p)) <= tol
        for j in range(x.shape[1]):
            if beta[j] != 0:
                assert abs(grad[j] - lam * np.sign(beta[j])) <= tol, (t, j)
            else:
                assert abs(grad[j]) <= lam + tol, (t, j)


def test_kkt_conditions_hold_along_the_path():
    x, y = logistic_problem(80, 6, seed=7, coef_scale=0.8)
    path = glmnet_fit_path(x, y)

    assert len(path.lambdas) == 100 and not path.saturated
    assert_kkt(path, x, y)


def test_lambda_grid_is_geometric():
    grid = lambda_grid(2.0, n_lambda=5, min_ratio=1e-2)
    assert_allclose(grid, 2.0 * np.logspace(0, -2, 5))
    with pytest.raises(ValidationError, match="lambda_max > 0"):
        lambda_grid(0.0)


def test_path_rejects_increasing_lambdas():
    x, y = logistic_problem(20, 2, seed=3)
    with pytest.raises(ValidationError, match="strictly decreasing"):
        glmnet_fit_path(x, y, lambdas=[0.01, 0.02])


def test_path_rejects_single_class():
    with pytest.raises(ValidationError, match="both classes"):
        glmnet_fit_path(np.random.default_rng(0).standard_normal((6, 2)), np.zeros(6))


def test_separable_data_stops_on_deviance_ratio():
    x = np.concatenate([np.linspace(-3, -0.5, 10), np.linspace(0.5, 3, 10)])[:, None]
    y = (x[:, 0] > 0).astype(float)

    path = glmnet_fit_path(x, y, n_lambda=100, min_ratio=1e-6)

    assert path.saturated
    assert path.n_requested == 100
    assert len(path.lambdas) == len(path.intercepts) == len(path.coefs) == path.n_fitted < 100


def test_saturated_path_keeps_only_optimal_points():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((30, 3))
    y = (x[:, 0] + 0.05 * rng.standard_normal(30) > 0).astype(float)

    path = glmnet_fit_path(x, y, n_lambda=100, min_ratio=1e-6)

    assert path.saturated
    assert_kkt(path, x, y)


def test_elastic_net_scales_lambda_max_by_alpha():
    x, y = logistic_problem(60, 8, seed=11, coef_scale=0.6)
    lasso = glmnet_fit_path(x, y, n_lambda=20)
    mixed = glmnet_fit_path(x, y, n_lambda=20, alpha=0.5)
    assert mixed.lambda_max == pytest.approx(2 * lasso.lambda_max)
    assert np.all(mixed.coefs[0] == 0.0)
    assert np.count_nonzero(mixed.coefs[-1]) > 0


def test_pick_lambda_prefers_the_largest_on_ties():
    x, y = logistic_problem(40, 3, seed=5)
    lmax = glmnet_lambda_grid(x, y, n_lambda=1)[0]
    path = glmnet_fit_path(x, y, lambdas=[4 * lmax, 2 * lmax, lmax])
    # All three points are the null model, so every AUC ties.
    assert glmnet_pick_lambda(path, x, y) == 0


def test_validation_pick_keeps_the_informative_feature_across_seeds():
    kept = 0
    for seed in range(100):
        rng = np.random.default_rng(500 + seed)
        x = rng.standard_normal((200, 5))
        y = (rng.uniform(size=200) < expit(1.5 * x[:, 0])).astype(float)
        train, val = slice(0, 100), slice(100, 200)

        path = glmnet_fit_path(x[train], y[train], n_lambda=30, min_ratio=1e-3)
        chosen = glmnet_pick_lambda(path, x[val], y[val])

        kept += path.coefs[chosen][0] != 0
    assert kept >= 95
