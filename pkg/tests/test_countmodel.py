import math

import numpy as np
import pytest
from scipy import stats

from lbv.countmodel import (
    DesignMatrix,
    FitOptions,
    build_design,
    check_rank,
    fit_count_model,
    fit_negative_binomial,
    fit_poisson,
    intercept_only_loglik,
    lagrange_multiplier_test,
    lm_statistic,
    mcfadden_rho2,
    negbin_loglik,
    negbin_score,
    poisson_loglik,
    poisson_score,
)
from lbv.errors import ConvergenceError, EstimationError, ValidationError


def design(X, y, names=None):
    X = np.column_stack([np.ones(len(y)), np.asarray(X).reshape(len(y), -1)])
    names = names or ["constant"] + [f"x{i}" for i in range(1, X.shape[1])]
    return DesignMatrix(list(range(len(y))), np.asarray(y), names, ["identity"] * len(names), X)


def synthetic(seed, n=50, beta=(0.5, 0.3)):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 1, n)
    y = rng.poisson(np.exp(beta[0] + beta[1] * x))
    return design(x, y)


def grid_search_mle(d, lo=-2.0, hi=2.0, points=41, tol=1e-7):
    """Coarse-to-fine grid maximiser of the Poisson log-likelihood via scipy.stats."""
    def ll(b0, b1):
        return stats.poisson.logpmf(d.response, np.exp(b0 + b1 * d.X[:, 1])).sum()

    c0, c1, half = (lo + hi) / 2, (lo + hi) / 2, (hi - lo) / 2
    while half > tol:
        g0 = np.linspace(c0 - half, c0 + half, points)
        g1 = np.linspace(c1 - half, c1 + half, points)
        vals = np.array([[ll(a, b) for b in g1] for a in g0])
        i, j = np.unravel_index(np.argmax(vals), vals.shape)
        c0, c1 = g0[i], g1[j]
        half = 4 * (2 * half / (points - 1))
    return np.array([c0, c1])


def test_intercept_only_closed_form():
    fit = fit_poisson(design(np.empty((2, 0)), [2, 4]))
    assert fit.coefficients["constant"] == pytest.approx(math.log(3), abs=1e-10)
    np.testing.assert_allclose(fit.fitted_lambda, [3.0, 3.0], rtol=1e-10)
    assert fit.loglik_conv == pytest.approx(fit.loglik_zero, abs=1e-10)
    assert fit.mcfadden_rho2 == pytest.approx(0.0, abs=1e-12)


def test_matches_grid_search_oracle():
    d = synthetic(11)
    fit = fit_poisson(d)
    np.testing.assert_allclose(fit.beta, grid_search_mle(d), atol=1e-4)


def test_score_at_optimum_below_tolerance():
    d = synthetic(3, n=200)
    fit = fit_poisson(d)
    assert np.max(np.abs(poisson_score(fit.beta, d.X, d.response.astype(float)))) < 1e-8
    assert fit.converged


def test_concave_at_optimum(rng):
    d = synthetic(4, n=200)
    fit = fit_poisson(d)
    best = poisson_loglik(fit.beta, d.X, d.response)
    for _ in range(20):
        delta = rng.normal(size=2)
        delta *= 0.01 / np.linalg.norm(delta)
        assert poisson_loglik(fit.beta + delta, d.X, d.response) < best


def test_gradient_matches_finite_differences(rng):
    d = synthetic(5, n=100)
    y = d.response.astype(float)
    for _ in range(10):
        beta = rng.uniform(-1, 1, 2)
        h = 1e-5
        fd = np.array([(poisson_loglik(beta + h * e, d.X, y) - poisson_loglik(beta - h * e, d.X, y)) / (2 * h)
                       for e in np.eye(2)])
        np.testing.assert_allclose(poisson_score(beta, d.X, y), fd, rtol=1e-6, atol=1e-6)


def test_column_scaling_invariance():
    d = synthetic(6, n=120)
    fit = fit_poisson(d)
    X2 = d.X.copy()
    X2[:, 1] *= 3.7
    fit2 = fit_poisson(DesignMatrix(d.ids, d.response, d.names, d.transforms, X2))
    assert fit2.coefficients["x1"] == pytest.approx(fit.coefficients["x1"] / 3.7, rel=1e-8)
    np.testing.assert_allclose(fit2.fitted_lambda, fit.fitted_lambda, rtol=1e-8)
    assert fit2.loglik_conv == pytest.approx(fit.loglik_conv, rel=1e-8)
    assert fit2.lm_stat == pytest.approx(fit.lm_stat, rel=1e-8)
    assert fit2.t_stats["x1"] == pytest.approx(fit.t_stats["x1"], rel=1e-6)


def test_fit_invariants():
    fit = fit_poisson(synthetic(8, n=150))
    assert fit.loglik_conv >= fit.loglik_zero
    assert 0 <= fit.mcfadden_rho2 < 1
    assert np.all(fit.fitted_lambda > 0)


def test_rank_deficiency_names_columns():
    rng = np.random.default_rng(0)
    x = rng.normal(size=30)
    d = design(np.column_stack([x, 2 * x]), rng.poisson(2, 30), ["constant", "cv_al", "cv_al_twice"])
    with pytest.raises(EstimationError, match="cv_al"):
        check_rank(d)
    with pytest.raises(EstimationError):
        fit_poisson(d)


def test_non_convergence_carries_trace():
    with pytest.raises(ConvergenceError) as err:
        fit_poisson(synthetic(9, n=100), FitOptions(max_iter=1))
    assert len(err.value.trace) == 1


def test_all_zero_response_is_an_error():
    with pytest.raises(ConvergenceError):
        fit_poisson(design(np.arange(5.0), [0] * 5))


# -- design construction ---------------------------------------------------------

def test_build_design_log_transform():
    rows = [{"site_id": "A", "n": 3, "aadt": 1000.0, "cv": 50.0},
            {"site_id": "B", "n": 1, "aadt": 2000.0, "cv": 70.0}]
    d = build_design(rows, "n", ["aadt", "cv"], {"aadt": "log"})
    assert d.names == ["constant", "ln(aadt)", "cv"]
    assert d.transforms == ["identity", "log", "identity"]
    np.testing.assert_allclose(d.X[:, 1], np.log([1000.0, 2000.0]))
    assert d.ids == ["A", "B"]


@pytest.mark.parametrize("rows, message", [
    ([{"site_id": "A", "n": 1, "aadt": 0.0}], "strictly positive"),
    ([{"site_id": "A", "n": 1, "aadt": None}], "missing value"),
])
def test_build_design_rejects_bad_cells(rows, message):
    with pytest.raises(ValidationError, match=message):
        build_design(rows, "n", ["aadt"], {"aadt": "log"})


def test_design_requires_constant_first():
    with pytest.raises(ValidationError):
        DesignMatrix([0, 1], [1, 2], ["x", "constant"], ["identity"] * 2,
                     np.array([[2.0, 1.0], [3.0, 1.0]]))


# -- LM test and rho^2 -------------------------------------------------------------

def test_lm_hand_case():
    assert lm_statistic([1, 2], [1, 2]) == pytest.approx(0.9, abs=1e-15)

    class Fit:
        fitted_lambda = np.array([1.0, 2.0])

    result = lagrange_multiplier_test(Fit, [1, 2])
    assert result.decision == "poisson_ok" and result.critical == 3.84


def test_lm_undefined_for_zero_means():
    with pytest.raises(ValueError):
        lm_statistic([0, 0], [0, 0])


def test_mcfadden_reference_values():
    assert mcfadden_rho2(-578.31, -336.72) == pytest.approx(0.4178, abs=5e-5)
    assert mcfadden_rho2(-226.73, -159.43) == pytest.approx(0.2968, abs=5e-5)
    assert mcfadden_rho2(-100.0, -100.0) == 0.0


def test_mcfadden_precondition():
    with pytest.raises(ValueError):
        mcfadden_rho2(0.0, -1.0)


def test_intercept_only_loglik_matches_scipy():
    y = np.array([0, 3, 5, 1, 9])
    assert intercept_only_loglik(y) == pytest.approx(stats.poisson.logpmf(y, y.mean()).sum(), rel=1e-12)


# -- negative binomial ----------------------------------------------------------------

def nb_data(seed, n=2000, alpha=1.0, beta=(1.0, 0.4)):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    mu = np.exp(beta[0] + beta[1] * x)
    y = rng.negative_binomial(1 / alpha, 1 / (1 + alpha * mu))
    return design(x, y)


def test_negbin_loglik_matches_scipy():
    d = nb_data(1, n=50)
    params = np.array([0.9, 0.3, math.log(0.7)])
    mu = np.exp(d.X @ params[:2])
    a = 0.7
    expected = stats.nbinom.logpmf(d.response, 1 / a, 1 / (1 + a * mu)).sum()
    assert negbin_loglik(params, d.X, d.response.astype(float)) == pytest.approx(expected, rel=1e-12)


def test_negbin_score_matches_finite_differences(rng):
    d = nb_data(2, n=80)
    y = d.response.astype(float)
    for _ in range(5):
        p = np.append(rng.uniform(-0.5, 1.0, 2), rng.uniform(-2, 1))
        h = 1e-6
        fd = np.array([(negbin_loglik(p + h * e, d.X, y) - negbin_loglik(p - h * e, d.X, y)) / (2 * h)
                       for e in np.eye(3)])
        np.testing.assert_allclose(negbin_score(p, d.X, y), fd, rtol=1e-5, atol=1e-5)


def test_negbin_recovers_alpha():
    d = nb_data(3)
    fit = fit_negative_binomial(d)
    assert abs(fit.alpha - 1.0) <= 0.2
    assert not fit.collapsed
    assert np.max(np.abs(negbin_score(np.append(fit.beta, math.log(fit.alpha)), d.X,
                                      d.response.astype(float)))) < 1e-8
    pois = fit_poisson(d)
    assert fit.loglik_conv >= pois.loglik_conv
    assert pois.lm_decision == "overdispersed"


def test_negbin_collapses_on_poisson_data():
    outcomes = []
    for seed in range(10):
        d = synthetic(seed, n=500)
        pois = fit_poisson(d)
        fit = fit_negative_binomial(d)
        boundary = np.sum((d.response - pois.fitted_lambda) ** 2 - d.response) <= 0
        assert fit.collapsed == boundary
        assert fit.loglik_conv >= pois.loglik_conv - 1e-9
        if fit.collapsed:
            assert fit.alpha == 0.0
        else:
            assert fit.alpha < 0.2
        outcomes.append(fit.collapsed)
    assert any(outcomes)


def test_auto_family_switches_on_overdispersion():
    assert fit_count_model(synthetic(1, n=300), "auto").family == "poisson"
    assert fit_count_model(nb_data(4, n=500), "auto").family == "negbin"
    with pytest.raises(ValidationError):
        fit_count_model(synthetic(1), "zip")
