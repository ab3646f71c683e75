import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lbv.countmodel import DesignMatrix, ModelFit, fit_poisson, poisson_loglik
from lbv.errors import ValidationError
from lbv.optim import numerical_gradient
from lbv.randparam import (
    RandomParamSpec,
    SimulatedPoisson,
    average_marginal_effects,
    fit_random_poisson,
    halton_sequence,
    halton_uniforms,
    primes,
    radical_inverse,
)


def test_halton_base_2():
    assert list(halton_sequence(2, 0, 4)) == [0.5, 0.25, 0.75, 0.125]


def test_halton_base_3():
    assert list(halton_sequence(3, 0, 3)) == [1 / 3, 2 / 3, 1 / 9]


def test_halton_skip():
    assert list(halton_sequence(2, 2, 2)) == [0.75, 0.125]


@given(st.sampled_from([2, 3, 5, 7, 11, 13]), st.integers(0, 50))
def test_halton_open_interval_and_distinct(prime, skip):
    n = min(prime ** 4, 2000)
    seq = halton_sequence(prime, skip, n)
    assert np.all((seq > 0) & (seq < 1))
    assert len(np.unique(seq)) == n


def test_radical_inverse_digits():
    # 11 in base 3 is 102 -> 0.201 base 3 = 2/3 + 0/9 + 1/27
    assert radical_inverse(11, 3) == 19 / 27


def test_halton_bad_base():
    with pytest.raises(ValueError):
        halton_sequence(1, 0, 3)


def test_primes():
    assert primes(6) == [2, 3, 5, 7, 11, 13]


def test_spec_validation():
    assert RandomParamSpec(("a", "b")).halton_primes == (2, 3)
    with pytest.raises(ValidationError):
        RandomParamSpec(("a",), draws=10)
    with pytest.raises(ValidationError):
        RandomParamSpec(("a", "b"), halton_primes=(3, 3))
    with pytest.raises(ValidationError):
        RandomParamSpec(("a",), halton_primes=(2, 3))


def test_uniforms_distinct_per_observation():
    u = halton_uniforms(5, RandomParamSpec(("x",), draws=50, seed=3))
    assert u.shape == (5, 50, 1)
    assert np.all((u > 0) & (u < 1))
    assert len({tuple(row[:, 0]) for row in u}) == 5
    assert all(len(np.unique(row[:, 0])) == 50 for row in u)


def gen(seed, sd=0.2, n=1000, b0=1.0, b1=0.5):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 1, n)
    y = rng.poisson(np.exp(b0 + (b1 + sd * rng.normal(size=n)) * x))
    return DesignMatrix(list(range(n)), y, ["constant", "x"], ["identity"] * 2,
                        np.column_stack([np.ones(n), x]))


def test_no_random_columns_reproduces_mle():
    d = gen(1, n=300)
    fixed = fit_poisson(d)
    fit = fit_random_poisson(d, RandomParamSpec(()))
    np.testing.assert_allclose(fit.beta, fixed.beta, atol=1e-6)
    assert fit.loglik_conv == pytest.approx(fixed.loglik_conv, abs=1e-8)


def test_sll_at_zero_sigma_is_exact_poisson():
    d = gen(2, n=300)
    fixed = fit_poisson(d)
    model = SimulatedPoisson(d, RandomParamSpec(("x",), seed=1))
    sll = float(np.sum(model.loglik_obs(fixed.beta, np.zeros(1))))
    assert sll == pytest.approx(poisson_loglik(fixed.beta, d.X, d.response), abs=1e-10)


def test_analytic_score_matches_central_differences(rng):
    d = gen(3, n=200)
    model = SimulatedPoisson(d, RandomParamSpec(("constant", "x"), draws=50, seed=2))
    for _ in range(5):
        p = np.concatenate([rng.uniform(0.2, 1.0, 2), rng.uniform(-3, -0.5, 2)])
        np.testing.assert_allclose(model.score(p), numerical_gradient(model.loglik, p),
                                   rtol=1e-6, atol=1e-6)


def test_draw_refinement_shrinks_differences():
    d = gen(4, n=500)
    params = np.array([1.0, 0.5, math.log(0.3)])

    def sll(r):
        return SimulatedPoisson(d, RandomParamSpec(("x",), draws=r, seed=9)).loglik(params)

    assert abs(sll(500) - sll(200)) < abs(sll(100) - sll(50))


def test_deterministic():
    d = gen(5, n=300)
    spec = RandomParamSpec(("x",), draws=100, seed=4)
    a, b = fit_random_poisson(d, spec), fit_random_poisson(d, spec)
    assert a.beta.tobytes() == b.beta.tobytes()
    assert a.sd_estimates == b.sd_estimates
    assert a.loglik_conv == b.loglik_conv


def test_recovers_random_coefficient():
    fit = fit_random_poisson(gen(0), RandomParamSpec(("x",), draws=200, seed=0))
    assert abs(fit.coefficients["x"] - 0.5) <= 0.1
    assert abs(fit.sd_estimates["x"]["estimate"] - 0.2) <= 0.1
    assert fit.sd_estimates["x"]["t_stat"] > 1.96
    assert fit.loglik_conv >= fit_poisson(gen(0)).loglik_conv
    assert fit.loglik_zero < fit.loglik_conv
    assert set(fit.marginal_effects) == {"x"}


def test_zero_sigma_collapses():
    fit = fit_random_poisson(gen(1, sd=0.0), RandomParamSpec(("x",), draws=200, seed=1))
    assert fit.sd_estimates["x"]["estimate"] >= 0
    assert abs(fit.sd_estimates["x"]["t_stat"]) < 1.96


def test_unknown_random_column():
    with pytest.raises(ValidationError):
        fit_random_poisson(gen(1, n=100), RandomParamSpec(("nope",)))


def toy_fit(beta, lam):
    names = ["constant", "x1", "x2"]
    return ModelFit("poisson", names, dict(zip(names, beta)), {}, {}, -10.0, -5.0, 0.5,
                    np.asarray(lam, dtype=float), True, 1)


def toy_design():
    X = np.array([[1.0, 0.2, 3.0], [1.0, 1.5, 2.0], [1.0, -0.3, 4.0]])
    return DesignMatrix(["a", "b", "c"], [1, 2, 3], ["constant", "x1", "x2"], ["identity"] * 3, X)


def test_ame_zero_coefficients():
    assert average_marginal_effects(toy_fit([0.7, 0.0, 0.0], [2.0, 2.0, 2.0]), toy_design()) == \
        {"x1": 0.0, "x2": 0.0}


def test_ame_hand_computed():
    lam = [1.0, 2.0, 6.0]
    me = average_marginal_effects(toy_fit([0.1, 0.5, -0.2], lam), toy_design())
    assert me["x1"] == pytest.approx(0.5 * 3.0, rel=1e-15)
    assert me["x2"] == pytest.approx(-0.2 * 3.0, rel=1e-15)


def test_ame_random_uses_draw_averaged_lambda():
    d = gen(6, n=200)
    fit = fit_random_poisson(d, RandomParamSpec(("x",), draws=50, seed=6))
    model = SimulatedPoisson(d, fit.spec)
    sigma = np.array([fit.sd_estimates["x"]["estimate"]])
    lam_bar = np.exp(model.eta(fit.beta, sigma)).mean(axis=1)
    assert fit.marginal_effects["x"] == pytest.approx(fit.coefficients["x"] * lam_bar.mean(), rel=1e-12)
