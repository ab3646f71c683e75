"""Random-parameter Poisson regression by maximum simulated likelihood over
shifted Halton draws, with average marginal effects."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import gammaln, logsumexp, ndtri

from .countmodel import CONSTANT, FitOptions, ModelFit, fit_poisson, intercept_only_loglik, mcfadden_rho2
from .errors import ValidationError
from .optim import maximize, numerical_hessian

DEFAULT_DRAWS = 200
DEFAULT_SKIP = 10
MIN_DRAWS = 25
SIGMA_START = 0.1
MSL_SCORE_TOL = 1e-5
COLLAPSE_TOL = 1e-6


def primes(n):
    """The first ``n`` primes."""
    out, cand = [], 2
    while len(out) < n:
        if all(cand % p for p in out if p * p <= cand):
            out.append(cand)
        cand += 1
    return out


def radical_inverse(index, base):
    """Van der Corput radical inverse of a positive integer, correctly rounded."""
    num, den = 0, 1
    while index > 0:
        index, digit = divmod(index, base)
        num = num * base + digit
        den *= base
    return num / den


def halton_sequence(prime, skip=0, n=1):
    """Elements ``skip + 1 .. skip + n`` of the one-dimensional Halton sequence."""
    if prime < 2:
        raise ValueError("Halton base must be at least 2")
    if n < 1:
        raise ValueError("n must be positive")
    return np.array([radical_inverse(i, prime) for i in range(skip + 1, skip + n + 1)])


@dataclass(frozen=True)
class RandomParamSpec:
    random_columns: tuple = ()
    draws: int = DEFAULT_DRAWS
    halton_primes: tuple | None = None
    halton_skip: int = DEFAULT_SKIP
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "random_columns", tuple(self.random_columns))
        if self.halton_primes is None:
            object.__setattr__(self, "halton_primes", tuple(primes(len(self.random_columns))))
        else:
            object.__setattr__(self, "halton_primes", tuple(self.halton_primes))
        if self.draws < MIN_DRAWS:
            raise ValidationError(f"need at least {MIN_DRAWS} draws, got {self.draws}")
        if len(self.halton_primes) != len(self.random_columns):
            raise ValidationError("one Halton prime per random column")
        if len(set(self.halton_primes)) != len(self.halton_primes):
            raise ValidationError("Halton primes must be distinct")
        if len(set(self.random_columns)) != len(self.random_columns):
            raise ValidationError("random columns must be distinct")


def halton_uniforms(n_obs, spec):
    """``(n_obs, draws, k)`` uniforms: one Halton sequence per random column,
    rotated by an independent seeded uniform shift per observation."""
    k = len(spec.random_columns)
    base = np.column_stack([halton_sequence(p, spec.halton_skip, spec.draws)
                            for p in spec.halton_primes]) if k else np.empty((spec.draws, 0))
    shift = np.random.default_rng(spec.seed).random((n_obs, 1, k))
    u = np.mod(base[None, :, :] + shift, 1.0)
    eps = np.finfo(float).eps
    return np.clip(u, eps, 1.0 - eps)


def normal_draws(n_obs, spec):
    return ndtri(halton_uniforms(n_obs, spec))


class SimulatedPoisson:
    """Simulated log-likelihood of a Poisson model with normal random coefficients.

    Parameters are ``[beta (all columns), ln sigma (random columns)]``.
    """

    def __init__(self, design, spec):
        missing = [c for c in spec.random_columns if c not in design.names]
        if missing:
            raise ValidationError(f"random columns not in design: {missing}")
        self.X = design.X
        self.y = design.response.astype(float)
        self.p = self.X.shape[1]
        self.rand_idx = np.array([design.names.index(c) for c in spec.random_columns], dtype=int)
        self.z = normal_draws(design.n_obs, spec)
        # z_irk * x_ik, the per-draw multiplier of sigma_k
        self.zx = self.z * self.X[:, self.rand_idx][:, None, :]
        self.log_fact = gammaln(self.y + 1.0)
        self.log_r = math.log(spec.draws)

    def split(self, params):
        return params[:self.p], np.exp(params[self.p:])

    def eta(self, beta, sigma):
        return (self.X @ beta)[:, None] + self.zx @ sigma

    def _terms(self, beta, sigma):
        eta = self.eta(beta, sigma)
        with np.errstate(over="ignore"):
            lam = np.exp(eta)
        logp = self.y[:, None] * eta - lam - self.log_fact[:, None]
        return eta, lam, logp

    def loglik_obs(self, beta, sigma):
        _, _, logp = self._terms(beta, sigma)
        return logsumexp(logp, axis=1) - self.log_r

    def loglik(self, params):
        beta, sigma = self.split(params)
        return float(np.sum(self.loglik_obs(beta, sigma)))

    def _weighted_resid(self, beta, sigma):
        _, lam, logp = self._terms(beta, sigma)
        w = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
        return w * (self.y[:, None] - lam)

    def score(self, params):
        beta, sigma = self.split(params)
        wr = self._weighted_resid(beta, sigma)
        g_beta = self.X.T @ wr.sum(axis=1)
        g_sigma = np.einsum("ir,irk->k", wr, self.zx)
        return np.concatenate([g_beta, g_sigma * sigma])

    def score_natural(self, params):
        """Score in ``[beta, sigma]`` coordinates (sigma unconstrained in sign)."""
        beta, sigma = params[:self.p], params[self.p:]
        wr = self._weighted_resid(beta, sigma)
        return np.concatenate([self.X.T @ wr.sum(axis=1), np.einsum("ir,irk->k", wr, self.zx)])

    def mean_lambda(self, beta, sigma):
        with np.errstate(over="ignore"):
            return np.exp(self.eta(beta, sigma)).mean(axis=1)


@dataclass
class RandomParamFit(ModelFit):
    sd_estimates: dict = field(default_factory=dict)
    draws_used: int = 0
    marginal_effects: dict = field(default_factory=dict)
    collapsed_columns: list = field(default_factory=list)
    spec: RandomParamSpec | None = None


def fit_random_poisson(design, spec, options=None, start=None):
    """Maximum simulated likelihood estimate of a random-parameter Poisson model.

    Starts from the fixed-parameter Poisson estimate with every sigma at 0.1.
    Standard errors come from the numerical Hessian of the simulated
    log-likelihood in ``(beta, sigma)`` coordinates.
    """
    opts = options or FitOptions(score_tol=MSL_SCORE_TOL)
    model = SimulatedPoisson(design, spec)
    k = len(spec.random_columns)
    base = start if start is not None else fit_poisson(design)
    x0 = np.concatenate([base.beta, np.full(k, math.log(SIGMA_START))])
    params, iterations, trace = maximize(
        model.loglik, model.score, x0, gtol=opts.score_tol, rel_tol=opts.rel_loglik_tol,
        max_iter=opts.max_iter, what="random-parameter Poisson fit")
    beta, sigma = model.split(params)
    natural = np.concatenate([beta, sigma])
    H = numerical_hessian(model.score_natural, natural)
    try:
        cov = linalg.inv(-H)
    except linalg.LinAlgError:
        cov = np.full_like(H, np.nan)
    var = np.diag(cov)
    se = np.sqrt(np.where(var > 0, var, np.nan))
    names = list(design.names)
    ll = model.loglik(params)
    l0 = intercept_only_loglik(model.y)

    collapsed, sd_estimates = [], {}
    for j, col in enumerate(spec.random_columns):
        xk = design.X[:, model.rand_idx[j]]
        if sigma[j] * math.sqrt(np.mean(xk ** 2)) < COLLAPSE_TOL:
            collapsed.append(col)
        s_se = se[model.p + j]
        sd_estimates[col] = {"estimate": float(sigma[j]), "std_error": float(s_se),
                             "t_stat": float(sigma[j] / s_se)}
    fit = RandomParamFit(
        family="random-poisson", names=names,
        coefficients=dict(zip(names, map(float, beta))),
        std_errors=dict(zip(names, map(float, se[:model.p]))),
        t_stats=dict(zip(names, map(float, beta / se[:model.p]))),
        loglik_zero=l0, loglik_conv=ll, mcfadden_rho2=mcfadden_rho2(l0, ll) if l0 < 0 else float("nan"),
        fitted_lambda=model.mean_lambda(beta, sigma), converged=True, iterations=iterations,
        ids=list(design.ids), transforms=list(design.transforms), trace=trace,
        sd_estimates=sd_estimates, draws_used=spec.draws, collapsed_columns=collapsed, spec=spec,
    )
    fit.marginal_effects = average_marginal_effects(fit, design)
    return fit


def average_marginal_effects(fit, design):
    """Mean over observations of ``beta_k * lambda_i`` for each non-constant column.

    ``lambda_i`` is the draw-averaged expected count for random-parameter fits
    and the fitted mean otherwise. Log-transformed columns are per log-unit.
    """
    lam = np.asarray(fit.fitted_lambda, dtype=float)
    if getattr(fit, "spec", None) is not None:
        model = SimulatedPoisson(design, fit.spec)
        sigma = np.array([fit.sd_estimates[c]["estimate"] for c in fit.spec.random_columns])
        lam = model.mean_lambda(fit.beta, sigma)
    return {name: float(fit.coefficients[name] * lam.mean())
            for name in fit.names if name != CONSTANT}
