"""Fixed-parameter crash-frequency models: Poisson by Newton-Raphson,
negative binomial (NB2) fallback, over-dispersion LM test, fit statistics."""

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .errors import ConvergenceError, EstimationError, ValidationError
from .optim import maximize, numerical_hessian

LM_CRITICAL = 3.84  # chi-square, 1 df, 95%
CONSTANT = "constant"
TRANSFORMS = ("identity", "log")


@dataclass(frozen=True)
class FitOptions:
    score_tol: float = 1e-8
    rel_loglik_tol: float = 1e-10
    max_iter: int = 100
    max_halvings: int = 40


@dataclass
class DesignMatrix:
    ids: list
    response: np.ndarray
    names: list
    transforms: list
    X: np.ndarray

    def __post_init__(self):
        self.response = np.asarray(self.response)
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] != self.response.shape[0]:
            raise ValidationError("response length must equal the number of design rows")
        if len(self.names) != self.X.shape[1] or len(self.transforms) != len(self.names):
            raise ValidationError("one name and one transform tag per column")
        if len(set(self.names)) != len(self.names):
            raise ValidationError("column names must be unique")
        if not self.names or self.names[0] != CONSTANT or not np.all(self.X[:, 0] == 1.0):
            raise ValidationError("first design column must be the constant")
        if not np.all(np.isfinite(self.X)):
            raise ValidationError("design matrix has missing or non-finite cells")
        if np.any(self.response < 0) or np.any(self.response != np.round(self.response)):
            raise ValidationError("response must be non-negative integer counts")
        self.response = self.response.astype(np.int64)

    @property
    def n_obs(self):
        return self.X.shape[0]

    def column(self, name):
        return self.X[:, self.names.index(name)]

    def subset(self, names):
        idx = [self.names.index(n) for n in names]
        return DesignMatrix(list(self.ids), self.response.copy(), [self.names[i] for i in idx],
                            [self.transforms[i] for i in idx], self.X[:, idx])


def column_label(name, transform):
    return f"ln({name})" if transform == "log" else name


def build_design(records, response, covariates, transforms=None, id_key="site_id"):
    """Assemble a design matrix from per-observation mappings.

    ``transforms`` maps covariate name to ``identity`` or ``log``; the natural
    log requires strictly positive raw values.
    """
    transforms = dict(transforms or {})
    records = list(records)
    names, tags, cols = [CONSTANT], ["identity"], [np.ones(len(records))]
    for cov in covariates:
        tag = transforms.get(cov, "identity")
        if tag not in TRANSFORMS:
            raise ValidationError(f"unknown transform {tag!r} for {cov!r}")
        raw = []
        for rec in records:
            value = rec.get(cov)
            if value is None or (isinstance(value, float) and math.isnan(value)):
                raise ValidationError(f"observation {rec.get(id_key)!r}: missing value for {cov!r}")
            raw.append(float(value))
        raw = np.array(raw)
        if tag == "log":
            if np.any(raw <= 0):
                raise ValidationError(f"log transform of {cov!r} needs strictly positive values")
            raw = np.log(raw)
        names.append(column_label(cov, tag))
        tags.append(tag)
        cols.append(raw)
    y = [rec.get(response) for rec in records]
    if any(v is None for v in y):
        raise ValidationError(f"missing response {response!r}")
    return DesignMatrix([rec.get(id_key) for rec in records], np.array(y, dtype=float),
                        names, tags, np.column_stack(cols))


@dataclass
class ModelFit:
    family: str
    names: list
    coefficients: dict
    std_errors: dict
    t_stats: dict
    loglik_zero: float
    loglik_conv: float
    mcfadden_rho2: float
    fitted_lambda: np.ndarray
    converged: bool
    iterations: int
    ids: list = field(default_factory=list)
    transforms: list = field(default_factory=list)
    lm_stat: float | None = None
    lm_decision: str | None = None
    alpha: float | None = None
    alpha_se: float | None = None
    collapsed: bool = False
    trace: list = field(default_factory=list)

    @property
    def beta(self):
        return np.array([self.coefficients[n] for n in self.names])


class LmTest(NamedTuple):
    statistic: float
    decision: str
    critical: float


def poisson_loglik(beta, X, y):
    eta = X @ beta
    return float(np.sum(y * eta - np.exp(eta) - gammaln(y + 1.0)))


def poisson_score(beta, X, y):
    return X.T @ (y - np.exp(X @ beta))


def poisson_information(beta, X):
    lam = np.exp(X @ beta)
    return X.T @ (X * lam[:, None])


def intercept_only_loglik(y):
    """Poisson log-likelihood at the closed-form constant-only fit ``ln(mean y)``."""
    y = np.asarray(y, dtype=float)
    ybar = y.mean()
    if ybar == 0:
        return 0.0
    return float(np.sum(y * math.log(ybar) - ybar - gammaln(y + 1.0)))


def mcfadden_rho2(loglik_zero, loglik_conv):
    if not (math.isfinite(loglik_zero) and math.isfinite(loglik_conv)) or loglik_zero >= 0:
        raise ValueError("McFadden rho^2 needs finite log-likelihoods with L(0) < 0")
    return 1.0 - loglik_conv / loglik_zero


def check_rank(design, tol=1e-10):
    """Raise :class:`EstimationError` naming the columns that are collinear."""
    X = design.X
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0] = 1.0
    _, R, piv = linalg.qr(X / scale, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * diag[0])) if diag.size else 0
    if rank < X.shape[1] or X.shape[0] < X.shape[1]:
        dependent = [design.names[i] for i in piv[rank:]] or design.names[X.shape[0]:]
        raise EstimationError(
            f"design is rank deficient (rank {rank} < {X.shape[1]}); collinear columns: "
            + ", ".join(dependent))


def lm_statistic(y, mu):
    """``[sum((y - mu)^2 - y)]^2 / (2 * sum(mu^2))``."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    denom = 2.0 * np.sum(mu ** 2)
    if denom == 0:
        raise ValueError("LM statistic undefined when every expected count is zero")
    return float(np.sum((y - mu) ** 2 - y) ** 2 / denom)


def lagrange_multiplier_test(fit, response, critical=LM_CRITICAL):
    stat = lm_statistic(response, fit.fitted_lambda)
    return LmTest(stat, "poisson_ok" if stat < critical else "overdispersed", critical)


def _tables(names, beta, cov):
    se = np.sqrt(np.where(np.diag(cov) > 0, np.diag(cov), np.nan))
    return (dict(zip(names, map(float, beta))), dict(zip(names, map(float, se))),
            dict(zip(names, map(float, beta / se))))


def fit_poisson(design, options=None):
    """Poisson maximum likelihood by Newton-Raphson with step halving."""
    opts = options or FitOptions()
    check_rank(design)
    X, y = design.X, design.response.astype(float)
    if y.sum() == 0:
        raise ConvergenceError("all responses are zero; the Poisson MLE does not exist")
    beta = np.zeros(X.shape[1])
    beta[0] = math.log(y.mean())
    ll = poisson_loglik(beta, X, y)
    trace = []
    converged = False
    for it in range(1, opts.max_iter + 1):
        score = poisson_score(beta, X, y)
        info = poisson_information(beta, X)
        try:
            step = linalg.solve(info, score, assume_a="pos")
        except (linalg.LinAlgError, ValueError) as exc:
            raise ConvergenceError(f"singular information matrix at iteration {it}: {exc}", trace)
        t = 1.0
        for _ in range(opts.max_halvings):
            cand = beta + t * step
            with np.errstate(over="ignore"):
                ll_c = poisson_loglik(cand, X, y)
            if np.isfinite(ll_c) and ll_c >= ll - 1e-13 * abs(ll):
                break
            t /= 2
        else:
            raise ConvergenceError(f"step halving failed at iteration {it}", trace)
        rel = abs(ll_c - ll) / max(abs(ll), 1e-300)
        beta, ll = cand, ll_c
        score = poisson_score(beta, X, y)
        trace.append((it, ll, float(np.max(np.abs(score)))))
        if np.max(np.abs(score)) < opts.score_tol and rel < opts.rel_loglik_tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"Poisson fit did not converge in {opts.max_iter} iterations", trace)
    cov = linalg.inv(poisson_information(beta, X))
    coefs, ses, ts = _tables(design.names, beta, cov)
    l0 = intercept_only_loglik(y)
    lam = np.exp(X @ beta)
    fit = ModelFit(
        family="poisson", names=list(design.names), coefficients=coefs, std_errors=ses,
        t_stats=ts, loglik_zero=l0, loglik_conv=ll,
        mcfadden_rho2=mcfadden_rho2(l0, ll) if l0 < 0 else float("nan"),
        fitted_lambda=lam, converged=True, iterations=len(trace), ids=list(design.ids),
        transforms=list(design.transforms), trace=trace,
    )
    lm = lagrange_multiplier_test(fit, y)
    fit.lm_stat, fit.lm_decision = lm.statistic, lm.decision
    return fit


# -- negative binomial (NB2: var = mu + alpha mu^2) ---------------------------

ALPHA_FLOOR = 1e-8


def _log_rising(y, alpha):
    """sum_{j<y} log1p(alpha * j) for each y."""
    ymax = int(y.max()) if y.size else 0
    c = np.concatenate([[0.0], np.cumsum(np.log1p(alpha * np.arange(ymax)))])
    return c[y]


def negbin_loglik(params, X, y):
    beta, alpha = params[:-1], math.exp(params[-1])
    eta = X @ beta
    mu = np.exp(eta)
    yi = y.astype(np.int64)
    ll = (_log_rising(yi, alpha) - gammaln(y + 1.0) + y * eta
          - (y + 1.0 / alpha) * np.log1p(alpha * mu))
    return float(np.sum(ll))


def negbin_score(params, X, y):
    beta, alpha = params[:-1], math.exp(params[-1])
    mu = np.exp(X @ beta)
    denom = 1.0 + alpha * mu
    g_beta = X.T @ ((y - mu) / denom)
    ymax = int(y.max()) if y.size else 0
    j = np.arange(ymax)
    c = np.concatenate([[0.0], np.cumsum(j / (1.0 + alpha * j))])
    d_alpha = (c[y.astype(np.int64)] + np.log1p(alpha * mu) / alpha ** 2
               - (y + 1.0 / alpha) * mu / denom)
    return np.append(g_beta, alpha * np.sum(d_alpha))


def fit_negative_binomial(design, options=None, alpha_start=0.5):
    """NB2 maximum likelihood over ``(beta, ln alpha)``.

    When the Poisson fit has a non-positive score for alpha at zero, the
    likelihood is maximised on the boundary and the result is reported as
    collapsing to Poisson (alpha = 0) rather than as a failure.
    """
    opts = options or FitOptions()
    pois = fit_poisson(design, opts)
    X, y = design.X, design.response.astype(float)
    boundary_score = float(np.sum((y - pois.fitted_lambda) ** 2 - y))
    if boundary_score <= 0:
        return _collapsed_negbin(pois)
    x0 = np.append(pois.beta, math.log(alpha_start))
    params, iterations, trace = maximize(
        lambda p: negbin_loglik(p, X, y), lambda p: negbin_score(p, X, y), x0,
        gtol=opts.score_tol, rel_tol=opts.rel_loglik_tol, max_iter=opts.max_iter,
        what="negative binomial fit")
    alpha = math.exp(params[-1])
    if alpha < ALPHA_FLOOR:
        return _collapsed_negbin(pois)
    H = numerical_hessian(lambda p: negbin_score(p, X, y), params)
    cov = linalg.inv(-H)
    coefs, ses, ts = _tables(design.names, params[:-1], cov[:-1, :-1])
    ll = negbin_loglik(params, X, y)
    l0 = _negbin_null_loglik(y, opts)
    return ModelFit(
        family="negbin", names=list(design.names), coefficients=coefs, std_errors=ses,
        t_stats=ts, loglik_zero=l0, loglik_conv=ll, mcfadden_rho2=mcfadden_rho2(l0, ll),
        fitted_lambda=np.exp(X @ params[:-1]), converged=True, iterations=iterations,
        ids=list(design.ids), transforms=list(design.transforms),
        lm_stat=pois.lm_stat, lm_decision=pois.lm_decision,
        alpha=alpha, alpha_se=alpha * math.sqrt(cov[-1, -1]) if cov[-1, -1] > 0 else float("nan"),
        trace=trace,
    )


def _negbin_null_loglik(y, opts):
    """Constant-only NB2 log-likelihood: beta_0 = ln(mean y), alpha profiled out."""
    X0 = np.ones((y.size, 1))
    b0 = math.log(y.mean())
    if np.sum((y - y.mean()) ** 2 - y) <= 0:
        return intercept_only_loglik(y)
    params, _, _ = maximize(lambda p: negbin_loglik(p, X0, y), lambda p: negbin_score(p, X0, y),
                            np.array([b0, math.log(0.5)]), gtol=opts.score_tol,
                            what="negative binomial null model")
    return negbin_loglik(params, X0, y)


def _collapsed_negbin(pois):
    fit = ModelFit(**{k: getattr(pois, k) for k in ModelFit.__dataclass_fields__})
    fit.family = "negbin"
    fit.alpha = 0.0
    fit.collapsed = True
    return fit


def fit_count_model(design, family="poisson", options=None, critical=LM_CRITICAL):
    """Dispatch on ``family``; ``auto`` fits Poisson and switches to NB when
    the LM test reports over-dispersion."""
    if family == "poisson":
        return fit_poisson(design, options)
    if family == "negbin":
        return fit_negative_binomial(design, options)
    if family == "auto":
        pois = fit_poisson(design, options)
        if lagrange_multiplier_test(pois, design.response, critical).decision == "poisson_ok":
            return pois
        return fit_negative_binomial(design, options)
    raise ValidationError(f"unknown family {family!r}")
