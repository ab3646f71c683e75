"""Finite differences and a quasi-Newton maximiser with a Newton polish."""

import numpy as np
from scipy import optimize

from .errors import ConvergenceError


def _steps(x, rel_step):
    return rel_step * np.maximum(np.abs(x), 1.0)


def numerical_gradient(f, x, rel_step=1e-6):
    """Central-difference gradient with step ``rel_step * max(|x|, 1)``."""
    x = np.asarray(x, dtype=float)
    h = _steps(x, rel_step)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h[k]
        g[k] = (f(x + e) - f(x - e)) / (2 * h[k])
    return g


def numerical_hessian(grad, x, rel_step=1e-6):
    """Symmetrised central-difference Jacobian of ``grad``."""
    x = np.asarray(x, dtype=float)
    h = _steps(x, rel_step)
    H = np.empty((x.size, x.size))
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h[k]
        H[:, k] = (grad(x + e) - grad(x - e)) / (2 * h[k])
    return (H + H.T) / 2


def maximize(f, grad, x0, gtol, rel_tol=1e-10, max_iter=100, polish_iter=20, what="model"):
    """Maximise ``f`` by BFGS, then Newton-polish until ``max|grad| < gtol``.

    Raises :class:`ConvergenceError` with the iteration trace when the score
    tolerance is not met. Returns ``(x, iterations, trace)``.
    """
    trace = []

    def neg_f(x):
        v = f(x)
        return -v if np.isfinite(v) else np.inf

    res = optimize.minimize(neg_f, np.asarray(x0, dtype=float), jac=lambda x: -grad(x),
                            method="BFGS", options={"gtol": gtol * 0.1, "maxiter": max_iter * 10})
    x = res.x
    ll = f(x)
    g = grad(x)
    iterations = int(res.nit)
    trace.append((iterations, float(ll), float(np.max(np.abs(g)))))
    prev = -np.inf
    for _ in range(polish_iter):
        if np.max(np.abs(g)) < gtol and abs(ll - prev) <= rel_tol * max(abs(ll), 1.0):
            return x, iterations, trace
        H = numerical_hessian(grad, x)
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            break
        if g @ step <= 0:
            # Hessian not negative definite here; fall back to a gradient step
            step = g / max(np.max(np.abs(np.diag(H))), 1.0)
        t = 1.0
        for _ in range(40):
            cand = x + t * step
            ll_c = f(cand)
            if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * max(abs(ll), 1.0):
                break
            t /= 2
        else:
            break
        prev, x, ll = ll, cand, ll_c
        g = grad(x)
        iterations += 1
        trace.append((iterations, float(ll), float(np.max(np.abs(g)))))
    if np.max(np.abs(g)) < gtol:
        return x, iterations, trace
    raise ConvergenceError(
        f"{what}: score max-norm {np.max(np.abs(g)):.3g} did not reach {gtol:g}", trace)
