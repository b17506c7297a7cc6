"""Two-component Beta mixture fit by EM, and the intersection threshold that
splits a score distribution into a low and a high group."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .errors import DegenerateFitError

CLAMP_EPS = 1e-4
_MIN_VAR = 1e-6
_MIN_WEIGHT = 1e-12
_MAX_CONC = 200.0


@dataclass
class BmmFit:
    alpha: np.ndarray                # (2,) > 0
    beta: np.ndarray                 # (2,) > 0
    weight: np.ndarray               # (2,) >= 0, sums to 1
    threshold: float
    low_component: int               # index of the component with smaller mean
    converged: bool
    iterations: int
    log_likelihood: float
    threshold_fallback: bool = False
    ll_history: list = field(default_factory=list, repr=False)

    @property
    def means(self) -> np.ndarray:
        return self.alpha / (self.alpha + self.beta)

    def component_logpdf(self, x, k) -> np.ndarray:
        a, b = self.alpha[k], self.beta[k]
        return (
            (a - 1.0) * np.log(x)
            + (b - 1.0) * np.log1p(-x)
            - special.betaln(a, b)
        )

    def posterior(self, x) -> np.ndarray:
        """Responsibility of each component for each value; shape (len(x), 2)."""
        x = clamp_unit(np.asarray(x, dtype=np.float64))
        log_p = np.stack(
            [
                np.log(max(self.weight[k], _MIN_WEIGHT)) + self.component_logpdf(x, k)
                for k in range(2)
            ],
            axis=1,
        )
        log_p -= special.logsumexp(log_p, axis=1, keepdims=True)
        return np.exp(log_p)


def clamp_unit(x: np.ndarray, eps: float = CLAMP_EPS) -> np.ndarray:
    """Clip into [eps, 1-eps]; Beta densities blow up at the endpoints."""
    return np.clip(x, eps, 1.0 - eps)


def _moment_match(mean: float, var: float):
    var = max(var, _MIN_VAR)
    var = min(var, mean * (1.0 - mean) * 0.999)  # keep alpha, beta positive
    common = mean * (1.0 - mean) / var - 1.0
    a, b = mean * common, (1.0 - mean) * common
    # cap total concentration: score clamping creates point masses at the
    # endpoints, and an uncapped component collapses onto one of them
    # (unbounded likelihood), hijacking the whole fit
    s = a + b
    if s > _MAX_CONC:
        a, b = a * _MAX_CONC / s, b * _MAX_CONC / s
    # floor the shape parameters at 1 (preserving the mean where possible) so
    # components stay unimodal; J/U-shaped fits put infinite density at both
    # clamped endpoints and drag the intersection threshold into the wrong mode
    if a < 1.0:
        a, b = 1.0, min((1.0 - mean) / mean, _MAX_CONC - 1.0)
    if b < 1.0:
        a, b = min(mean / (1.0 - mean), _MAX_CONC - 1.0), 1.0
    return a, b


def _log_density(x, alpha, beta, weight):
    log_p = np.stack(
        [
            np.log(max(weight[k], _MIN_WEIGHT))
            + (alpha[k] - 1.0) * np.log(x)
            + (beta[k] - 1.0) * np.log1p(-x)
            - special.betaln(alpha[k], beta[k])
            for k in range(2)
        ],
        axis=1,
    )
    return log_p


def fit_bmm(values, max_iter: int = 200, tol: float = 1e-6, seed: int = 0,
            restarts: int = 1) -> BmmFit:
    """EM fit of a two-component Beta mixture to values in [0, 1].

    The M-step uses weighted method of moments for (alpha, beta), which keeps
    every update closed-form.  Initialization splits the sample at its median
    and moment-matches each half; with restarts > 1, subsequent starts split
    at random quantiles and the best log-likelihood wins (ties: lowest start
    index).  Moment-matched M-steps can transiently lower the likelihood, so
    the loop runs until the likelihood stabilizes, keeps the best parameters
    seen, and records only accepted improvements in ll_history (which is
    therefore monotone).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size < 10:
        raise ValueError("need a flat vector of at least 10 values")
    x = clamp_unit(values)
    if np.ptp(x) == 0.0:
        raise DegenerateFitError("single mode; no fit")

    rng = np.random.default_rng(seed)
    best = None
    for r in range(restarts):
        q = 0.5 if r == 0 else float(rng.uniform(0.2, 0.8))
        fit = _fit_once(x, q, max_iter, tol)
        if best is None or fit.log_likelihood > best.log_likelihood + 1e-12:
            best = fit
    best.threshold, best.threshold_fallback = _threshold_with_fallback(best)
    return best


def _fit_once(x, split_quantile, max_iter, tol) -> BmmFit:
    cut = np.quantile(x, split_quantile)
    low = x[x <= cut]
    high = x[x > cut]
    if low.size == 0 or high.size == 0:
        low, high = x[x <= np.median(x)], x[x > np.median(x)]
    if high.size == 0:
        # median equals max: nudge apart deterministically
        low, high = x[x < x.max()], x[x == x.max()]
    alpha = np.zeros(2)
    beta = np.zeros(2)
    for k, part in enumerate((low, high)):
        alpha[k], beta[k] = _moment_match(float(part.mean()), float(part.var()))
    weight = np.array([low.size, high.size], dtype=np.float64) / x.size

    ll_prev = -np.inf
    best_ll = -np.inf
    best_params = (alpha.copy(), beta.copy(), weight.copy())
    history = []
    converged = False
    iterations = 0
    for it in range(1, max_iter + 1):
        log_p = _log_density(x, alpha, beta, weight)
        ll = float(special.logsumexp(log_p, axis=1).sum())
        if ll > best_ll:
            best_ll = ll
            best_params = (alpha.copy(), beta.copy(), weight.copy())
            history.append(ll)
        iterations = it
        if abs(ll - ll_prev) < tol and it > 1:
            converged = True
            break
        ll_prev = ll

        resp = np.exp(log_p - special.logsumexp(log_p, axis=1, keepdims=True))
        new_alpha, new_beta = alpha.copy(), beta.copy()
        for k in range(2):
            w_k = resp[:, k]
            total = w_k.sum()
            if total < _MIN_WEIGHT * x.size:
                continue        # starved component: freeze its parameters
            mean = float((w_k * x).sum() / total)
            var = float((w_k * (x - mean) ** 2).sum() / total)
            new_alpha[k], new_beta[k] = _moment_match(mean, var)
        alpha, beta = new_alpha, new_beta
        weight = resp.mean(axis=0)

    alpha, beta, weight = best_params
    means = alpha / (alpha + beta)
    return BmmFit(
        alpha=alpha,
        beta=beta,
        weight=weight,
        threshold=float("nan"),
        low_component=int(np.argmin(means)),
        converged=converged,
        iterations=iterations,
        log_likelihood=best_ll if history else float("-inf"),
        ll_history=history,
    )


def intersection_threshold(fit: BmmFit, grid_size: int = 1024) -> float:
    """Point between the component means where the weighted densities cross.

    Scans a grid between the means for sign changes of
    log(w_lo f_lo) - log(w_hi f_hi) and bisects each bracket; with several
    crossings the one nearest the midpoint of the means wins.  Raises when no
    crossing exists (see _threshold_with_fallback for the fallback policy).
    """
    means = fit.means
    lo, hi = fit.low_component, 1 - fit.low_component
    m_lo, m_hi = float(means[lo]), float(means[hi])
    if m_hi - m_lo <= 1e-3:
        raise ValueError("component means not separated")

    def gap(t):
        t = np.asarray([t]) if np.isscalar(t) else np.asarray(t)
        g = (
            np.log(max(fit.weight[lo], _MIN_WEIGHT))
            + fit.component_logpdf(t, lo)
            - np.log(max(fit.weight[hi], _MIN_WEIGHT))
            - fit.component_logpdf(t, hi)
        )
        return g if g.size > 1 else float(g[0])

    grid = np.linspace(m_lo, m_hi, grid_size)
    g = gap(grid)
    signs = np.sign(g)
    roots = []
    for k in range(grid_size - 1):
        if signs[k] == 0:
            roots.append(float(grid[k]))
        elif signs[k] * signs[k + 1] < 0:
            roots.append(float(optimize.brentq(gap, grid[k], grid[k + 1])))
    if signs[-1] == 0:
        roots.append(float(grid[-1]))
    if not roots:
        raise ValueError("no density crossing between the component means")
    mid = 0.5 * (m_lo + m_hi)
    return min(roots, key=lambda t: abs(t - mid))


def _threshold_with_fallback(fit: BmmFit):
    try:
        return intersection_threshold(fit), False
    except ValueError:
        means = fit.means
        return float(means.mean()), True


def density_curve(fit: BmmFit, points: int = 512):
    """(x, pdf_low, pdf_high, mixture) columns for plotting the fit."""
    x = np.linspace(CLAMP_EPS, 1.0 - CLAMP_EPS, points)
    lo, hi = fit.low_component, 1 - fit.low_component
    pdf_lo = np.exp(fit.component_logpdf(x, lo))
    pdf_hi = np.exp(fit.component_logpdf(x, hi))
    mixture = fit.weight[lo] * pdf_lo + fit.weight[hi] * pdf_hi
    return x, pdf_lo, pdf_hi, mixture
