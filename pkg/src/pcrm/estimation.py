"""Numerical core for the dose-finding engine.

Standardized dose-label algebra, indifference-interval skeleton calibration,
Bayesian posterior summaries for the one-parameter toxicity model, and
small-sample fixed-intercept logistic regression with Wald or
likelihood-ratio screening p-values.

The one-parameter working model is

    psi(x, beta) = expit(a0 + exp(beta) * x)

with a fixed intercept a0 (3 by default) and a normal prior on beta. The
exp() keeps the dose effect positive, so estimated toxicity is always
monotone over the ordered dose labels.

The Newton solver and the posterior density are jitted: a simulation run
calls them millions of times on tiny arrays where numpy dispatch overhead
dominates the arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numba import njit
from scipy import special

DEFAULT_INTERCEPT = 3.0
DEFAULT_PRIOR_VARIANCE = 1.34

# Coefficient magnitude treated as numerically divergent (quasi-separation).
COEF_CAP = 15.0

# Composite quadrature: Gauss-Legendre panels placed at the posterior mode
# plus/minus these multiples of the local curvature scale, clipped to the
# support below. A second pass at higher order guards the error contract.
_PANEL_OFFSETS = np.array([0.0, 1.0, 2.0, 3.0, 5.0, 8.0, 12.0, 20.0, 40.0])
_SUPPORT = (-15.0, 15.0)
_GL_LO = np.polynomial.legendre.leggauss(15)
_GL_HI = np.polynomial.legendre.leggauss(24)
_QUAD_RTOL = 1e-8


class EstimationError(Exception):
    """Numerical failure in the estimation layer."""


class QuadratureError(EstimationError):
    """Posterior quadrature failed to meet its error target."""


def expit(x):
    return special.expit(x)


def logit(p):
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    out = np.log(p / (1.0 - p))
    return float(out) if out.ndim == 0 else out


def _log_expit(x):
    # log(expit(x)) without overflow for large |x|
    return -np.logaddexp(0.0, -x)


@dataclass(frozen=True)
class CrmPrior:
    """Normal prior on the slope of the one-parameter working model."""

    mean: float = 0.0
    variance: float = DEFAULT_PRIOR_VARIANCE
    intercept: float = DEFAULT_INTERCEPT

    def __post_init__(self):
        if self.variance <= 0.0:
            raise ValueError("prior variance must be positive")

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class FittedModel:
    """Fixed-intercept logistic fit over (dose label, selected covariates).

    ``gammas`` and ``p_values`` are keyed by covariate index. Covariates whose
    column was constant in the data carry gamma NaN and p-value 1.0, and are
    listed in ``degenerate``. ``separation`` marks capped coefficients or a
    singular information matrix; such fits must not drive dose assignment.
    """

    dose_coef: float
    gammas: dict[int, float]
    intercept: float
    cov_matrix: np.ndarray | None
    p_values: dict[int, float]
    converged: bool
    separation: bool
    loglik: float = float("nan")
    degenerate: tuple[int, ...] = ()
    indices: tuple[int, ...] = ()

    @property
    def usable_for_dosing(self) -> bool:
        """True when the fit may pick doses: clean, converged, monotone."""
        return (
            self.converged
            and not self.separation
            and not self.degenerate
            and self.dose_coef > 0.0
        )

    def predict(self, labels, pattern: Sequence[int]) -> np.ndarray:
        """Estimated DLT probability at each label for one covariate pattern.

        ``pattern`` gives the 0/1 values of the fitted covariates aligned
        with ``indices`` (the order the fit was requested in).
        """
        shift = 0.0
        for idx, value in zip(self.indices, pattern):
            gamma = self.gammas[idx]
            if not math.isnan(gamma):
                shift += gamma * value
        eta = self.intercept + self.dose_coef * np.asarray(labels, float) + shift
        return expit(eta)


def dose_labels(skeleton, intercept: float = DEFAULT_INTERCEPT, prior_slope: float = 1.0):
    """Standardized dose labels d_j with logit(p0j) = intercept + slope * d_j."""
    skeleton = np.asarray(skeleton, dtype=float)
    if prior_slope <= 0.0:
        raise ValueError("prior_slope must be positive")
    if np.any(skeleton <= 0.0) or np.any(skeleton >= 1.0):
        raise ValueError("skeleton values must lie strictly inside (0, 1)")
    if np.any(np.diff(skeleton) <= 0.0):
        raise ValueError("skeleton must be strictly increasing")
    return (logit(skeleton) - intercept) / prior_slope


def calibrate_skeleton(
    p_t: float,
    num_doses: int,
    nu: int,
    delta: float = 0.08,
    intercept: float = DEFAULT_INTERCEPT,
) -> np.ndarray:
    """Indifference-interval skeleton for the one-parameter logistic model.

    Anchors dose ``nu`` at the target rate and extends outward so that each
    adjacent pair of doses is separated by a +/- ``delta`` toxicity band under
    the working model; the default produces the (0.17, 0.33) band around 0.25.
    """
    if not 0.0 < p_t < 1.0:
        raise ValueError("target rate must lie in (0, 1)")
    if num_doses < 1:
        raise ValueError("need at least one dose")
    if not 1 <= nu <= num_doses:
        raise ValueError("anchor index out of range")
    if not 0.0 < delta < min(p_t, 1.0 - p_t):
        raise ValueError("delta must satisfy 0 < delta < min(p_t, 1 - p_t)")

    lo = logit(p_t - delta) - intercept
    hi = logit(p_t + delta) - intercept
    x = np.empty(num_doses)
    x[nu - 1] = logit(p_t) - intercept
    for k in range(nu - 1, num_doses - 1):
        slope = lo / x[k]
        x[k + 1] = hi / slope
    for k in range(nu - 1, 0, -1):
        slope = hi / x[k]
        x[k - 1] = lo / slope
    skeleton = expit(intercept + x)
    if np.any(np.diff(skeleton) <= 0.0) or np.any(skeleton <= 0.0) or np.any(skeleton >= 1.0):
        raise EstimationError("skeleton calibration left (0, 1)")
    return skeleton


# --- posterior quadrature ---------------------------------------------------

@njit(cache=True)
def _nb_log_posterior(nodes, labels, ntox, ntot, a0, mu, sd):
    out = np.empty(nodes.size)
    for i in range(nodes.size):
        eb = math.exp(nodes[i])
        ll = 0.0
        for j in range(labels.size):
            eta = a0 + eb * labels[j]
            if eta > 0.0:
                lp = -math.log1p(math.exp(-eta))
                lq = lp - eta
            else:
                lq = -math.log1p(math.exp(eta))
                lp = lq + eta
            ll += ntox[j] * lp + (ntot[j] - ntox[j]) * lq
        d = (nodes[i] - mu) / sd
        out[i] = ll - 0.5 * d * d
    return out


@njit(cache=True)
def _nb_posterior_mode(labels, ntox, ntot, a0, mu, var):
    """Damped Newton search for the posterior mode; returns (mode, curvature)."""
    b = mu
    curv = -1.0 / var
    for _ in range(80):
        eb = math.exp(b)
        grad = -(b - mu) / var
        curv = -1.0 / var
        for j in range(labels.size):
            t = eb * labels[j]
            eta = a0 + t
            if eta >= 0.0:
                p = 1.0 / (1.0 + math.exp(-eta))
            else:
                e = math.exp(eta)
                p = e / (1.0 + e)
            resid = ntox[j] - ntot[j] * p
            grad += resid * t
            curv += resid * t - ntot[j] * p * (1.0 - p) * t * t
        if curv >= 0.0 or not math.isfinite(curv):
            curv = -1.0 / var
        step = grad / curv
        if step > 2.0:
            step = 2.0
        elif step < -2.0:
            step = -2.0
        b -= step
        if b > 15.0:
            b = 15.0
        elif b < -15.0:
            b = -15.0
        if abs(step) < 1e-12:
            break
    if curv >= 0.0 or not math.isfinite(curv):
        curv = -1.0 / var
    return b, curv


def _aggregate(data: Iterable[tuple[float, int]]):
    """Collapse (label, dlt) observations to per-label binomial counts."""
    counts: dict[float, list[int]] = {}
    for label, dlt in data:
        label = float(label)
        if not math.isfinite(label):
            raise ValueError("dose labels must be finite")
        if dlt not in (0, 1):
            raise ValueError("outcomes must be 0 or 1")
        cell = counts.setdefault(label, [0, 0])
        cell[0] += dlt
        cell[1] += 1
    labels = np.array(sorted(counts), dtype=float)
    ntox = np.array([counts[l][0] for l in labels], dtype=float)
    ntot = np.array([counts[l][1] for l in labels], dtype=float)
    return labels, ntox, ntot


def _quad_nodes(mode, scale, nodes):
    edges = np.concatenate([mode - _PANEL_OFFSETS[::-1] * scale, mode + _PANEL_OFFSETS[1:] * scale])
    edges = np.unique(np.clip(edges, *_SUPPORT))
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    xs, ws = nodes
    points = (mid[:, None] + half[:, None] * xs[None, :]).ravel()
    weights = (half[:, None] * ws[None, :]).ravel()
    return points, weights


def _posterior_average(fn, labels, ntox, ntot, prior: CrmPrior):
    """E[fn(beta) | data] by composite quadrature, checked at two orders."""
    mode, curv = _nb_posterior_mode(labels, ntox, ntot, prior.intercept, prior.mean, prior.variance)
    scale = max(math.sqrt(-1.0 / curv), 0.05)

    pts_lo, wts_lo = _quad_nodes(mode, scale, _GL_LO)
    pts_hi, wts_hi = _quad_nodes(mode, scale, _GL_HI)
    points = np.concatenate([pts_lo, pts_hi])
    logw = _nb_log_posterior(points, labels, ntox, ntot, prior.intercept, prior.mean, prior.sd)
    logw -= logw.max()
    values = np.asarray(fn(points))

    results = []
    for sl, wts in ((slice(0, pts_lo.size), wts_lo), (slice(pts_lo.size, None), wts_hi)):
        w = np.exp(logw[sl]) * wts
        den = w.sum()
        if not math.isfinite(den) or den <= 0.0:
            raise QuadratureError("posterior mass underflowed")
        results.append(values[..., sl] @ w / den)
    lo, hi = results
    err = np.max(np.abs(lo - hi) / np.maximum(1.0, np.abs(hi)))
    if not np.all(np.isfinite(hi)) or err > _QUAD_RTOL:
        raise QuadratureError(f"quadrature did not converge (rel err {err:.2e})")
    return hi


def posterior_slope(data: Iterable[tuple[float, int]], prior: CrmPrior) -> float:
    """Posterior mean of the slope parameter given (label, dlt) history."""
    labels, ntox, ntot = _aggregate(data)
    if labels.size == 0:
        return prior.mean
    return float(_posterior_average(lambda b: b, labels, ntox, ntot, prior))


def posterior_dlt_probs(
    data: Iterable[tuple[float, int]],
    prior: CrmPrior,
    grid_labels,
    method: str = "plugin",
) -> np.ndarray:
    """Estimated DLT probability at each grid label.

    ``plugin`` evaluates the working model at the posterior mean slope;
    ``mean`` returns the full posterior expectation of each probability.
    """
    grid_labels = np.asarray(grid_labels, dtype=float)
    labels, ntox, ntot = _aggregate(data)
    if method == "plugin":
        if labels.size == 0:
            beta_hat = prior.mean
        else:
            beta_hat = float(_posterior_average(lambda b: b, labels, ntox, ntot, prior))
        return expit(prior.intercept + math.exp(beta_hat) * grid_labels)
    if method == "mean":
        fn = lambda b: expit(prior.intercept + np.exp(b)[None, :] * grid_labels[:, None])
        return np.asarray(_posterior_average(fn, labels, ntox, ntot, prior))
    raise ValueError(f"unknown posterior probability method: {method!r}")


def wald_pvalue(coef: float, se: float) -> float:
    """Two-sided normal-test p-value for coef/se."""
    if se <= 0.0 or not math.isfinite(se):
        raise ValueError("standard error must be positive")
    return float(2.0 * (1.0 - special.ndtr(abs(coef / se))))


# --- fixed-intercept logistic MLE -------------------------------------------

@njit(cache=True)
def _nb_weighted_ll(X, w, s, theta, a0):
    n, k = X.shape
    ll = 0.0
    for i in range(n):
        eta = a0
        for j in range(k):
            eta += X[i, j] * theta[j]
        if eta > 0.0:
            lp = -math.log1p(math.exp(-eta))
            lq = lp - eta
        else:
            lq = -math.log1p(math.exp(eta))
            lp = lq + eta
        ll += s[i] * lp + (w[i] - s[i]) * lq
    return ll


@njit(cache=True)
def _nb_solve(A, b):
    """Gaussian elimination with partial pivoting; returns (x, ok)."""
    k = A.shape[0]
    M = A.copy()
    x = b.copy()
    scale = 0.0
    for r in range(k):
        for c in range(k):
            if abs(M[r, c]) > scale:
                scale = abs(M[r, c])
    if scale <= 0.0:
        return x, False
    for col in range(k):
        piv = col
        for r in range(col + 1, k):
            if abs(M[r, col]) > abs(M[piv, col]):
                piv = r
        if abs(M[piv, col]) < 1e-12 * scale:
            return x, False
        if piv != col:
            for c in range(k):
                tmp = M[col, c]
                M[col, c] = M[piv, c]
                M[piv, c] = tmp
            tmp = x[col]
            x[col] = x[piv]
            x[piv] = tmp
        inv_p = 1.0 / M[col, col]
        for r in range(col + 1, k):
            f = M[r, col] * inv_p
            if f != 0.0:
                for c in range(col, k):
                    M[r, c] -= f * M[col, c]
                x[r] -= f * x[col]
    for col in range(k - 1, -1, -1):
        acc = x[col]
        for c in range(col + 1, k):
            acc -= M[col, c] * x[c]
        x[col] = acc / M[col, col]
    return x, True


@njit(cache=True)
def _nb_invert(A):
    k = A.shape[0]
    out = np.empty((k, k))
    eye = np.zeros(k)
    for col in range(k):
        eye[:] = 0.0
        eye[col] = 1.0
        x, ok = _nb_solve(A, eye)
        if not ok:
            return out, False
        for r in range(k):
            out[r, col] = x[r]
    return out, True


@njit(cache=True)
def _nb_newton(X, w, s, a0, max_iter, grad_tol, cap):
    """Weighted Newton-Raphson with step halving.

    Returns (theta, cov, loglik, converged, singular). The covariance is the
    inverse observed information at the last iterate when it exists.
    """
    n, k = X.shape
    theta = np.zeros(k)
    grad = np.empty(k)
    H = np.empty((k, k))
    cur = _nb_weighted_ll(X, w, s, theta, a0)
    converged = False
    singular = False
    for _ in range(max_iter):
        for j in range(k):
            grad[j] = 0.0
            for l in range(k):
                H[j, l] = 0.0
        for i in range(n):
            eta = a0
            for j in range(k):
                eta += X[i, j] * theta[j]
            if eta >= 0.0:
                p = 1.0 / (1.0 + math.exp(-eta))
            else:
                e = math.exp(eta)
                p = e / (1.0 + e)
            resid = s[i] - w[i] * p
            wt = w[i] * p * (1.0 - p)
            for j in range(k):
                xij = X[i, j]
                grad[j] += xij * resid
                for l in range(j, k):
                    H[j, l] += xij * X[i, l] * wt
        for j in range(k):
            for l in range(j):
                H[j, l] = H[l, j]
        gmax = 0.0
        for j in range(k):
            if abs(grad[j]) > gmax:
                gmax = abs(grad[j])
        if gmax < grad_tol:
            converged = True
            break
        step, ok = _nb_solve(H, grad)
        if not ok:
            singular = True
            break
        finite = True
        for j in range(k):
            if not math.isfinite(step[j]):
                finite = False
        if not finite:
            singular = True
            break
        lam = 1.0
        accepted = False
        for _ in range(30):
            improved = True
            for j in range(k):
                theta[j] += lam * step[j]
            new_ll = _nb_weighted_ll(X, w, s, theta, a0)
            if new_ll >= cur - 1e-12:
                cur = new_ll
                accepted = True
                break
            for j in range(k):
                theta[j] -= lam * step[j]
            lam *= 0.5
        if not accepted:
            break
        capped = False
        for j in range(k):
            if abs(theta[j]) > cap:
                capped = True
        if capped:
            break

    for j in range(k):
        grad[j] = 0.0
        for l in range(k):
            H[j, l] = 0.0
    for i in range(n):
        eta = a0
        for j in range(k):
            eta += X[i, j] * theta[j]
        if eta >= 0.0:
            p = 1.0 / (1.0 + math.exp(-eta))
        else:
            e = math.exp(eta)
            p = e / (1.0 + e)
        wt = w[i] * p * (1.0 - p)
        for j in range(k):
            for l in range(j, k):
                H[j, l] += X[i, j] * X[i, l] * wt
    for j in range(k):
        for l in range(j):
            H[j, l] = H[l, j]
    cov, ok = _nb_invert(H)
    if not ok:
        singular = True
    return theta, cov, ok, cur, converged, singular


def fit_aggregated(
    X: np.ndarray,
    weights: np.ndarray,
    successes: np.ndarray,
    intercept: float = DEFAULT_INTERCEPT,
    covariate_indices: Sequence[int] = (),
    pvalue_method: str = "wald",
    max_iter: int = 50,
    grad_tol: float = 1e-8,
) -> FittedModel:
    """Fit on pre-aggregated rows: X = [label, covariates...], binomial counts.

    Covariate columns without variation across the weighted rows are dropped
    and reported degenerate. With zero events (or zero non-events) in the
    data there is no interior optimum, so the fit is flagged as separated
    without iterating.
    """
    X = np.ascontiguousarray(X, dtype=float)
    w = np.ascontiguousarray(weights, dtype=float)
    s = np.ascontiguousarray(successes, dtype=float)
    q = X.shape[1] - 1
    indices = list(covariate_indices)
    if len(indices) != q:
        raise ValueError("covariate_indices must match covariate columns")

    live = w > 0
    keep = [c for c in range(1, q + 1) if np.ptp(X[live, c]) > 0.0]
    dropped = [c for c in range(1, q + 1) if c not in keep]
    kept_indices = [indices[c - 1] for c in keep]
    Xk = np.ascontiguousarray(X[:, [0] + keep])

    no_events = s.sum() == 0.0 or (w - s).sum() == 0.0
    if no_events:
        theta = np.zeros(Xk.shape[1])
        cov_arr = None
        ll = _nb_weighted_ll(Xk, w, s, theta, intercept)
        converged = False
        separation = True
        whole_fit_bad = True
    else:
        theta, cov, cov_ok, ll, converged, singular = _nb_newton(
            Xk, w, s, intercept, max_iter, grad_tol, COEF_CAP
        )
        cov_arr = cov if cov_ok else None
        capped = bool(np.abs(theta).max() > COEF_CAP) if theta.size else False
        separation = singular or capped or bool(dropped)
        if separation:
            converged = False
        whole_fit_bad = singular or abs(float(theta[0])) > COEF_CAP

    dose_coef = float(theta[0])
    gammas: dict[int, float] = {}
    p_values: dict[int, float] = {}
    for pos, idx in enumerate(kept_indices):
        gamma = float(theta[1 + pos])
        gammas[idx] = gamma
        if whole_fit_bad or abs(gamma) > COEF_CAP:
            p_values[idx] = 1.0
            continue
        if pvalue_method == "wald":
            var = cov_arr[1 + pos, 1 + pos] if cov_arr is not None else float("nan")
            se = math.sqrt(var) if var > 0 else float("nan")
            p_values[idx] = wald_pvalue(gamma, se) if math.isfinite(se) and se > 0 else 1.0
        elif pvalue_method == "lrt":
            p_values[idx] = _lrt_pvalue(Xk, w, s, 1 + pos, ll, intercept, max_iter, grad_tol)
        else:
            raise ValueError(f"unknown p-value method: {pvalue_method!r}")
    for c in dropped:
        gammas[indices[c - 1]] = float("nan")
        p_values[indices[c - 1]] = 1.0

    return FittedModel(
        dose_coef=dose_coef,
        gammas=gammas,
        intercept=intercept,
        cov_matrix=cov_arr,
        p_values=p_values,
        converged=converged,
        separation=separation,
        loglik=ll,
        degenerate=tuple(indices[c - 1] for c in dropped),
        indices=tuple(indices),
    )


def _lrt_pvalue(X, w, s, drop_col, full_ll, intercept, max_iter, grad_tol) -> float:
    """Likelihood-ratio p-value for one column against the reduced fit."""
    keep = [c for c in range(X.shape[1]) if c != drop_col]
    Xr = np.ascontiguousarray(X[:, keep])
    theta, _, _, ll, converged, singular = _nb_newton(Xr, w, s, intercept, max_iter, grad_tol, COEF_CAP)
    if singular or (theta.size and np.abs(theta).max() > COEF_CAP):
        return 1.0
    stat = max(0.0, 2.0 * (full_ll - ll))
    return float(min(1.0, special.chdtrc(1, stat)))


def fit_fixed_intercept_logistic(
    labels,
    covariates,
    dlt,
    intercept: float = DEFAULT_INTERCEPT,
    covariate_indices: Sequence[int] | None = None,
    pvalue_method: str = "wald",
    max_iter: int = 50,
    grad_tol: float = 1e-8,
) -> FittedModel:
    """Newton-Raphson MLE of logit(pi) = intercept + b1*label + sum gamma*z.

    The intercept is held fixed. Returns coefficient estimates, the
    observed-information covariance, and a two-sided screening p-value per
    covariate. Constant covariate columns are dropped from the design and
    reported with p-value 1.0; capped coefficients or a singular information
    matrix set ``separation`` and force the affected p-values to 1.0.
    """
    labels = np.asarray(labels, dtype=float)
    y = np.asarray(dlt, dtype=float)
    if labels.size == 0:
        raise ValueError("no observations")
    if not np.all(np.isfinite(labels)):
        raise ValueError("dose labels must be finite")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("outcomes must be binary 0/1")

    Z = np.asarray(covariates, dtype=float) if covariates is not None else np.empty((labels.size, 0))
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[0] != labels.size or y.size != labels.size:
        raise ValueError("labels, covariates and outcomes must align")
    q = Z.shape[1]
    indices = list(covariate_indices) if covariate_indices is not None else list(range(q))
    if len(indices) != q:
        raise ValueError("covariate_indices must match covariate columns")

    X = np.column_stack([labels, Z]) if q else labels[:, None]
    return fit_aggregated(
        X,
        np.ones(labels.size),
        y,
        intercept=intercept,
        covariate_indices=indices,
        pvalue_method=pvalue_method,
        max_iter=max_iter,
        grad_tol=grad_tol,
    )


def loglik(theta, labels, covariates, dlt, intercept: float = DEFAULT_INTERCEPT) -> float:
    """Binomial log-likelihood of the fixed-intercept logistic model."""
    X = _design_matrix(labels, covariates)
    eta = intercept + X @ np.asarray(theta, dtype=float)
    y = np.asarray(dlt, dtype=float)
    return float((y * _log_expit(eta) + (1.0 - y) * _log_expit(-eta)).sum())


def score(theta, labels, covariates, dlt, intercept: float = DEFAULT_INTERCEPT) -> np.ndarray:
    """Analytic gradient of :func:`loglik` in theta."""
    X = _design_matrix(labels, covariates)
    eta = intercept + X @ np.asarray(theta, dtype=float)
    y = np.asarray(dlt, dtype=float)
    return X.T @ (y - expit(eta))


def _design_matrix(labels, covariates) -> np.ndarray:
    labels = np.asarray(labels, dtype=float)
    if covariates is None:
        return labels[:, None]
    Z = np.asarray(covariates, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[1] == 0:
        return labels[:, None]
    return np.column_stack([labels, Z])
