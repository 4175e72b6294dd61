"""Regression calibration with weighted proxies (BLUP per missingness pattern),
optimal proxy weights, and stacked sandwich inference."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .data import ErrorModelSpec, ProxyPanel, pattern_weights
from .exceptions import CalibrationError, ConfigError, InferenceError
from .inference import attach_bootstrap
from .models import FitResult, OutcomeModel, psi, psi_jac, solve_m
from .numdiff import central_jacobian
from .params import (CorrectionParams, XiLayout, estimate_correction_params, g_matrix,
                     xi_jacobian)


@dataclass
class BlupMap:
    """X_hat = mu + beta X*(w) + gamma Z for subjects sharing ``pattern``."""

    mu: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    alpha: np.ndarray
    pattern: np.ndarray

    def apply(self, xstar, z=None):
        out = self.mu + xstar @ self.beta.T
        if self.gamma.shape[1]:
            out = out + z[:, :self.gamma.shape[1]] @ self.gamma.T
        return out

    def pack(self):
        return np.concatenate([self.mu, self.beta.ravel(), self.gamma.ravel()])


def _blocks(xi: CorrectionParams, w, has_z):
    """Moments of (X, X*(w), Z) implied by xi: (mu*, C, J, mu_z)."""
    mo = xi.moments
    mu_star = w @ mo.mu
    s_star = np.einsum("j,l,jlab->ab", w, w, mo.sigma)
    s_x_star = np.einsum("j,jab->ab", w, xi.sigma_xxj)
    if has_z:
        s_star_z = np.einsum("j,jcb->bc", w, mo.sigma_zj)
        c = np.hstack([s_x_star, xi.sigma_zx.T])
        jm = np.block([[s_star, s_star_z], [s_star_z.T, mo.sigma_zz]])
        return mu_star, c, jm, mo.mu_z
    return mu_star, s_x_star, s_star, np.zeros(0)


def build_blup(xi: CorrectionParams, alpha, pattern, has_z=None) -> BlupMap:
    """Best linear predictor of X from the weighted proxy (and Z) under xi."""
    has_z = xi.has_z if has_z is None else has_z
    pattern = np.asarray(pattern, dtype=bool)
    w = pattern_weights(pattern, alpha)
    mu_star, c, jm, mu_z = _blocks(xi, w, has_z)
    if np.linalg.cond(jm) > 1e12:
        raise CalibrationError(f"joint covariance of (X*, Z) is singular for pattern {pattern.astype(int)}")
    coef = np.linalg.solve(jm.T, c.T).T
    p = xi.p
    beta, gamma = coef[:, :p], coef[:, p:]
    mu = xi.mu_x - beta @ mu_star - gamma @ mu_z
    return BlupMap(mu, beta, gamma, w, pattern)


def blup_mse(xi: CorrectionParams, w, has_z=None, grad=False):
    """tr E(X - X_hat)(X - X_hat)^T at pattern weights ``w`` (zeros = missing).

    With ``grad`` also returns d MSE / d w (w treated as free).
    """
    has_z = xi.has_z if has_z is None else has_z
    _, c, jm, _ = _blocks(xi, w, has_z)
    kmat = np.linalg.solve(jm, c.T)
    mse = float(np.trace(xi.sigma_xx) - np.trace(c @ kmat))
    if not grad:
        return mse
    mo = xi.moments
    p = xi.p
    g = np.empty(len(w))
    for j in range(len(w)):
        d_sstar = np.einsum("l,lab->ab", w, mo.sigma[j]) + np.einsum("l,lab->ab", w, mo.sigma[:, j])
        if has_z:
            dzj = mo.sigma_zj[j].T
            dc = np.hstack([xi.sigma_xxj[j], np.zeros_like(xi.sigma_zx.T)])
            dj = np.block([[d_sstar, dzj], [dzj.T, np.zeros_like(mo.sigma_zz)]])
        else:
            dc, dj = xi.sigma_xxj[j], d_sstar
        g[j] = -2.0 * np.trace(dc @ kmat) + np.trace(kmat.T @ dj @ kmat)
    return mse, g


def _renorm_jac(pattern, alpha):
    """d w / d alpha for w = renormalised alpha over ``pattern``."""
    o = pattern.astype(float)
    s = o @ alpha
    w = o * alpha / s
    return (np.diag(o) - np.outer(w, o)) / s


def pattern_table(panel: ProxyPanel):
    """[(pattern, frequency)] of the panel's missingness patterns."""
    return [(pat, len(rows) / panel.n) for pat, rows in panel.patterns()]


def weighted_mse(xi, alpha, patterns, has_z=None, grad=False):
    """Frequency-weighted BLUP MSE over patterns, as a function of global alpha."""
    alpha = np.asarray(alpha, dtype=float)
    total = 0.0
    g = np.zeros(len(alpha))
    for pat, freq in patterns:
        w = pattern_weights(pat, alpha)
        if grad:
            m, gw = blup_mse(xi, w, has_z, grad=True)
            if pat @ alpha > 1e-12:
                g += freq * gw @ _renorm_jac(pat, alpha)
        else:
            m = blup_mse(xi, w, has_z)
        total += freq * m
    return (total, g) if grad else total


def optimal_alpha(xi: CorrectionParams, patterns=None, has_z=None, return_info=False):
    """Weights on the simplex minimising the (pattern-averaged) BLUP MSE.

    SLSQP from starts near each vertex and at the centroid; equal weights are
    always a candidate, so the result never does worse than them.
    """
    k = xi.k
    if patterns is None:
        patterns = [(np.ones(k, dtype=bool), 1.0)]
    eq = np.full(k, 1.0 / k)
    if k == 1:
        return (eq, {"fallback": False}) if return_info else eq

    def f(a):
        return weighted_mse(xi, a, patterns, has_z, grad=True)

    starts = [eq] + [0.1 * eq + 0.9 * np.eye(k)[j] for j in range(k)]
    best_a, best_v = eq, weighted_mse(xi, eq, patterns, has_z)
    n_ok = 0
    for a0 in starts:
        try:
            res = minimize(f, a0, jac=True, method="SLSQP", bounds=[(0.0, 1.0)] * k,
                           constraints=[{"type": "eq", "fun": lambda a: a.sum() - 1.0,
                                         "jac": lambda a: np.ones(k)}],
                           options={"ftol": 1e-14, "maxiter": 500})
        except (np.linalg.LinAlgError, ValueError):
            continue
        if not res.success:
            continue
        n_ok += 1
        a = np.clip(res.x, 0.0, None)
        a /= a.sum()
        v = weighted_mse(xi, a, patterns, has_z)
        if v < best_v:
            best_a, best_v = a, v
    fallback = n_ok == 0
    if fallback:
        warnings.warn("weight optimisation failed at every start; using equal weights")
    if return_info:
        return best_a, {"fallback": fallback, "mse": best_v,
                        "mse_equal": weighted_mse(xi, eq, patterns, has_z)}
    return best_a


def calibrate(panel: ProxyPanel, xi: CorrectionParams, alpha, has_z=None):
    """Calibrated covariate for every subject plus the per-pattern maps."""
    has_z = xi.has_z if has_z is None else has_z
    xhat = np.empty((panel.n, panel.p))
    x = panel.filled()
    blups = []
    for pat, rows in panel.patterns():
        b = build_blup(xi, alpha, pat, has_z)
        xstar = np.einsum("j,jnp->np", b.alpha, x[:, rows])
        xhat[rows] = b.apply(xstar, panel.z[rows])
        blups.append((b, rows))
    return xhat, blups


def _resolve_alpha(xi, panel, weights, has_z):
    if isinstance(weights, str):
        if weights == "equal":
            return np.full(panel.k, 1.0 / panel.k), "equal"
        if weights == "optimal":
            return optimal_alpha(xi, pattern_table(panel), has_z), "optimal"
        raise ConfigError(f"unknown weight mode {weights!r}")
    a = np.asarray(weights, dtype=float)
    if a.shape != (panel.k,) or np.any(a < 0) or a.sum() <= 0:
        raise ConfigError("weights must be k nonnegative numbers")
    return a / a.sum(), "fixed"


def fit_rc(panel: ProxyPanel, model: OutcomeModel, spec: ErrorModelSpec, xi=None,
           weights="equal", se="sandwich", n_boot=1000, seed=0, n_jobs=1) -> FitResult:
    """Generalised regression calibration.

    ``se`` is "sandwich", "bootstrap" or "none". The bootstrap re-estimates xi
    and (in optimal mode) the weights in every replicate.
    """
    if xi is None:
        xi = estimate_correction_params(panel, spec)
    alpha, mode = _resolve_alpha(xi, panel, weights, xi.has_z)
    xi = xi.with_alpha(alpha)
    xhat, blups = calibrate(panel, xi, alpha)
    z = panel.z[:, :model.q]
    theta, info = solve_m(model, panel.y, xhat, z)
    method = f"gen-rc-{mode}"
    res = FitResult(theta, None, method, panel.n, model.names(), dict(info))
    res.diagnostics.update(alpha=alpha.tolist(), patterns=[b.pattern.astype(int).tolist() for b, _ in blups],
                           m_clip=xi.m_clip.tolist(), has_z=xi.has_z)
    if se == "sandwich":
        res.cov = rc_sandwich(panel, model, xi, spec, theta, blups, optimal=(mode == "optimal"))
        res.diagnostics["se_method"] = "sandwich"
    elif se == "bootstrap":
        def refit(pb):
            return fit_rc(pb, model, spec, weights=weights if mode != "fixed" else alpha, se="none").theta
        attach_bootstrap(res, refit, panel, n_boot, seed, n_jobs)
    elif se not in ("none", None):
        raise ConfigError(f"unknown se method {se!r}")
    return res


# --------------------------------------------------------------------------
# Stacked (Psi, h, g) inference


def _alpha_rows(xi, alpha, patterns, has_z, active):
    """Stationarity conditions for the optimal weights (active set fixed)."""
    _, grad = weighted_mse(xi, alpha, patterns, has_z, grad=True)
    a0 = int(np.flatnonzero(active)[0])
    rows = [alpha.sum() - 1.0]
    for j in range(len(alpha)):
        if j == a0:
            continue
        rows.append(grad[j] - grad[a0] if active[j] else alpha[j])
    return np.array(rows)


def rc_sandwich(panel, model, xi, spec, theta, blups, optimal=False):
    """Covariance of sqrt(n)(theta_hat - theta) from the stacked system.

    Parameters are (theta, per-pattern BLUP coefficients, [alpha], xi). A is
    block upper-triangular: h and g do not involve theta, g does not involve
    the BLUP coefficients or alpha. h is non-random, so its B blocks vanish.
    """
    n = panel.n
    has_z = xi.has_z
    layout = XiLayout.for_params(xi)
    xi_vec = layout.pack(xi)
    alpha = np.asarray(xi.alpha, dtype=float)
    patterns = pattern_table(panel)
    sizes = [len(b.pack()) for b, _ in blups]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    eta_vec = np.concatenate([b.pack() for b, _ in blups] + ([alpha] if optimal else []))
    p, k = panel.p, panel.k
    qb = blups[0][0].gamma.shape[1]
    x = panel.filled()
    z = panel.z[:, :model.q]
    active = alpha > 1e-8

    def unpack_blup(v, i):
        s = v[offs[i]:offs[i + 1]]
        return s[:p], s[p:p + p * p].reshape(p, p), s[p + p * p:].reshape(p, qb)

    def alpha_of(v):
        return v[offs[-1]:] if optimal else alpha

    def xhat_of(v):
        a = alpha_of(v)
        out = np.empty((n, p))
        for i, (b, rows) in enumerate(blups):
            mu, beta, gamma = unpack_blup(v, i)
            w = pattern_weights(b.pattern, a)
            xs = np.einsum("j,jnp->np", w, x[:, rows])
            out[rows] = mu + xs @ beta.T + (panel.z[rows, :qb] @ gamma.T if qb else 0.0)
        return out

    def psi_bar(v):
        return psi(model, panel.y, xhat_of(v), z, theta).mean(axis=0)

    def h_all(v):
        ev, xv = v[:len(eta_vec)], v[len(eta_vec):]
        xp = layout.unpack(xv, xi)
        a = alpha_of(ev)
        out = []
        for i, (b, _) in enumerate(blups):
            mu, beta, gamma = unpack_blup(ev, i)
            w = pattern_weights(b.pattern, a)
            mu_star, c, jm, mu_z = _blocks(xp, w, has_z)
            coef = np.hstack([beta, gamma])
            out.append((c - coef @ jm).ravel())
            out.append(xp.mu_x - mu - beta @ mu_star - gamma @ mu_z)
        if optimal:
            out.append(_alpha_rows(xp, a, patterns, has_z, active))
        return np.concatenate(out)

    d_t, d_e, d_x = len(theta), len(eta_vec), layout.size
    dim = d_t + d_e + d_x
    a_mat = np.zeros((dim, dim))
    a_mat[:d_t, :d_t] = psi_jac(model, panel.y, xhat_of(eta_vec), z, theta)
    a_mat[:d_t, d_t:d_t + d_e] = central_jacobian(psi_bar, eta_vec)
    a_mat[d_t:d_t + d_e, d_t:] = central_jacobian(h_all, np.concatenate([eta_vec, xi_vec]))
    g = g_matrix(panel, xi_vec, spec, layout)
    a_mat[d_t + d_e:, d_t + d_e:] = xi_jacobian(panel, xi_vec, spec, layout)

    ps = psi(model, panel.y, xhat_of(eta_vec), z, theta)
    stack = np.zeros((n, dim))
    stack[:, :d_t] = ps
    stack[:, d_t + d_e:] = g
    b_mat = stack.T @ stack / n
    rank = np.linalg.matrix_rank(a_mat)
    if rank < dim:
        raise InferenceError("stacked calibration Jacobian is singular", rank)
    # only the theta block is needed: row block of A^{-1}
    q_rows = np.linalg.solve(a_mat.T, np.eye(dim)[:, :d_t]).T
    cov = q_rows @ b_mat @ q_rows.T
    return 0.5 * (cov + cov.T)


# --------------------------------------------------------------------------
# Classical baseline


def replicate_moments(panel: ProxyPanel):
    """Replicate means, counts and the pooled within-subject covariance.

    Within-subject deviations are taken from occasion means, so that on
    complete data Sigma_U equals the average proxy variance minus the average
    cross-covariance.
    """
    obs = panel.observed
    kap = obs.sum(axis=1).astype(float)
    x = panel.filled()
    wbar = np.einsum("nj,jnp->np", obs.astype(float), x) / kap[:, None]
    occ = x.sum(axis=1) / obs.sum(axis=0)[:, None]
    dev = (x - occ[:, None, :]) * obs.T[:, :, None]
    dbar = dev.sum(axis=0) / kap[:, None]
    within = dev - dbar[None] * obs.T[:, :, None]
    dof = (kap - 1).sum()
    if dof <= 0:
        raise ConfigError("the standard estimators need replicated proxies")
    s_u = np.einsum("jna,jnb->ab", within, within) / dof
    return wbar, kap, s_u


def standard_rc(panel: ProxyPanel, model: OutcomeModel, use_z=True) -> FitResult:
    """Regression calibration treating every proxy as an unbiased replicate.

    W_bar_i is the mean of subject i's observed proxies and Sigma_XX is the
    moment estimate corrected by n Sigma_U / sum(kappa).
    """
    n, p = panel.n, panel.p
    wbar, kap, s_u = replicate_moments(panel)
    mu = kap @ wbar / kap.sum()
    wc = wbar - mu
    s_xx = (wc * kap[:, None]).T @ wc / kap.sum() - n * s_u / kap.sum()
    q = panel.q if use_z else 0
    zc = panel.z[:, :q] - panel.z[:, :q].mean(axis=0)
    s_xz = wc.T @ zc / n
    s_zz = zc.T @ zc / n
    c = np.hstack([s_xx, s_xz])
    xhat = np.empty((n, p))
    for kv in np.unique(kap):
        rows = kap == kv
        jm = np.block([[s_xx + s_u / kv, s_xz], [s_xz.T, s_zz]])
        coef = np.linalg.solve(jm.T, c.T).T
        xhat[rows] = mu + np.hstack([wc[rows], zc[rows]]) @ coef.T
    theta, info = solve_m(model, panel.y, xhat, panel.z[:, :model.q])
    res = FitResult(theta, None, "standard-rc", n, model.names(), dict(info))
    res.diagnostics.update(sigma_u=s_u.tolist(), sigma_xx=s_xx.tolist())
    return res
