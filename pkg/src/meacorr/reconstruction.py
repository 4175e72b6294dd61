"""Moment reconstruction for a logistic outcome with one error-prone covariate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ErrorModelSpec, ProxyPanel
from .exceptions import ConfigError, EstimationError, InferenceError, ModelViolationError
from .models import FitResult, OutcomeModel, psi, psi_jac, solve_m
from .numdiff import central_jacobian
from .params import CorrectionParams, XiLayout, estimate_correction_params, sandwich_xi

COND_VAR = ("class", "pooled", "marginal")


@dataclass
class MrParams:
    """Class-wise moments of X*(alpha) plus the alpha-weighted error terms.

    theta1/theta2 are E[X* | Y=1], E[X* | Y=0]; theta3/theta4 the matching
    variances (divisor = class size).
    """

    theta1: float
    theta2: float
    theta3: float
    theta4: float
    eta_dot0: float
    eta_dot1: float
    m_star: float
    sigma_xx: float
    alpha: np.ndarray
    cond_var: str = "class"

    def vector(self):
        return np.array([self.theta1, self.theta2, self.theta3, self.theta4])


def _subsample(panel: ProxyPanel, alpha):
    """Subjects observing every proxy with positive weight."""
    need = np.asarray(alpha) > 0
    return np.flatnonzero(panel.observed[:, need].all(axis=1))


def _resolve_alpha(panel, xi, alpha):
    if isinstance(alpha, str):
        if alpha == "equal":
            return np.full(panel.k, 1.0 / panel.k)
        if alpha == "optimal":
            from .calibration import optimal_alpha
            return optimal_alpha(xi)
        raise ConfigError(f"unknown weight mode {alpha!r}")
    a = np.asarray(alpha, dtype=float)
    return a / a.sum()


def _xstar(panel, rows, alpha):
    return np.einsum("j,jn->n", alpha, panel.filled()[:, rows, 0])


def _class_moments(xs, y):
    if y.sum() < 2 or (1 - y).sum() < 2:
        raise EstimationError("moment reconstruction needs at least two subjects in each outcome class")
    x1, x0 = xs[y == 1], xs[y == 0]
    t1, t2 = x1.mean(), x0.mean()
    return t1, t2, np.mean((x1 - t1) ** 2), np.mean((x0 - t2) ** 2)


def estimate_mr_params(panel: ProxyPanel, xi: CorrectionParams, alpha=None, cond_var="class") -> MrParams:
    """Closed-form roots of the class-wise mean and variance equations."""
    if panel.p != 1:
        raise ConfigError("moment reconstruction is implemented for a scalar covariate")
    if cond_var not in COND_VAR:
        raise ConfigError(f"cond_var must be one of {COND_VAR}")
    alpha = np.full(panel.k, 1.0 / panel.k) if alpha is None else np.asarray(alpha, float)
    rows = _subsample(panel, alpha)
    if len(rows) == 0:
        raise EstimationError("no subject observes all weighted proxies")
    xs = _xstar(panel, rows, alpha)
    t1, t2, t3, t4 = _class_moments(xs, panel.y[rows])
    return MrParams(
        t1, t2, t3, t4,
        eta_dot0=float(alpha @ xi.eta0[:, 0]),
        eta_dot1=float(alpha @ xi.eta1[:, 0]),
        m_star=float(alpha ** 2 @ xi.m[:, 0, 0]),
        sigma_xx=float(xi.sigma_xx[0, 0]),
        alpha=alpha,
        cond_var=cond_var,
    )


def mr_estimating_equations(xs, y, theta):
    """Per-subject residuals of the four moment equations, shape (n, 4)."""
    t1, t2, t3, t4 = theta
    return np.column_stack([
        y * (xs - t1),
        (1 - y) * (xs - t2),
        y * ((xs - t1) ** 2 - t3),
        (1 - y) * ((xs - t2) ** 2 - t4),
    ])


def shrink_factor(mr: MrParams, y):
    """G~(y) = eta1. (cov(X|Y) / cov(X*|Y))^{1/2} per subject."""
    v = np.where(y == 1, mr.theta3, mr.theta4)
    if np.any(v <= 0):
        raise ModelViolationError("class variance of the weighted proxy must be positive")
    if mr.cond_var == "class":
        cx = (v - mr.m_star) / mr.eta_dot1 ** 2
    elif mr.cond_var == "pooled":
        pi1 = np.mean(y)
        pooled = pi1 * mr.theta3 + (1 - pi1) * mr.theta4
        cx = np.full_like(v, (pooled - mr.m_star) / mr.eta_dot1 ** 2)
    else:
        cx = np.full_like(v, mr.sigma_xx)
    return mr.eta_dot1 * np.sqrt(np.clip(cx, 0.0, None) / v)


def mr_reconstruct(xstar, y, mr: MrParams):
    """x_hat = eta1.^{-1} [ m(y) - eta0. + G~(y) (x* - m(y)) ]."""
    xstar = np.asarray(xstar, dtype=float)
    y = np.asarray(y, dtype=float)
    m = np.where(y == 1, mr.theta1, mr.theta2)
    g = shrink_factor(mr, y)
    return (m - mr.eta_dot0 + g * (xstar - m)) / mr.eta_dot1


def _with(mr: MrParams, theta=None, xi: CorrectionParams = None):
    t = mr.vector() if theta is None else theta
    a = mr.alpha
    if xi is None:
        e0, e1, ms, sxx = mr.eta_dot0, mr.eta_dot1, mr.m_star, mr.sigma_xx
    else:
        e0, e1 = float(a @ xi.eta0[:, 0]), float(a @ xi.eta1[:, 0])
        ms, sxx = float(a ** 2 @ xi.m[:, 0, 0]), float(xi.sigma_xx[0, 0])
    return MrParams(*t, e0, e1, ms, sxx, a, mr.cond_var)


def fit_mr_logistic(panel: ProxyPanel, spec: ErrorModelSpec, xi=None, alpha="equal",
                    cond_var="class", se="sandwich") -> FitResult:
    """Logistic regression of y on the reconstructed covariate.

    The moment parameters are solved first in closed form; the sandwich stacks
    (Psi, moment equations, correction-parameter equations).
    """
    if panel.p != 1:
        raise ConfigError("moment reconstruction is implemented for a scalar covariate")
    if xi is None:
        xi = estimate_correction_params(panel, spec)
    alpha = _resolve_alpha(panel, xi, alpha)
    mr = estimate_mr_params(panel, xi, alpha, cond_var)
    rows = _subsample(panel, alpha)
    xs = _xstar(panel, rows, alpha)
    y = panel.y[rows]
    xhat = mr_reconstruct(xs, y, mr)[:, None]
    model = OutcomeModel("logistic", 1, 0)
    theta, info = solve_m(model, y, xhat)
    res = FitResult(theta, None, "mr", panel.n, model.names(), dict(info))
    res.diagnostics.update(alpha=alpha.tolist(), n_used=len(rows), cond_var=cond_var,
                           theta_mr=mr.vector().tolist())
    if se == "sandwich":
        res.cov = mr_sandwich(panel, spec, xi, mr, theta, rows, xs)
        res.diagnostics["se_method"] = "sandwich"
    elif se not in ("none", None):
        raise ConfigError(f"unknown se method {se!r}")
    return res


def mr_sandwich(panel, spec, xi, mr, theta, rows, xs):
    """Covariance of sqrt(n)(theta_hat - theta) through the influence functions
    of the stacked (Psi, moment, xi) system."""
    n = panel.n
    model = OutcomeModel("logistic", 1, 0)
    layout = XiLayout.for_params(xi)
    xi_vec = layout.pack(xi)
    tv = mr.vector()
    y = panel.y[rows]
    c = np.zeros(n)
    c[rows] = 1.0

    def psi_full(t_mr, v_xi):
        cur = _with(mr, t_mr, layout.unpack(v_xi, xi) if v_xi is not None else None)
        xh = mr_reconstruct(xs, y, cur)[:, None]
        return psi(model, y, xh, None, theta)

    xhat = mr_reconstruct(xs, y, mr)[:, None]
    a_tt = psi_jac(model, y, xhat, None, theta) * len(rows) / n
    a_tm = central_jacobian(lambda t: psi_full(t, None).sum(axis=0) / n, tv)
    a_tx = central_jacobian(lambda v: psi_full(tv, v).sum(axis=0) / n, xi_vec)
    eqs = mr_estimating_equations(xs, y, tv)
    a_mm = central_jacobian(lambda t: mr_estimating_equations(xs, y, t).sum(axis=0) / n, tv)
    if np.linalg.matrix_rank(a_tt) < 2 or np.linalg.matrix_rank(a_mm) < 4:
        raise InferenceError("moment reconstruction Jacobian is singular")
    inf_xi = sandwich_xi(panel, xi, spec).influence()
    ps = np.zeros((n, 2))
    ps[rows] = psi_full(tv, None)
    me = np.zeros((n, 4))
    me[rows] = eqs
    inf_m = -np.linalg.solve(a_mm, me.T).T
    infl = -np.linalg.solve(a_tt, (ps + inf_m @ a_tm.T + inf_xi @ a_tx.T).T).T
    cov = infl.T @ infl / n
    return 0.5 * (cov + cov.T)
