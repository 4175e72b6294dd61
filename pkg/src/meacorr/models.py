"""Outcome-model estimating functions and a Newton M-estimation solver."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import ProxyPanel, expit
from .exceptions import ConfigError, FitError, InferenceError, SeparationError

FAMILIES = ("linear", "logistic", "gamma")
_FAMILY_ALIASES = {"log-linear-gamma": "gamma", "gaussian": "linear"}


@dataclass(frozen=True)
class OutcomeModel:
    """GLM-type mean model E[Y | X, Z] = h(theta0 + X theta_x + Z theta_z).

    Coefficient layout is (intercept, X block of length p, Z block of length q).
    The gamma family uses the log link and the quasi-score (y - exp(eta)) d.
    """

    family: str = "linear"
    p: int = 1
    q: int = 0

    def __post_init__(self):
        fam = _FAMILY_ALIASES.get(self.family, self.family)
        if fam not in FAMILIES:
            raise ConfigError(f"unknown outcome family {self.family!r}")
        object.__setattr__(self, "family", fam)

    @property
    def dim(self):
        return 1 + self.p + self.q

    def names(self):
        xs = ["x"] if self.p == 1 else [f"x{a + 1}" for a in range(self.p)]
        return ["intercept"] + xs + [f"z{c + 1}" for c in range(self.q)]

    @property
    def x_slice(self):
        return slice(1, 1 + self.p)

    def design(self, x, z=None):
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        parts = [np.ones(lead + (1,)), x]
        if self.q:
            parts.append(np.broadcast_to(z, lead + (self.q,)))
        return np.concatenate(parts, axis=-1)

    def mean(self, eta):
        if self.family == "linear":
            return eta
        if self.family == "logistic":
            return expit(eta)
        return np.exp(eta)

    def mean_deriv(self, eta):
        if self.family == "linear":
            return np.ones_like(eta)
        if self.family == "logistic":
            mu = expit(eta)
            return mu * (1.0 - mu)
        return np.exp(eta)

    def objective(self, y, eta):
        """Concave criterion whose gradient in eta is y - mean(eta), summed."""
        if self.family == "linear":
            return -0.5 * np.sum((y - eta) ** 2, axis=-1)
        if self.family == "logistic":
            return np.sum(y * eta - np.logaddexp(0.0, eta), axis=-1)
        return np.sum(y * eta - np.exp(eta), axis=-1)

    def predict(self, theta, x, z=None):
        return self.mean(self.design(x, z) @ theta)


def psi(model: OutcomeModel, y, x, z, theta):
    """Per-subject estimating function (y - h(eta)) d, shape (n, dim)."""
    d = model.design(x, z)
    return (y - model.mean(d @ theta))[:, None] * d


def psi_jac(model: OutcomeModel, y, x, z, theta):
    """Mean over subjects of d psi / d theta^T (analytic)."""
    d = model.design(x, z)
    w = model.mean_deriv(d @ theta)
    return -(d * w[:, None]).T @ d / len(d)


def psi_dx(model: OutcomeModel, y, x, z, theta):
    """Per-subject d psi / d x^T, shape (n, dim, p)."""
    d = model.design(x, z)
    eta = d @ theta
    r = y - model.mean(eta)
    w = model.mean_deriv(eta)
    out = -(w[:, None, None] * d[:, :, None]) * theta[model.x_slice][None, None, :]
    for a in range(model.p):
        out[:, 1 + a, a] += r
    return out


@dataclass
class FitResult:
    """Estimates with the asymptotic covariance of sqrt(n)(theta_hat - theta)."""

    theta: np.ndarray
    cov: Optional[np.ndarray]
    method: str
    n: int
    names: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def se(self):
        if self.cov is None:
            return np.full(len(self.theta), np.nan)
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None) / self.n)

    def ci(self, level=0.95):
        from scipy.stats import norm
        zq = norm.ppf(0.5 + level / 2.0)
        lo = self.diagnostics.get("ci_lower")
        hi = self.diagnostics.get("ci_upper")
        if lo is not None and hi is not None:
            return np.asarray(lo), np.asarray(hi)
        return self.theta - zq * self.se, self.theta + zq * self.se

    def to_dict(self):
        lo, hi = self.ci()
        return {
            "method": self.method,
            "n": self.n,
            "names": list(self.names),
            "theta": np.asarray(self.theta).tolist(),
            "se": self.se.tolist(),
            "ci_lower": np.asarray(lo).tolist(),
            "ci_upper": np.asarray(hi).tolist(),
            "cov": None if self.cov is None else np.asarray(self.cov).tolist(),
            "diagnostics": _plain(self.diagnostics),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def table(self):
        """Plain-text coefficient table."""
        lo, hi = self.ci()
        rows = [f"{'coef':<12}{'estimate':>12}{'se':>12}{'lower':>12}{'upper':>12}"]
        for i, name in enumerate(self.names or range(len(self.theta))):
            rows.append(f"{str(name):<12}{self.theta[i]:>12.5f}{self.se[i]:>12.5f}"
                        f"{lo[i]:>12.5f}{hi[i]:>12.5f}")
        return "\n".join(rows)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _start(model, y, d):
    theta = np.zeros(d.shape[-1])
    if model.family == "gamma":
        theta[0] = np.log(max(np.mean(y), 1e-300))
    return theta


def _linear_solution(y, d):
    sol, _, rank, _ = np.linalg.lstsq(d, y, rcond=None)
    if rank < d.shape[1]:
        raise FitError("design matrix is rank deficient", sol)
    return sol


def solve_m(model: OutcomeModel, y, x, z=None, theta0=None, tol=1e-9, max_iter=100):
    """Root of the mean estimating function by Newton's method with step-halving.

    Returns ``(theta, info)``; raises FitError / SeparationError on failure.
    """
    y = np.asarray(y, dtype=float)
    d = model.design(x, z)
    if model.family == "linear":
        theta = _linear_solution(y, d)
        score = (y - d @ theta) @ d / len(y)
        return theta, {"iterations": 0, "score_norm": float(np.abs(score).max())}
    theta = _start(model, y, d) if theta0 is None else np.array(theta0, dtype=float)
    eta = d @ theta
    obj = model.objective(y, eta)
    prev_span = np.abs(eta).max()
    for it in range(1, max_iter + 1):
        score = (y - model.mean(eta)) @ d / len(y)
        if np.abs(score).max() <= tol:
            return theta, {"iterations": it - 1, "score_norm": float(np.abs(score).max())}
        hess = (d * model.mean_deriv(eta)[:, None]).T @ d / len(y)
        try:
            step = np.linalg.solve(hess, score)
        except np.linalg.LinAlgError as exc:
            raise FitError("singular information matrix", theta) from exc
        t = 1.0
        for _ in range(60):
            cand = theta + t * step
            eta_c = d @ cand
            obj_c = model.objective(y, eta_c)
            if np.isfinite(obj_c) and obj_c >= obj - 1e-12 * abs(obj):
                break
            t *= 0.5
        else:
            raise FitError("step-halving failed to improve the criterion", theta)
        theta, eta, obj = cand, eta_c, obj_c
        span = np.abs(eta).max()
        if model.family == "logistic" and span > 30 and span > prev_span:
            if np.all((2 * y - 1) * eta > 0) or obj > -1e-8:
                raise SeparationError("outcome is separated by the covariates", theta)
        prev_span = span
        if np.abs(t * step).max() <= 1e-15 * (1 + np.abs(theta).max()):
            score = (y - model.mean(eta)) @ d / len(y)
            if np.abs(score).max() <= 1e3 * tol:
                return theta, {"iterations": it, "score_norm": float(np.abs(score).max())}
    raise FitError(f"no convergence in {max_iter} iterations", theta)


def solve_m_batch(model: OutcomeModel, y, x, z=None, tol=1e-9, max_iter=100):
    """Vectorised :func:`solve_m` over a leading batch axis of ``x`` (B, n, p).

    Returns ``(theta (B, dim), ok (B,))``; failed fits are NaN with ok False.
    """
    y = np.asarray(y, dtype=float)
    d = model.design(x, z)  # (B, n, dim)
    nb, n, dim = d.shape
    if model.family == "linear":
        xtx = np.einsum("bni,bnj->bij", d, d)
        xty = np.einsum("bni,n->bi", d, y)
        ok = np.linalg.cond(xtx) < 1e13
        theta = np.full((nb, dim), np.nan)
        if ok.any():
            theta[ok] = np.linalg.solve(xtx[ok], xty[ok][..., None])[..., 0]
        return theta, ok
    theta = np.tile(_start(model, y, d[0]), (nb, 1))
    eta = (d @ theta[..., None])[..., 0]
    obj = model.objective(y, eta)
    active = np.ones(nb, dtype=bool)
    ok = np.zeros(nb, dtype=bool)
    for _ in range(max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        da, ea = d[idx], eta[idx]
        score = ((y - model.mean(ea))[:, None, :] @ da)[:, 0, :] / n
        done = np.abs(score).max(axis=1) <= tol
        ok[idx[done]] = True
        active[idx[done]] = False
        idx, da, score = idx[~done], da[~done], score[~done]
        if idx.size == 0:
            break
        w = model.mean_deriv(eta[idx])
        hess = np.swapaxes(da * w[..., None], 1, 2) @ da / n
        good = np.linalg.cond(hess) < 1e13
        active[idx[~good]] = False
        idx, da, score, hess = idx[good], da[good], score[good], hess[good]
        step = np.linalg.solve(hess, score[..., None])[..., 0]
        t = np.ones(idx.size)
        todo = np.ones(idx.size, dtype=bool)
        new_theta = theta[idx].copy()
        new_eta = eta[idx].copy()
        new_obj = obj[idx].copy()
        for _ in range(60):
            if not todo.any():
                break
            cand = theta[idx[todo]] + t[todo, None] * step[todo]
            ec = (da[todo] @ cand[..., None])[..., 0]
            oc = model.objective(y, ec)
            base = obj[idx[todo]]
            accept = np.isfinite(oc) & (oc >= base - 1e-12 * np.abs(base))
            sel = np.flatnonzero(todo)[accept]
            new_theta[sel], new_eta[sel], new_obj[sel] = cand[accept], ec[accept], oc[accept]
            todo[np.flatnonzero(todo)[accept]] = False
            t[todo] *= 0.5
        active[idx[todo]] = False
        theta[idx], eta[idx], obj[idx] = new_theta, new_eta, new_obj
        tiny = np.abs(t[:, None] * step).max(axis=1) <= 1e-15 * (1 + np.abs(new_theta).max(axis=1))
        if tiny.any():
            sc = ((y - model.mean(new_eta[tiny]))[:, None, :] @ da[tiny])[:, 0, :] / n
            fine = np.abs(sc).max(axis=1) <= 1e3 * tol
            ok[idx[tiny][fine]] = True
            active[idx[tiny]] = False
    theta[~ok] = np.nan
    return theta, ok


def model_sandwich(model: OutcomeModel, y, x, z, theta):
    """A^{-1} B A^{-T} for the outcome model alone (covariates taken as fixed)."""
    ps = psi(model, y, x, z, theta)
    a = psi_jac(model, y, x, z, theta)
    if np.linalg.matrix_rank(a) < len(theta):
        raise InferenceError("singular outcome-model Jacobian", np.linalg.matrix_rank(a))
    ai = np.linalg.inv(a)
    cov = ai @ (ps.T @ ps / len(y)) @ ai.T
    return 0.5 * (cov + cov.T)


def fit_outcome(model: OutcomeModel, y, x, z=None, method="true-x", se=True):
    theta, info = solve_m(model, y, x, z)
    cov = model_sandwich(model, y, x, z, theta) if se else None
    return FitResult(theta, cov, method, len(y), model.names(), info)


def naive_fit(panel: ProxyPanel, model: OutcomeModel, alpha=None, se=True) -> FitResult:
    """Outcome model with the weighted proxy average in place of X."""
    alpha = np.full(panel.k, 1.0 / panel.k) if alpha is None else np.asarray(alpha, float)
    xstar, _ = panel.combine(alpha)
    res = fit_outcome(model, panel.y, xstar, panel.z if model.q else None, "naive", se)
    res.diagnostics["alpha"] = alpha.tolist()
    return res


def model_for(panel: ProxyPanel, family, use_z=True) -> OutcomeModel:
    return OutcomeModel(family, panel.p, panel.q if use_z else 0)
