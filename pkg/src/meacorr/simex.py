"""Generalised SIMEX: pseudo-proxies with added error, lambda-curves,
extrapolation to lambda = -1, combination across proxies or groups, and
stacked sandwich inference."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import least_squares

from .data import ErrorModelSpec, ProxyPanel, _psd_sqrt, pattern_weights
from .diagnostics import lambda_flatness
from .exceptions import ConfigError, EstimationError, ExtrapolationError, InferenceError
from .inference import attach_bootstrap
from .models import FitResult, OutcomeModel, model_sandwich, psi_dx, solve_m_batch
from .params import CorrectionParams, XiLayout, estimate_correction_params, sandwich_xi

EXTRAPOLANTS = ("linear", "quadratic", "nonlinear")
_MODES = {"proxies": "proxies", "average-proxies": "proxies", "b": "proxies",
          "estimates": "estimates", "average-estimates": "estimates", "a": "estimates"}


@dataclass
class SimexConfig:
    """Simulation settings.

    ``mode`` "proxies" averages the proxies before adding error (one curve per
    missingness pattern); "estimates" runs one curve per proxy and averages the
    extrapolated estimates. ``extrapolant`` is one family name, "auto", or a
    list with one entry per coefficient.
    """

    lambdas: tuple = (0.0, 0.5, 1.0, 1.5, 2.0)
    n_sim: int = 100
    extrapolant: object = "auto"
    mode: str = "proxies"
    alpha: object = "equal"
    combine: object = "equal"
    seed: int = 0
    max_fail: float = 0.1

    def __post_init__(self):
        self.validate()

    def validate(self):
        lam = np.asarray(self.lambdas, dtype=float)
        if lam.ndim != 1 or len(lam) < 2 or lam[0] != 0.0 or np.any(np.diff(lam) <= 0):
            raise ConfigError("lambda grid must start at 0 and increase strictly")
        if int(self.n_sim) < 1:
            raise ConfigError("n_sim (B) must be at least 1")
        if self.mode not in _MODES:
            raise ConfigError(f"unknown SIMEX mode {self.mode!r}")
        self.mode = _MODES[self.mode]
        fams = [self.extrapolant] if isinstance(self.extrapolant, str) else list(self.extrapolant)
        for f in fams:
            if f not in EXTRAPOLANTS + ("auto",):
                raise ConfigError(f"unknown extrapolant {f!r}")
            if f in ("quadratic", "nonlinear") and len(lam) < 3:
                raise ConfigError(f"the {f} extrapolant needs at least 3 lambda values")
        self.lambdas = tuple(float(v) for v in lam)
        return self


# --------------------------------------------------------------------------
# Extrapolants


@dataclass
class ExtrapolantFit:
    """G(lambda) fitted by least squares to a curve (C = I)."""

    family: str
    gamma: np.ndarray
    lambdas: np.ndarray
    values: np.ndarray
    downgraded: bool = False
    note: str = ""

    def value(self, lam):
        lam = np.asarray(lam, dtype=float)
        g = self.gamma
        if self.family == "linear":
            return g[0] + g[1] * lam
        if self.family == "quadratic":
            return g[0] + g[1] * lam + g[2] * lam ** 2
        return g[0] + g[1] / (g[2] + lam)

    @property
    def residuals(self):
        return self.values - self.value(self.lambdas)

    def grad(self, lam):
        """s = dG/dGamma at ``lam``."""
        g = self.gamma
        if self.family == "linear":
            return np.array([1.0, lam])
        if self.family == "quadratic":
            return np.array([1.0, lam, lam ** 2])
        den = g[2] + lam
        return np.array([1.0, 1.0 / den, -g[1] / den ** 2])

    def hess(self, lam):
        g = self.gamma
        k = len(g)
        h = np.zeros((k, k))
        if self.family == "nonlinear":
            den = g[2] + lam
            h[1, 2] = h[2, 1] = -1.0 / den ** 2
            h[2, 2] = 2.0 * g[1] / den ** 3
        return h

    @property
    def valid(self):
        """No pole between lambda = -1 and the end of the grid."""
        if self.family != "nonlinear":
            return True
        c = self.gamma[2]
        return bool(c > 1.0 or c < -self.lambdas.max())

    def extrapolate(self):
        if self.family == "nonlinear" and abs(self.gamma[2] - 1.0) <= 1e-6:
            raise ExtrapolationError("nonlinear extrapolant has a pole at lambda = -1")
        return float(self.value(-1.0))

    def weights(self):
        """d G(-1, Gamma_hat) / d values: the linear map from curve to estimate.

        Omega = sum_r (s_r s_r' - r_r H_r) accounts for the residual curvature
        of the nonlinear least-squares fit.
        """
        s = np.array([self.grad(l) for l in self.lambdas])  # (R, m)
        omega = s.T @ s
        if self.family == "nonlinear":
            for l, r in zip(self.lambdas, self.residuals):
                omega -= r * self.hess(l)
        if np.linalg.cond(omega) > 1e13:
            raise InferenceError("extrapolant information matrix is singular")
        return self.grad(-1.0) @ np.linalg.solve(omega, s.T)


def _poly_fit(lam, vals, deg):
    v = np.vander(lam, deg + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(v, vals, rcond=None)
    return coef


def _rational_given_c(lam, vals, c):
    d = np.column_stack([np.ones_like(lam), 1.0 / (c + lam)])
    ab, *_ = np.linalg.lstsq(d, vals, rcond=None)
    return np.array([ab[0], ab[1], c])


def fit_extrapolant(lambdas, values, family="quadratic") -> ExtrapolantFit:
    """Least-squares extrapolant; the nonlinear family uses Levenberg-Marquardt
    from a quadratic-tangency start plus a few fixed starts for c."""
    lam = np.asarray(lambdas, dtype=float)
    vals = np.asarray(values, dtype=float)
    need = {"linear": 2, "quadratic": 3, "nonlinear": 3}
    if family not in need:
        raise ConfigError(f"unknown extrapolant {family!r}")
    if len(lam) < need[family]:
        raise ConfigError(f"the {family} extrapolant needs at least {need[family]} points")
    if family == "linear":
        return ExtrapolantFit("linear", _poly_fit(lam, vals, 1), lam, vals)
    quad = _poly_fit(lam, vals, 2)
    if family == "quadratic":
        return ExtrapolantFit("quadratic", quad, lam, vals)

    lmax = lam.max()
    lm = 0.5 * (lam.min() + lmax)
    g1 = quad[1] + 2 * quad[2] * lm
    g2 = 2 * quad[2]
    starts = []
    if abs(g2) > 1e-14 * (1 + abs(g1)):
        c0 = -2.0 * g1 / g2 - lm
        if c0 > 0 or c0 < -lmax:
            starts.append(c0)
    if not starts:
        starts.append(2.0 * lmax)
    starts += [f * lmax for f in (0.5, 1.0, 2.0, 4.0)]
    scale = max(1.0, float(np.abs(vals).max()))
    best = None
    for c0 in starts:
        g0 = _rational_given_c(lam, vals, c0)

        def resid(g):
            return (g[0] + g[1] / (g[2] + lam) - vals) / scale

        try:
            with np.errstate(all="ignore"):
                sol = least_squares(resid, g0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                    max_nfev=2000)
        except (ValueError, np.linalg.LinAlgError):
            continue
        if not np.all(np.isfinite(sol.x)) or np.any(np.abs(sol.x[2] + lam) < 1e-10):
            continue
        sse = float(np.sum(resid(sol.x) ** 2))
        if best is None or sse < best[0] - 1e-300:
            best = (sse, sol.x)
    if best is None:
        return ExtrapolantFit("quadratic", quad, lam, vals, downgraded=True,
                              note="nonlinear fit failed at every start")
    return ExtrapolantFit("nonlinear", best[1], lam, vals)


def extrapolate(fit: ExtrapolantFit) -> float:
    """G(-1) of a fitted extrapolant."""
    return fit.extrapolate()


def _safe_extrapolant(lam, vals, family):
    """Fit ``family``; fall back to quadratic when the nonlinear fit cannot be
    evaluated at -1 or its information matrix is singular."""
    fit = fit_extrapolant(lam, vals, family)
    if fit.family == "nonlinear":
        reason = None
        if not fit.valid:
            reason = "pole between -1 and the grid"
        else:
            try:
                fit.extrapolate()
                fit.weights()
            except (ExtrapolationError, InferenceError) as exc:
                reason = str(exc)
        if reason:
            fit = fit_extrapolant(lam, vals, "quadratic")
            fit.downgraded, fit.note = True, reason
    return fit


# --------------------------------------------------------------------------
# Simulation step


def pseudo_proxy(x, eta0, eta1, m, lam, noise):
    """eta1^{-1} o (x - eta0 + lam^{1/2} M^{1/2} nu) with the symmetric root of M."""
    x = np.asarray(x, dtype=float)
    add = 0.0
    if lam > 0:
        add = np.sqrt(lam) * (np.asarray(noise, dtype=float) @ _psd_sqrt(np.atleast_2d(m)).T)
    return (x - eta0 + add) / eta1


def _sqrt_derivs(m):
    """d sqrt(M) / d vech(M) by central differences, shape (n_vech, p, p)."""
    p = m.shape[0]
    iu = np.triu_indices(p)
    out = []
    for a, b in zip(*iu):
        e = np.zeros((p, p))
        e[a, b] = e[b, a] = 1.0
        h = max(1e-6, 1e-6 * abs(m[a, b]))
        out.append((_psd_sqrt(m + h * e) - _psd_sqrt(m - h * e)) / (2 * h))
    return np.array(out)


@dataclass
class SimexCurve:
    """lambda-curve for one proxy (average-estimates) or one pattern group."""

    label: str
    key: tuple
    rows: np.ndarray
    lambdas: np.ndarray
    estimates: np.ndarray
    mc_se: np.ndarray
    n_failed: dict
    dropped: list
    e0: np.ndarray
    e1: np.ndarray
    m: np.ndarray
    infl: Optional[np.ndarray] = field(default=None, repr=False)
    dpar: Optional[np.ndarray] = field(default=None, repr=False)


def _noise(key, n_sim, shape):
    """Standard normal draws, one child stream per b (shared across lambda)."""
    return np.stack([
        np.random.default_rng(np.random.SeedSequence(list(key) + [b])).standard_normal(shape)
        for b in range(n_sim)
    ])


def simulate_curve(model: OutcomeModel, y, z, xs, e0, e1, m, lambdas, n_sim, key,
                   max_fail=0.1, label="", rows=None, inference=None) -> SimexCurve:
    """Run the simulation step for one curve.

    ``xs`` is the (combined) proxy for the curve's subjects, ``e0``/``e1`` its
    intercept and scale and ``m`` its error covariance. With ``inference`` the
    per-subject Psi contributions and the derivative of the curve with respect
    to (e0, e1, vech M) are kept for the sandwich: ``inference`` is None,
    "psi" (model part only) or "full".
    """
    n, p = xs.shape
    u = xs - e0
    msq = _psd_sqrt(m)
    nu = _noise(key, n_sim, (n, p))
    dsq = _sqrt_derivs(m) if inference == "full" else None
    keep, est, mcse, infl, dpar = [], [], [], [], []
    n_failed, dropped = {}, []
    for lam in lambdas:
        if lam == 0:
            xb = (u / e1)[None]
        else:
            xb = (u[None] + np.sqrt(lam) * nu @ msq.T) / e1
        th, ok = solve_m_batch(model, y, xb, z)
        if lam == 0:
            th, ok = np.repeat(th, n_sim, axis=0), np.repeat(ok, n_sim)
        n_failed[float(lam)] = int((~ok).sum())
        if (~ok).mean() > max_fail:
            dropped.append(float(lam))
            continue
        keep.append(lam)
        est.append(th[ok].mean(axis=0))
        mcse.append(th[ok].std(axis=0, ddof=1) / np.sqrt(ok.sum()) if ok.sum() > 1 else np.zeros(th.shape[1]))
        if inference:
            i_l, d_l = _curve_pieces(model, y, z, xb, th, ok, nu, lam, e1, dsq, inference == "full")
            infl.append(i_l)
            dpar.append(d_l)
    if not keep:
        raise EstimationError(f"SIMEX curve {label}: every lambda point failed")
    return SimexCurve(
        label=label, key=tuple(key), rows=rows, lambdas=np.array(keep), estimates=np.array(est),
        mc_se=np.array(mcse), n_failed=n_failed, dropped=dropped, e0=e0, e1=e1, m=m,
        infl=np.stack(infl, axis=1) if inference else None,
        dpar=np.array(dpar) if inference == "full" else None,
    )


def _curve_pieces(model, y, z, xb, th, ok, nu, lam, e1, dsq, full=True):
    """Per-subject -A_b^{-1} psi_ib averaged over b and, with ``full``,
    d theta(lambda) / d(e0, e1, vech M)."""
    if xb.shape[0] == 1:
        xs, ths, nus = xb, th[:1], None
    else:
        xs, ths, nus = xb[ok], th[ok], nu[ok]
    nb, n, p = xs.shape
    d = model.design(xs, z)
    eta = np.einsum("bni,bi->bn", d, ths)
    r = y - model.mean(eta)
    w = model.mean_deriv(eta)
    a = -np.matmul(np.swapaxes(d * w[..., None], 1, 2), d) / n
    ainv = np.linalg.inv(a)
    infl = -np.matmul(r[..., None] * d, np.swapaxes(ainv, 1, 2)).mean(axis=0)
    if not full:
        return infl, None
    # d psi / d x per subject, averaged against the derivative of x
    pd = -(w[..., None, None] * d[..., :, None]) * ths[:, None, None, model.x_slice]
    for c in range(p):
        pd[:, :, 1 + c, c] += r
    dim = d.shape[2]
    t0 = -pd.mean(axis=1) / e1
    t1 = -(pd * xs[:, :, None, :]).sum(axis=1) / n / e1
    ne = dsq.shape[0]
    if lam > 0:
        # dx[b, n, e, f] = sqrt(lam) (dS_e nu_bn)_f / e1_f
        dx = (nus @ np.transpose(dsq, (1, 0, 2)).reshape(p, ne * p)).reshape(nb, n, ne, p)
        dx *= np.sqrt(lam) / e1
        lhs = np.transpose(pd, (0, 2, 1, 3)).reshape(nb, dim, n * p)
        rhs = np.transpose(dx, (0, 1, 3, 2)).reshape(nb, n * p, ne)
        tm = np.matmul(lhs, rhs) / n
    else:
        tm = np.zeros((nb, dim, ne))
    t = np.concatenate([t0, t1, tm], axis=2)
    dpar = -np.matmul(ainv, t).mean(axis=0)
    return infl, dpar


# --------------------------------------------------------------------------
# Combination


def combine_estimates(estimates, weights="equal", cov=None):
    """Weighted average of per-proxy estimates of one coefficient.

    ``estimates`` has shape (k,) or (k, d). With ``weights="optimal"`` and
    k = 2 the weight on the first estimate is 1/2 + (var1 - var2) / (4 cov),
    clipped to [0, 1]; for k > 2 w' cov w is minimised on the simplex. Returns
    ``(combined, weights, flag)``; flag notes a fallback to equal weights.
    """
    est = np.asarray(estimates, dtype=float)
    k = est.shape[0]
    flag = ""
    if isinstance(weights, str):
        if weights == "equal":
            w = np.full(k, 1.0 / k)
        elif weights == "optimal":
            if cov is None:
                w, flag = np.full(k, 1.0 / k), "no covariance; equal weights used"
            else:
                w = optimal_combination(np.asarray(cov, dtype=float))
        else:
            raise ConfigError(f"unknown combination rule {weights!r}")
    else:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
    return np.tensordot(w, est, axes=1), w, flag


def optimal_combination(cov):
    k = cov.shape[0]
    if k == 1:
        return np.ones(1)
    if k == 2:
        if abs(cov[0, 1]) < 1e-300:
            a1 = 0.5
        else:
            a1 = 0.5 + (cov[0, 0] - cov[1, 1]) / (4.0 * cov[0, 1])
        a1 = float(np.clip(a1, 0.0, 1.0))
        return np.array([a1, 1.0 - a1])
    from scipy.optimize import minimize
    x0 = np.full(k, 1.0 / k)
    res = minimize(lambda w: w @ cov @ w, x0, jac=lambda w: 2 * cov @ w, method="SLSQP",
                   bounds=[(0, 1)] * k, constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1}])
    w = np.clip(res.x, 0, None) if res.success else x0
    return w / w.sum()


# --------------------------------------------------------------------------
# Pipeline


def _families(cfg_extrap, model, curve, names):
    d = model.dim
    if isinstance(cfg_extrap, str):
        fams = [cfg_extrap] * d
    else:
        fams = list(cfg_extrap)
        if len(fams) != d:
            raise ConfigError(f"need {d} extrapolant entries, got {len(fams)}")
    if "auto" in fams:
        flat = lambda_flatness(curve.lambdas, curve.estimates, curve.mc_se, names)
        xs = set(range(1, 1 + model.p))
        for c, f in enumerate(fams):
            if f != "auto":
                continue
            if model.family == "logistic" and c in xs:
                fams[c] = "nonlinear"
            elif flat[c]["flat"]:
                fams[c] = "linear"
            else:
                fams[c] = "quadratic"
    lim = {"linear": 2, "quadratic": 3, "nonlinear": 3}
    return [f if len(curve.lambdas) >= lim[f] else "linear" for f in fams]


def _pattern_code(pattern):
    return int(sum(1 << j for j, v in enumerate(pattern) if v))


def build_curves(panel, model, xi: CorrectionParams, cfg: SimexConfig, alpha, inference=None):
    """All curves needed for the chosen mode."""
    x = panel.filled()
    z = panel.z[:, :model.q]
    curves = []
    if cfg.mode == "estimates":
        for j in range(panel.k):
            rows = np.flatnonzero(panel.observed[:, j])
            curves.append(simulate_curve(
                model, panel.y[rows], z[rows], x[j, rows], xi.eta0[j], xi.eta1[j], xi.m[j],
                cfg.lambdas, cfg.n_sim, (cfg.seed, 0, j), cfg.max_fail, f"proxy{j + 1}", rows,
                inference))
    else:
        for pat, rows in panel.patterns():
            w = pattern_weights(pat, alpha)
            xs = np.einsum("j,jnp->np", w, x[:, rows])
            e0 = w @ xi.eta0
            e1 = w @ xi.eta1
            m = np.einsum("j,jab->ab", w ** 2, xi.m)
            label = "pattern" + "".join(str(int(v)) for v in pat)
            curves.append(simulate_curve(
                model, panel.y[rows], z[rows], xs, e0, e1, m, cfg.lambdas, cfg.n_sim,
                (cfg.seed, 1, _pattern_code(pat)), cfg.max_fail, label, rows, inference))
    return curves


def _curve_param_map(curve_idx, cfg, panel, xi, alpha, layout):
    """Linear map from xi to the curve's (e0, e1, vech M), shape (n_par, layout.size)."""
    k, p = xi.k, xi.p
    iu = np.triu_indices(p)
    pv = len(iu[0])
    if cfg.mode == "estimates":
        w = np.zeros(k)
        w[curve_idx] = 1.0
        wm = w
    else:
        pat = panel.patterns()[curve_idx][0]
        w = pattern_weights(pat, alpha)
        wm = w ** 2
    out = np.zeros((2 * p + pv, layout.size))
    s0, s1, sm = layout.slices["eta0"], layout.slices["eta1"], layout.slices["m"]
    for j in range(k):
        for a in range(p):
            out[a, s0.start + j * p + a] = w[j]
            out[p + a, s1.start + j * p + a] = w[j]
        for e in range(pv):
            out[2 * p + e, sm.start + j * pv + e] = wm[j]
    return out


def curve_influence(curve, fits, n, xi_infl=None, pmap=None):
    """Per-subject influence of each extrapolated coefficient, shape (n, d)."""
    d = curve.estimates.shape[1]
    out = np.zeros((n, d))
    n_c = len(curve.rows)
    for c in range(d):
        v = fits[c].weights()
        out[curve.rows, c] = (n / n_c) * curve.infl[:, :, c] @ v
        if xi_infl is not None:
            dth = np.einsum("r,rk->k", v, curve.dpar[:, c, :])  # d estimate / d(e0, e1, vech M)
            out[:, c] += xi_infl @ (pmap.T @ dth)
    return out


def simex_sandwich(curves, fits, weights, n, xi_infl=None, pmaps=None):
    """Covariance of sqrt(n)(theta_SIMEX - theta) from the stacked system.

    ``weights`` has shape (n_curves, d): the per-coefficient combination.
    """
    infl = np.zeros((n, curves[0].estimates.shape[1]))
    for i, (cv, ft) in enumerate(zip(curves, fits)):
        infl += weights[i] * curve_influence(cv, ft, n, xi_infl, None if pmaps is None else pmaps[i])
    cov = infl.T @ infl / n
    return 0.5 * (cov + cov.T)


def fit_simex(panel: ProxyPanel, model: OutcomeModel, spec: ErrorModelSpec, cfg: SimexConfig = None,
              xi=None, se="sandwich", n_boot=200, n_jobs=1, curve_out=None) -> FitResult:
    """Generalised SIMEX estimate with optional sandwich or bootstrap SEs."""
    cfg = SimexConfig() if cfg is None else cfg
    if xi is None:
        xi = estimate_correction_params(panel, spec)
    if isinstance(cfg.alpha, str):
        if cfg.alpha == "equal":
            alpha = np.full(panel.k, 1.0 / panel.k)
        elif cfg.alpha == "optimal":
            from .calibration import optimal_alpha, pattern_table
            alpha = optimal_alpha(xi, pattern_table(panel))
        else:
            raise ConfigError(f"unknown weight mode {cfg.alpha!r}")
    else:
        alpha = np.asarray(cfg.alpha, dtype=float)
        alpha = alpha / alpha.sum()
    names = model.names()
    curves = build_curves(panel, model, xi, cfg, alpha,
                          inference="full" if se == "sandwich" else "psi")
    fits, ests = [], []
    for cv in curves:
        fams = _families(cfg.extrapolant, model, cv, names)
        f_c = [_safe_extrapolant(cv.lambdas, cv.estimates[:, c], fams[c]) for c in range(model.dim)]
        fits.append(f_c)
        ests.append([f.extrapolate() for f in f_c])
    ests = np.array(ests)  # (n_curves, d)

    n = panel.n
    # model-only variances: used for inverse-variance weights across groups and
    # for the optimal combination across proxies
    psi_cov = [curve_influence(cv, ft, n) for cv, ft in zip(curves, fits)]
    flag = ""
    if cfg.mode == "proxies":
        var = np.array([np.mean(ic ** 2, axis=0) for ic in psi_cov])
        wts = 1.0 / np.maximum(var, 1e-300)
        wts = wts / wts.sum(axis=0)
    else:
        wts = np.zeros_like(ests)
        for c in range(model.dim):
            cov_c = np.array([[np.mean(a[:, c] * b[:, c]) for b in psi_cov] for a in psi_cov])
            _, w_c, flag = combine_estimates(ests[:, c], cfg.combine, cov_c)
            wts[:, c] = w_c
    theta = np.sum(wts * ests, axis=0)

    res = FitResult(theta, None, f"gen-simex-{cfg.mode}", n, names)
    res.diagnostics.update(
        mode=cfg.mode, lambdas=list(cfg.lambdas), n_sim=cfg.n_sim, alpha=alpha.tolist(),
        combine_weights=wts.tolist(), combine_flag=flag,
        curves=[{"label": cv.label, "n": len(cv.rows), "dropped": cv.dropped,
                 "extrapolants": [f.family for f in ft],
                 "downgraded": [f.note for f in ft if f.downgraded],
                 "estimates": [f.extrapolate() for f in ft]} for cv, ft in zip(curves, fits)],
        m_clip=xi.m_clip.tolist(),
    )
    if se == "sandwich":
        inf = sandwich_xi(panel, xi, spec)
        layout = XiLayout.for_params(xi)
        pmaps = [_curve_param_map(i, cfg, panel, xi, alpha, layout) for i in range(len(curves))]
        res.cov = simex_sandwich(curves, fits, wts, n, inf.influence(), pmaps)
        res.diagnostics["se_method"] = "sandwich"
    elif se == "bootstrap":
        def refit(pb):
            return fit_simex(pb, model, spec, cfg, se="none").theta
        attach_bootstrap(res, refit, panel, n_boot, cfg.seed, n_jobs)
    elif se not in ("none", None):
        raise ConfigError(f"unknown se method {se!r}")
    res.curves = curves
    if curve_out is not None:
        write_curve_csv(curves, names, curve_out)
    return res


def write_curve_csv(curves, names, path):
    """coefficient, lambda, estimate, mc_se (plus the curve label)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["coefficient", "lambda", "estimate", "mc_se", "curve"])
        for cv in curves:
            for r, lam in enumerate(cv.lambdas):
                for c, name in enumerate(names):
                    wr.writerow([name, repr(float(lam)), repr(float(cv.estimates[r, c])),
                                 repr(float(cv.mc_se[r, c])), cv.label])


# --------------------------------------------------------------------------
# Classical baseline


def standard_simex(panel: ProxyPanel, model: OutcomeModel, cfg: SimexConfig = None) -> FitResult:
    """SIMEX on the replicate mean with error covariance Sigma_U / kappa_i.

    Noise for subject i is drawn from the same stream the generalised
    average-proxies mode uses for the complete pattern.
    """
    from .calibration import replicate_moments
    cfg = SimexConfig() if cfg is None else cfg
    wbar, kap, s_u = replicate_moments(panel)
    n, p = wbar.shape
    z = panel.z[:, :model.q]
    nu = _noise((cfg.seed, 1, _pattern_code([True] * panel.k)), cfg.n_sim, (n, p))
    roots = {kv: _psd_sqrt(s_u / kv) for kv in np.unique(kap)}
    sq = np.array([roots[kv] for kv in kap])  # (n, p, p)
    est, mcse, keep = [], [], []
    for lam in cfg.lambdas:
        if lam == 0:
            th, ok = solve_m_batch(model, panel.y, wbar[None], z)
            th, ok = np.repeat(th, cfg.n_sim, axis=0), np.repeat(ok, cfg.n_sim)
        else:
            xb = wbar[None] + np.sqrt(lam) * np.einsum("npq,bnq->bnp", sq, nu)
            th, ok = solve_m_batch(model, panel.y, xb, z)
        if (~ok).mean() > cfg.max_fail:
            continue
        keep.append(lam)
        est.append(th[ok].mean(axis=0))
        mcse.append(th[ok].std(axis=0, ddof=1) / np.sqrt(ok.sum()) if ok.sum() > 1 else np.zeros(th.shape[1]))
    if not keep:
        raise EstimationError("standard SIMEX: every lambda point failed")
    lam = np.array(keep)
    est, mcse = np.array(est), np.array(mcse)
    cv = SimexCurve("replicate-mean", (), np.arange(n), lam, est, mcse, {}, [], 0, 1, s_u)
    fams = _families(cfg.extrapolant, model, cv, model.names())
    fits = [_safe_extrapolant(lam, est[:, c], fams[c]) for c in range(model.dim)]
    theta = np.array([f.extrapolate() for f in fits])
    res = FitResult(theta, None, "standard-simex", n, model.names())
    res.diagnostics.update(extrapolants=[f.family for f in fits], sigma_u=s_u.tolist())
    res.curves = [cv]
    return res
