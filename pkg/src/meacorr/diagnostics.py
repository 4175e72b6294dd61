"""Checks to run before trusting a correction: linearity between pairs of
proxies and flatness of SIMEX lambda-curves."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import chi2

from .data import ProxyPanel
from .exceptions import DiagnosticError

MIN_PAIR = 20


@dataclass
class LinearityReport:
    j: int
    l: int
    n: int
    component: int
    wald: float
    p_value: float
    r2_linear: float
    r2_quadratic: float
    r2_increment: float
    decile_fitted: list
    decile_residual: list

    def to_dict(self):
        return asdict(self)


def _ols(d, y):
    coef, *_ = np.linalg.lstsq(d, y, rcond=None)
    resid = y - d @ coef
    return coef, resid


def proxy_pair_linearity(panel: ProxyPanel, j, l, component=0) -> LinearityReport:
    """Regress X*_j on X*_l (one component) with and without a quadratic term.

    The Wald statistic tests the quadratic coefficient with a heteroscedasticity
    robust variance; decile residual means of the linear fit are reported
    against binned fitted values.
    """
    both = panel.observed[:, j] & panel.observed[:, l]
    n = int(both.sum())
    if n < MIN_PAIR:
        raise DiagnosticError(f"proxies {j + 1} and {l + 1} are co-observed on {n} subjects; need {MIN_PAIR}")
    yv = panel.proxies[j, both, component]
    xv = panel.proxies[l, both, component]
    tss = np.sum((yv - yv.mean()) ** 2)
    d1 = np.column_stack([np.ones(n), xv])
    _, r1 = _ols(d1, yv)
    r2_lin = 1.0 - r1 @ r1 / tss if tss > 0 else 1.0
    if j == l:
        wald, pval, r2_quad = 0.0, 1.0, r2_lin
    else:
        # centre before squaring to keep the design well conditioned
        xc = (xv - xv.mean()) / (xv.std() or 1.0)
        d2 = np.column_stack([np.ones(n), xc, xc ** 2])
        c2, r2 = _ols(d2, yv)
        r2_quad = 1.0 - r2 @ r2 / tss if tss > 0 else 1.0
        bread = np.linalg.pinv(d2.T @ d2)
        meat = (d2 * r2[:, None] ** 2).T @ d2
        var = bread @ meat @ bread
        if var[2, 2] <= 0:
            wald = np.inf if abs(c2[2]) > 0 else 0.0
        else:
            wald = float(c2[2] ** 2 / var[2, 2])
        pval = float(chi2.sf(wald, 1))
    fitted = yv - r1
    order = np.argsort(fitted, kind="stable")
    bins = np.array_split(order, 10)
    return LinearityReport(
        j=j + 1, l=l + 1, n=n, component=component + 1, wald=float(wald), p_value=pval,
        r2_linear=float(r2_lin), r2_quadratic=float(r2_quad),
        r2_increment=float(r2_quad - r2_lin),
        decile_fitted=[float(fitted[b].mean()) for b in bins],
        decile_residual=[float(r1[b].mean()) for b in bins],
    )


def lambda_flatness(lambdas, estimates, mc_se=None, names=None):
    """WLS slope of each coefficient's curve on lambda, with its standard error.

    Weights are 1/mc_se^2; a zero Monte Carlo SE (the lambda = 0 point) is
    floored at the median positive SE of that coefficient. Coefficients whose
    slope is within 2 SE of zero are flagged flat.
    """
    lam = np.asarray(lambdas, dtype=float)
    est = np.asarray(estimates, dtype=float)
    if est.ndim == 1:
        est = est[:, None]
    if len(lam) < 2 or len(np.unique(lam)) < 2:
        raise DiagnosticError("a flatness test needs at least two distinct lambda values")
    se = np.zeros_like(est) if mc_se is None else np.asarray(mc_se, dtype=float).reshape(est.shape)
    out = []
    for c in range(est.shape[1]):
        s = se[:, c]
        pos = s[s > 0]
        floor = np.median(pos) if pos.size else 1.0
        w = 1.0 / np.maximum(s, floor) ** 2
        lbar = w @ lam / w.sum()
        sxx = w @ (lam - lbar) ** 2
        slope = float(w @ ((lam - lbar) * est[:, c]) / sxx)
        slope_se = float(np.sqrt(1.0 / sxx)) if pos.size else 0.0
        out.append({
            "coefficient": names[c] if names else c,
            "slope": slope,
            "se": slope_se,
            "flat": bool(abs(slope) <= 2.0 * slope_se + 1e-12 * (1 + np.abs(est[:, c]).max())),
        })
    return out


def diagnose_panel(panel: ProxyPanel):
    """Linearity reports for every ordered pair of distinct proxies with enough overlap."""
    reports = []
    for j in range(panel.k):
        for l in range(panel.k):
            if j == l:
                continue
            for c in range(panel.p):
                try:
                    reports.append(proxy_pair_linearity(panel, j, l, c))
                except DiagnosticError:
                    continue
    return reports
