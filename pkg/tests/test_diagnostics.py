import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings, strategies as st

from meacorr.data import ProxyPanel
from meacorr.diagnostics import diagnose_panel, lambda_flatness, proxy_pair_linearity
from meacorr.exceptions import DiagnosticError


def _pair_panel(curve, n=3000, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    a = x + 0.3 * rng.normal(size=n)
    b = curve(x) + 0.3 * rng.normal(size=n)
    return ProxyPanel(np.zeros(n), np.stack([a, b])[:, :, None], np.ones((n, 2), bool))


def test_linear_pair_not_flagged_quadratic_pair_flagged():
    lin = proxy_pair_linearity(_pair_panel(lambda x: 1 + 2 * x), 1, 0)
    quad = proxy_pair_linearity(_pair_panel(lambda x: x + 0.5 * x ** 2), 1, 0)
    assert lin.p_value > 0.001
    assert quad.p_value < 1e-6 and quad.r2_increment > 0.01


def test_wald_matches_statsmodels_hc0():
    panel = _pair_panel(lambda x: x + 0.1 * x ** 2, n=500, seed=4)
    rep = proxy_pair_linearity(panel, 1, 0)
    xv = panel.proxies[0, :, 0]
    xc = (xv - xv.mean()) / xv.std()
    ref = sm.OLS(panel.proxies[1, :, 0], np.column_stack([np.ones(500), xc, xc ** 2])).fit(cov_type="HC0")
    assert rep.wald == pytest.approx(ref.tvalues[2] ** 2, rel=1e-8)


def test_self_pair_is_identity():
    rep = proxy_pair_linearity(_pair_panel(lambda x: x), 0, 0)
    assert rep.p_value == 1.0 and rep.r2_linear == pytest.approx(1.0)


def test_too_few_coobserved():
    panel = _pair_panel(lambda x: x, n=100)
    obs = np.ones((100, 2), bool)
    obs[10:, 1] = False
    small = ProxyPanel(panel.y, panel.proxies, obs)
    with pytest.raises(DiagnosticError):
        proxy_pair_linearity(small, 0, 1)
    assert diagnose_panel(small) == []


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(0.01, 1))
def test_exact_line_slope_recovered(slope, se):
    lam = np.array([0, 0.5, 1, 1.5, 2])
    est = 1.0 + slope * lam
    out = lambda_flatness(lam, est[:, None], np.full((5, 1), se))
    assert out[0]["slope"] == pytest.approx(slope, abs=1e-10)


def test_flat_and_sloped_curves():
    lam = np.array([0, 0.5, 1, 1.5, 2])
    est = np.column_stack([np.full(5, 0.4) + np.array([0, 1e-3, -1e-3, 0, 1e-3]), 1 - 0.2 * lam])
    se = np.column_stack([np.r_[0, np.full(4, 0.01)], np.r_[0, np.full(4, 0.01)]])
    out = lambda_flatness(lam, est, se, ["a", "b"])
    assert out[0]["flat"] and not out[1]["flat"]


def test_single_lambda_rejected():
    with pytest.raises(DiagnosticError):
        lambda_flatness([1.0, 1.0], np.zeros((2, 1)))
