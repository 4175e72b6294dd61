import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meacorr.calibration import (blup_mse, build_blup, calibrate, fit_rc, optimal_alpha,
                                 standard_rc, weighted_mse)
from meacorr.data import ErrorModelSpec, ProxyPanel, generate_panel, study_config
from meacorr.models import OutcomeModel
from meacorr.numdiff import central_jacobian
from meacorr.params import RawMoments, estimate_correction_params, identify

from oracles import blup_bruteforce, population_moments


def pop_xi(m_diag, eta0=None, eta1=None, mu_x=1.0, sxx=1.0, spec=None):
    k = len(m_diag)
    eta0 = np.zeros((k, 1)) if eta0 is None else np.asarray(eta0, float).reshape(k, 1)
    eta1 = np.ones((k, 1)) if eta1 is None else np.asarray(eta1, float).reshape(k, 1)
    m = np.asarray(m_diag, float).reshape(k, 1, 1)
    mom = population_moments(np.array([mu_x]), np.array([[sxx]]), eta0, eta1, m)
    spec = spec or ErrorModelSpec.unbiased(k)
    return identify(RawMoments(**mom), spec, has_z=False)


def test_optimal_alpha_inverse_variance_two_proxies():
    xi = pop_xi([0.5, 1.0])
    a = optimal_alpha(xi)
    np.testing.assert_allclose(a, [2 / 3, 1 / 3], atol=1e-6)
    # brute-force grid oracle
    grid = np.linspace(0, 1, 2001)
    mse = [blup_bruteforce(1.0, np.ones(2), np.array([0.5, 1.0]), [g, 1 - g], 1.0, np.zeros(2))[2]
           for g in grid]
    assert abs(grid[int(np.argmin(mse))] - a[0]) < 1e-3


def test_blup_matches_bruteforce_biased_proxies():
    eta0, eta1, m = [0.0, 0.0, 0.5], [1.0, 1.0, 0.5], [1.0, 1.0, 1 / 12]
    spec = ErrorModelSpec.from_sets(3, [0, 1], [0, 1])
    xi = pop_xi(m, eta0, eta1, mu_x=3.0, sxx=1.0, spec=spec)
    alpha = np.array([0.2, 0.3, 0.5])
    b = build_blup(xi, alpha, np.ones(3, bool))
    mu, beta, mse = blup_bruteforce(1.0, np.array(eta1), np.array(m), alpha, 3.0, np.array(eta0))
    assert b.mu[0] == pytest.approx(mu, abs=1e-12)
    assert b.beta[0, 0] == pytest.approx(beta, abs=1e-12)
    assert blup_mse(xi, alpha) == pytest.approx(mse, abs=1e-12)


def test_pattern_renormalisation():
    xi = pop_xi([1.0, 1.0, 1.0])
    b = build_blup(xi, np.full(3, 1 / 3), np.array([True, False, True]))
    np.testing.assert_allclose(b.alpha, [0.5, 0.0, 0.5])


def test_mse_gradient_matches_numeric():
    xi = pop_xi([0.4, 1.0, 2.0], eta1=[1.0, 1.0, 1.7], spec=ErrorModelSpec.from_sets(3, [0, 1, 2], [0, 1]))
    w = np.array([0.5, 0.2, 0.3])
    _, g = blup_mse(xi, w, grad=True)
    num = central_jacobian(lambda v: np.array([blup_mse(xi, v)]), w)[0]
    np.testing.assert_allclose(g, num, atol=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.05, 5.0), min_size=2, max_size=4))
def test_optimal_never_worse_than_equal(ms):
    xi = pop_xi(ms)
    k = len(ms)
    pats = [(np.ones(k, bool), 0.6), (np.r_[True, True, np.zeros(k - 2, bool)], 0.4)]
    a = optimal_alpha(xi, pats)
    assert a.min() >= 0 and a.sum() == pytest.approx(1.0)
    assert weighted_mse(xi, a, pats) <= weighted_mse(xi, np.full(k, 1 / k), pats) + 1e-12


def test_per_pattern_calibration_is_local():
    cfg = study_config(3, n=600)
    panel = generate_panel(cfg, seed=3)
    spec = ErrorModelSpec.from_sets(3, [0, 1], [0, 1])
    xi = estimate_correction_params(panel, spec)
    alpha = np.full(3, 1 / 3)
    xhat, _ = calibrate(panel, xi, alpha)
    keep = panel.observed[:, 1]
    sub = panel.take(np.flatnonzero(keep))
    xsub, _ = calibrate(sub, xi, alpha)
    np.testing.assert_array_equal(xsub, xhat[keep])


def _iid_panel(n=800, k=3, seed=0, family="linear"):
    rng = np.random.default_rng(seed)
    x = rng.normal(1.0, 1.0, size=n)
    z = rng.normal(size=(n, 1))
    eta = 0.5 + 1.5 * x - 0.7 * z[:, 0]
    y = eta + rng.normal(size=n) if family == "linear" else rng.binomial(1, 1 / (1 + np.exp(-eta)))
    prox = x[None, :, None] + rng.normal(0, 0.8, size=(k, n, 1))
    return ProxyPanel(y=y.astype(float), proxies=prox, observed=np.ones((n, k), bool), z=z)


@pytest.mark.parametrize("family", ["linear", "logistic"])
def test_reduces_to_standard_rc(family):
    panel = _iid_panel(family=family)
    model = OutcomeModel(family, 1, 1)
    gen = fit_rc(panel, model, ErrorModelSpec.unbiased(3), weights="equal", se="none")
    std = standard_rc(panel, model)
    np.testing.assert_allclose(gen.theta, std.theta, atol=1e-8)


def test_rc_sandwich_positive_and_recorded():
    cfg = study_config(1, n=500)
    panel = generate_panel(cfg, seed=7)
    model = OutcomeModel("linear", 3, 0)
    res = fit_rc(panel, model, cfg.error_spec(), weights="optimal", se="sandwich")
    assert np.all(res.se > 0) and np.all(np.isfinite(res.se))
    assert res.method == "gen-rc-optimal"
