import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings, strategies as st

from meacorr.exceptions import ConfigError, SeparationError
from meacorr.models import (FitResult, OutcomeModel, model_sandwich, psi, psi_dx, psi_jac, solve_m,
                            solve_m_batch)
from meacorr.numdiff import central_jacobian


def _data(family, n=400, seed=0, p=2, q=1):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    z = rng.binomial(1, 0.4, size=(n, q)).astype(float)
    eta = 0.3 + x @ np.linspace(0.5, -0.4, p) + z @ np.full(q, 0.6)
    if family == "linear":
        y = eta + rng.normal(size=n)
    elif family == "logistic":
        y = rng.binomial(1, 1 / (1 + np.exp(-eta))).astype(float)
    else:
        y = rng.gamma(1.0, np.exp(eta))
    return x, z, y


SM_FAMILY = {
    "linear": sm.families.Gaussian(),
    "logistic": sm.families.Binomial(),
    # the gamma quasi-score (y - exp(eta)) d is the log-link Poisson score
    "gamma": sm.families.Poisson(),
}


@pytest.mark.parametrize("family", ["linear", "logistic", "gamma"])
def test_solver_matches_statsmodels(family):
    x, z, y = _data(family)
    model = OutcomeModel(family, 2, 1)
    theta, _ = solve_m(model, y, x, z)
    d = model.design(x, z)
    ref = sm.GLM(y, d, family=SM_FAMILY[family]).fit(tol=1e-13)
    np.testing.assert_allclose(theta, ref.params, atol=1e-7)


@pytest.mark.parametrize("family", ["linear", "logistic", "gamma"])
def test_sandwich_matches_statsmodels_hc0(family):
    x, z, y = _data(family, seed=1)
    model = OutcomeModel(family, 2, 1)
    theta, _ = solve_m(model, y, x, z)
    cov = model_sandwich(model, y, x, z, theta) / len(y)
    ref = sm.GLM(y, model.design(x, z), family=SM_FAMILY[family]).fit(tol=1e-13, cov_type="HC0")
    np.testing.assert_allclose(cov, ref.cov_params(), rtol=1e-5)


@pytest.mark.parametrize("family", ["linear", "logistic", "gamma"])
def test_analytic_derivatives_match_numeric(family):
    x, z, y = _data(family, n=50, seed=2)
    model = OutcomeModel(family, 2, 1)
    theta = np.array([0.1, 0.2, -0.3, 0.4])
    num = central_jacobian(lambda t: psi(model, y, x, z, t).mean(axis=0), theta)
    np.testing.assert_allclose(psi_jac(model, y, x, z, theta), num, atol=1e-6)
    dx = psi_dx(model, y, x, z, theta)
    i = 7
    num_x = central_jacobian(
        lambda v: psi(model, y[i:i + 1], v[None, :], z[i:i + 1], theta)[0], x[i])
    np.testing.assert_allclose(dx[i], num_x, atol=1e-6)


@pytest.mark.parametrize("family", ["linear", "logistic", "gamma"])
def test_batch_solver_equals_single(family):
    x, z, y = _data(family, n=300, seed=3, p=1)
    model = OutcomeModel(family, 1, 1)
    rng = np.random.default_rng(9)
    xb = x[None] + 0.3 * rng.normal(size=(4, 300, 1))
    th, ok = solve_m_batch(model, y, xb, z)
    assert ok.all()
    for b in range(4):
        single, _ = solve_m(model, y, xb[b], z)
        np.testing.assert_allclose(th[b], single, atol=1e-7)


def test_separation_detected():
    x = np.linspace(-1, 1, 40)[:, None]
    y = (x[:, 0] > 0).astype(float)
    with pytest.raises(SeparationError):
        solve_m(OutcomeModel("logistic", 1, 0), y, x)


def test_unknown_family():
    with pytest.raises(ConfigError):
        OutcomeModel("poisson")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(-3, 3), st.floats(0.1, 5))
def test_linear_fit_equivariant_under_affine_covariate(seed, shift, scale):
    x, z, y = _data("linear", n=80, seed=seed, p=1)
    model = OutcomeModel("linear", 1, 1)
    a, _ = solve_m(model, y, x, z)
    b, _ = solve_m(model, y, scale * x + shift, z)
    np.testing.assert_allclose(b[1], a[1] / scale, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(b[0], a[0] - a[1] * shift / scale, rtol=1e-8, atol=1e-8)


def test_fit_result_interval_and_json():
    res = FitResult(np.array([1.0, 2.0]), np.diag([4.0, 9.0]), "m", 100, ["intercept", "x"])
    np.testing.assert_allclose(res.se, [0.2, 0.3])
    lo, hi = res.ci()
    np.testing.assert_allclose(hi - lo, 2 * 1.959963984540054 * res.se)
    assert '"method": "m"' in res.to_json()
