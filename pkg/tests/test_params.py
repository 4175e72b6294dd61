import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meacorr.data import ErrorModelSpec, ProxyPanel, generate_panel, study_config
from meacorr.exceptions import ConfigError, IdentifiabilityError, ModelViolationError
from meacorr.params import (CorrectionParams, RawMoments, XiLayout, estimate_correction_params,
                            estimate_raw_moments, g_matrix, identify, sandwich_xi)

from oracles import population_moments, random_spd


def random_design(rng, with_z=None):
    k = int(rng.choice([2, 3, 4]))
    p = int(rng.choice([1, 2]))
    has_z = bool(rng.integers(2)) if with_z is None else with_z
    n1 = int(rng.integers(1 if has_z else 2, k + 1))
    j1 = sorted(rng.choice(k, size=n1, replace=False).tolist())
    j0 = sorted(rng.choice(k, size=int(rng.integers(1, k + 1)), replace=False).tolist())
    mu_x = rng.normal(size=p)
    sxx = random_spd(rng, p)
    eta0 = np.where(np.isin(np.arange(k), j0)[:, None], 0.0, rng.normal(size=(k, p)))
    eta1 = np.where(np.isin(np.arange(k), j1)[:, None], 1.0, rng.uniform(0.4, 2.0, size=(k, p)))
    m = np.stack([random_spd(rng, p, 0.5) for _ in range(k)])
    z = {}
    if has_z:
        q = int(rng.integers(1, 3))
        z = dict(mu_z=rng.normal(size=q), szz=random_spd(rng, q), szx=rng.normal(size=(q, p)))
    spec = ErrorModelSpec.from_sets(k, j0, j1, use_z=has_z)
    truth = dict(mu_x=mu_x, sxx=sxx, eta0=eta0, eta1=eta1, m=m)
    return spec, truth, population_moments(mu_x, sxx, eta0, eta1, m, **z), has_z


def assert_recovers(spec, truth, mom, has_z, tol):
    cp = identify(RawMoments(**mom), spec, has_z=has_z)
    np.testing.assert_allclose(cp.mu_x, truth["mu_x"], atol=tol)
    np.testing.assert_allclose(cp.sigma_xx, truth["sxx"], atol=tol)
    np.testing.assert_allclose(cp.eta0, truth["eta0"], atol=tol)
    np.testing.assert_allclose(cp.eta1, truth["eta1"], atol=tol)
    np.testing.assert_allclose(cp.m, truth["m"], atol=tol)


@pytest.mark.parametrize("seed", range(10))
def test_identify_exact_population_moments(seed):
    spec, truth, mom, has_z = random_design(np.random.default_rng(seed))
    assert_recovers(spec, truth, mom, has_z, 1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.booleans())
def test_identify_recovers_any_valid_design(seed, with_z):
    spec, truth, mom, has_z = random_design(np.random.default_rng(seed), with_z)
    assert_recovers(spec, truth, mom, has_z, 1e-8)


def test_known_eta_working_variables():
    k = 3
    eta0 = np.array([[0.0], [0.0], [0.7]])
    eta1 = np.array([[1.0], [1.0], [1.5]])
    m = np.array([[[0.4]], [[0.9]], [[0.2]]])
    mom = population_moments(np.array([2.0]), np.array([[1.3]]), eta0, eta1, m)
    # proxy 3 has known offset and scale but is not itself in J0/J1
    spec = ErrorModelSpec.from_sets(k, [0, 1], [0, 1], eta0={2: 0.7}, eta1={2: 1.5})
    cp = identify(RawMoments(**mom), spec, has_z=False)
    np.testing.assert_allclose(cp.eta0, eta0, atol=1e-12)
    np.testing.assert_allclose(cp.eta1, eta1, atol=1e-12)
    np.testing.assert_allclose(cp.m, m, atol=1e-12)


def test_identification_requires_two_j1_without_z():
    with pytest.raises(ConfigError):
        ErrorModelSpec.from_sets(3, [0], [0], use_z=False).check(False)


def test_spec_requires_j0():
    with pytest.raises(ConfigError):
        ErrorModelSpec.from_sets(2, [], [0, 1])


def test_negative_error_variance_clipped_then_rejected():
    mom = population_moments(np.zeros(1), np.eye(1), np.zeros((2, 1)), np.ones((2, 1)),
                             np.array([[[0.5]], [[0.5]]]))
    spec = ErrorModelSpec.unbiased(2)
    small = {**mom, "sigma": mom["sigma"].copy()}
    small["sigma"][0, 0] -= 0.55  # M_1 = -0.05: within noise of a proxy variance of 0.95
    cp = identify(RawMoments(**small), spec, has_z=False)
    assert cp.m[0, 0, 0] == 0.0 and cp.m_clip[0] == pytest.approx(0.05)
    assert cp.m_raw[0, 0, 0] == pytest.approx(-0.05)
    big = {**mom, "sigma": mom["sigma"].copy()}
    big["sigma"][0, 0] = np.array([[0.6]])  # M_1 = -0.4 against a tolerance of 0.06
    with pytest.raises(ModelViolationError):
        identify(RawMoments(**big), spec, has_z=False)


def test_pair_never_coobserved():
    obs = np.ones((30, 3), dtype=bool)
    obs[:15, 1] = False
    obs[15:, 2] = False
    rng = np.random.default_rng(0)
    panel = ProxyPanel(y=rng.normal(size=30), proxies=rng.normal(size=(3, 30, 1)), observed=obs)
    with pytest.raises(IdentifiabilityError):
        estimate_raw_moments(panel)


def test_masked_entries_never_read():
    cfg = study_config(3, n=400)
    panel = generate_panel(cfg, seed=1)
    spec = ErrorModelSpec.from_sets(3, [0, 1], [0, 1])
    prox = np.array(panel.proxies)
    prox[1][~panel.observed[:, 1]] = 1e6
    other = ProxyPanel(panel.y, prox, panel.observed, panel.z)
    a = estimate_correction_params(panel, spec)
    b = estimate_correction_params(other, spec)
    np.testing.assert_array_equal(a.sigma_xx, b.sigma_xx)
    np.testing.assert_array_equal(a.m, b.m)


def test_pairwise_moments_match_numpy():
    cfg = study_config(3, n=300)
    panel = generate_panel(cfg, seed=2)
    mo = estimate_raw_moments(panel)
    obs = panel.observed
    both = obs[:, 0] & obs[:, 1]
    x0 = panel.proxies[0, :, 0]
    x1 = panel.proxies[1, :, 0]
    # deviations from each proxy's own available-case mean, divisor = pair count
    d0 = x0[both] - x0[obs[:, 0]].mean()
    d1 = x1[both] - x1[obs[:, 1]].mean()
    assert mo.sigma[0, 1, 0, 0] == pytest.approx(np.sum(d0 * d1) / both.sum(), rel=1e-12)
    assert mo.mu[1, 0] == pytest.approx(x1[obs[:, 1]].mean(), rel=1e-12)


def test_layout_roundtrip_and_g_mean_zero():
    cfg = study_config(2, n=500)
    panel = generate_panel(cfg, seed=4)
    spec = cfg.error_spec()
    cp = estimate_correction_params(panel, spec)
    layout = XiLayout.for_params(cp)
    vec = layout.pack(cp)
    assert len(layout.names()) == layout.size == len(vec)
    back = layout.pack(layout.unpack(vec, cp))
    np.testing.assert_allclose(back, vec, rtol=0, atol=0)
    g = g_matrix(panel, vec, spec, layout)
    np.testing.assert_allclose(g.mean(axis=0), 0.0, atol=1e-10)


def test_sandwich_xi_is_symmetric_psd():
    cfg = study_config(1, n=400)
    panel = generate_panel(cfg, seed=5)
    spec = cfg.error_spec()
    cp = estimate_correction_params(panel, spec)
    inf = sandwich_xi(panel, cp, spec)
    np.testing.assert_allclose(inf.cov, inf.cov.T)
    assert np.linalg.eigvalsh(inf.cov).min() > -1e-8 * np.abs(inf.cov).max()
    # influence functions reproduce the covariance
    infl = inf.influence()
    np.testing.assert_allclose(infl.T @ infl / panel.n, inf.cov, rtol=1e-6, atol=1e-10)


def test_params_json_roundtrip():
    cfg = study_config(2, n=300)
    panel = generate_panel(cfg, seed=6)
    cp = estimate_correction_params(panel, cfg.error_spec())
    back = CorrectionParams.from_dict(json.loads(cp.to_json()))
    for name in ("mu_x", "sigma_xx", "eta0", "eta1", "m", "sigma_xxj", "sigma_zx"):
        np.testing.assert_array_equal(getattr(back, name), getattr(cp, name))


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 3), st.integers(0, 10 ** 6))
def test_fast_g_mean_matches_row_average(study, seed):
    from meacorr.data import generate_panel, study_config
    from meacorr.harness import study_spec
    from meacorr.params import XiLayout, g_mean_fn
    cfg = study_config(study, n=300)
    panel = generate_panel(cfg, seed=seed)
    spec = study_spec(study, cfg)
    xi = estimate_correction_params(panel, spec)
    layout = XiLayout.for_params(xi)
    v = layout.pack(xi) + 0.05 * np.random.default_rng(seed).normal(size=layout.size)
    np.testing.assert_allclose(g_mean_fn(panel, spec, layout)(v), g_matrix(panel, v, spec, layout).mean(axis=0),
                               atol=1e-12)
