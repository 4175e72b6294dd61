import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meacorr.data import (FRAMINGHAM_SCHEMA, ErrorModelSpec, PanelSchema, ProxyPanel,
                          ScenarioConfig, framingham_synthetic_config, generate_panel,
                          generate_truth, read_panel_csv, study_config, write_panel_csv)
from meacorr.exceptions import ConfigError, DataError, PanelParseError


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 2), st.integers(2, 4), st.integers(0, 2))
def test_csv_roundtrip(tmp_path_factory, seed, p, k, q):
    rng = np.random.default_rng(seed)
    n = 30
    obs = rng.random((n, k)) > 0.3
    obs[:, 0] = True
    prox = rng.normal(size=(k, n, p))
    panel = ProxyPanel(rng.normal(size=n), prox, obs, rng.normal(size=(n, q)))
    path = tmp_path_factory.mktemp("csv") / "panel.csv"
    write_panel_csv(panel, path)
    back = read_panel_csv(path)
    np.testing.assert_array_equal(back.observed, panel.observed)
    np.testing.assert_array_equal(back.y, panel.y)
    np.testing.assert_array_equal(back.z, panel.z)
    np.testing.assert_array_equal(back.proxies[back.observed.T], panel.proxies[panel.observed.T])


def test_framingham_schema_roundtrip_through_transform(tmp_path):
    panel = generate_panel(framingham_synthetic_config(n=200), seed=1)
    write_panel_csv(panel, tmp_path / "f.csv", FRAMINGHAM_SCHEMA)
    header = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert header == "id,chd,age,smoke,chol,sbp21,sbp22,sbp31,sbp32"
    back = read_panel_csv(tmp_path / "f.csv", FRAMINGHAM_SCHEMA)
    np.testing.assert_allclose(back.proxies, panel.proxies, rtol=1e-12)


def test_parse_error_reports_line(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("id,y,x1,x2\n1,0.5,1.0,2.0\n2,abc,1.0,2.0\n")
    with pytest.raises(PanelParseError) as info:
        read_panel_csv(f)
    assert info.value.line == 3
    f.write_text("id,y,x1,x2\n1,0.5,,\n")
    with pytest.raises(DataError):
        read_panel_csv(f)


def test_panel_rejects_subject_without_proxies():
    with pytest.raises(DataError):
        ProxyPanel(np.zeros(3), np.zeros((2, 3, 1)), np.array([[1, 1], [0, 0], [1, 0]], bool))


def test_generation_deterministic_and_moments():
    cfg = study_config(3, n=200000)
    a, x = generate_truth(cfg, seed=4)
    b = generate_panel(cfg, seed=4)
    np.testing.assert_array_equal(a.proxies, b.proxies)
    # proxy 3 = 0.5 + 0.5 X + Unif(-0.5, 0.5): error variance 1/12
    u = a.proxies[2, :, 0] - 0.5 - 0.5 * x[:, 0]
    assert u.var() == pytest.approx(1 / 12, rel=0.01)
    assert np.abs(u).max() <= 0.5
    assert 1 - a.observed[:, 1].mean() == pytest.approx(0.8, abs=0.005)


def test_multiplicative_proxy_error_variance():
    cfg = study_config(2, n=200000)
    panel, x = generate_truth(cfg, seed=2)
    v = panel.proxies[0, :, 0] / x[:, 0]
    assert v.min() >= 0.7 - 1e-12 and v.max() <= 1.3 + 1e-12
    err = panel.proxies[0, :, 0] - x[:, 0]
    assert err.var() == pytest.approx(0.03 * np.mean(x[:, 0] ** 2), rel=0.02)


def test_scenario_json_roundtrip(tmp_path):
    cfg = study_config(2)
    cfg.to_json(tmp_path / "c.json")
    back = ScenarioConfig.from_json(tmp_path / "c.json")
    assert back.to_dict() == cfg.to_dict()
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({**cfg.to_dict(), "coef": [1.0]})


def test_spec_dict_uses_one_based_indices():
    spec = ErrorModelSpec.from_sets(4, [2, 3], [0, 1, 2, 3])
    d = spec.to_dict()
    assert d["j0"] == [3, 4]
    assert ErrorModelSpec.from_dict(d) == spec
    with pytest.raises(ConfigError):
        ErrorModelSpec.from_dict({"structure": ["additive"] * 2, "j0": [3]})


def test_schema_inference():
    s = PanelSchema.infer(["id", "y", "z1", "x1_1", "x1_2", "x2_1", "x2_2"])
    assert s.proxies == [["x1_1", "x1_2"], ["x2_1", "x2_2"]] and s.z == ["z1"]
    with pytest.raises(ConfigError):
        PanelSchema.infer(["y", "z1"])
