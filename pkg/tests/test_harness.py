import numpy as np
import pandas as pd
import pytest

from meacorr.data import generate_panel, framingham_synthetic_config
from meacorr.exceptions import ConfigError
from meacorr.harness import framingham_spec, run_analysis, run_method, run_study


def test_unknown_and_unimplemented_tags():
    with pytest.raises(ConfigError):
        run_study(1, n=200, reps=1, methods=["gen-rc-best"])
    with pytest.raises(NotImplementedError):
        run_study(1, n=200, reps=1, methods=["empirical-simex"])


def test_table_shape_and_determinism():
    methods = ["naive", "gen-rc-equal", "gen-simex-estimates"]
    a = run_study(1, n=300, reps=3, methods=methods, seed=5, n_sim=10)
    b = run_study(1, n=300, reps=3, methods=methods, seed=5, n_sim=10)
    assert len(a.table) == len(methods) * 4
    pd.testing.assert_frame_equal(a.table, b.table)
    c = run_study(1, n=300, reps=3, methods=methods, seed=6, n_sim=10)
    assert not a.table["mean"].equals(c.table["mean"])


def test_parallel_equals_sequential():
    methods = ["naive", "gen-simex-proxies"]
    a = run_study(3, n=300, reps=4, methods=methods, seed=1, n_sim=10)
    b = run_study(3, n=300, reps=4, methods=methods, seed=1, n_sim=10, n_jobs=2)
    pd.testing.assert_frame_equal(a.table, b.table)
    assert set(a.prob_rmse) == set(methods)


def test_iid_variant_uses_selected_proxies():
    panel = generate_panel(framingham_synthetic_config(n=400), seed=0)
    res = run_method("gen-rc-equal-iid", panel, "logistic", framingham_spec(1), iid_proxies=(0, 1))
    assert res.method == "gen-rc-equal-iid"


def test_framingham_scenarios():
    assert framingham_spec(4).to_dict()["j0"] == [3, 4]
    with pytest.raises(ConfigError):
        framingham_spec(5)
    panel = generate_panel(framingham_synthetic_config(n=300), seed=1)
    with pytest.raises(ConfigError):
        run_analysis(panel.select_proxies([0, 1, 2]), scenario=1)


def test_analysis_report_fields():
    panel = generate_panel(framingham_synthetic_config(n=600), seed=2)
    rep = run_analysis(panel, scenario=2, methods=["naive", "gen-rc-equal"], rc_se="sandwich")
    assert list(rep["table"].columns) == ["method", "coefficient", "estimate", "se", "lower", "upper"]
    assert len(rep["eta0"]) == 4
    # scenario 2 pins eta0 for the second-exam proxies only
    assert rep["eta0"][2] == [0.0] and rep["eta0"][3] == [0.0]
