"""Monte Carlo studies and the side-by-side analysis of one panel."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .calibration import fit_rc, standard_rc
from .data import ErrorModelSpec, ProxyPanel, expit, generate_panel, study_config
from .exceptions import ConfigError, MeacorrError
from .models import OutcomeModel, naive_fit
from .params import estimate_correction_params
from .reconstruction import fit_mr_logistic
from .simex import SimexConfig, fit_simex, standard_simex

BASE_METHODS = ("naive", "standard-rc", "standard-simex", "gen-rc-equal", "gen-rc-optimal",
                "gen-simex-proxies", "gen-simex-estimates")
NOT_IMPLEMENTED = ("empirical-simex",)


def default_methods(study):
    if study == 2:
        return BASE_METHODS + ("gen-rc-equal-ignore-z", "gen-rc-optimal-ignore-z")
    if study == 3:
        return BASE_METHODS + ("mr", "gen-rc-equal-iid", "gen-simex-proxies-iid")
    return BASE_METHODS


def study_spec(study, cfg=None):
    """Identifiability assumptions used for each design."""
    cfg = cfg or study_config(study)
    if study == 3:
        return ErrorModelSpec.from_sets(3, [0, 1], [0, 1])
    return cfg.error_spec()


def framingham_spec(scenario) -> ErrorModelSpec:
    """The four eta-scenarios for the blood-pressure proxies (1-based sets)."""
    sets = {
        1: ([1, 2, 3, 4], [1, 2, 3, 4]),
        2: ([3, 4], [1, 2, 3, 4]),
        3: ([2, 4], [1, 2, 3, 4]),
        4: ([3, 4], [3, 4]),
    }
    if scenario not in sets:
        raise ConfigError(f"scenario must be 1-4, got {scenario!r}")
    j0, j1 = sets[scenario]
    return ErrorModelSpec.from_sets(4, [j - 1 for j in j0], [j - 1 for j in j1])


def _split_tag(tag):
    base, iid, ignore_z = tag, False, False
    if base.endswith("-iid"):
        base, iid = base[:-4], True
    if base.endswith("-ignore-z"):
        base, ignore_z = base[:-9], True
    elif base.endswith("-ignoring-z"):
        base, ignore_z = base[:-11], True
    if tag in NOT_IMPLEMENTED or base in NOT_IMPLEMENTED:
        raise NotImplementedError("empirical SIMEX (heteroscedastic errors) is not implemented")
    if base not in BASE_METHODS + ("mr",):
        raise ConfigError(f"unknown method {tag!r}")
    return base, iid, ignore_z


def check_methods(methods):
    for m in methods:
        _split_tag(m)
    return list(methods)


def run_method(tag, panel: ProxyPanel, family, spec: ErrorModelSpec, se=False, seed=0,
               extrapolant="auto", n_sim=100, lambdas=(0.0, 0.5, 1.0, 1.5, 2.0), iid_proxies=(0, 1),
               rc_se="sandwich", n_boot=1000):
    """One estimator on one panel; returns a FitResult."""
    base, iid, ignore_z = _split_tag(tag)
    if iid:
        panel = panel.select_proxies(iid_proxies)
        spec = spec.subset(iid_proxies)
    if ignore_z:
        spec = ErrorModelSpec(spec.structure, spec.in_j0, spec.in_j1, spec.eta0, spec.eta1, use_z=False)
    model = OutcomeModel(family, panel.p, panel.q)
    scfg = SimexConfig(lambdas=lambdas, n_sim=n_sim, extrapolant=extrapolant, seed=seed)
    if base == "naive":
        res = naive_fit(panel, model, se=se)
    elif base == "standard-rc":
        res = standard_rc(panel, model)
    elif base == "standard-simex":
        res = standard_simex(panel, model, scfg)
    elif base.startswith("gen-rc-"):
        res = fit_rc(panel, model, spec, weights=base[7:], se=(rc_se if se else "none"),
                     n_boot=n_boot, seed=seed)
    elif base.startswith("gen-simex-"):
        scfg.mode = base[10:]
        scfg.validate()
        res = fit_simex(panel, model, spec, scfg, se="sandwich" if se else "none")
    else:
        res = fit_mr_logistic(panel, spec, se="sandwich" if se else "none")
    res.method = tag
    return res


def _rep_seed(seed, rep):
    return np.random.SeedSequence([seed, rep])


def _one_rep(study, n, seed, rep, methods, se, extrapolant, n_sim):
    ss = _rep_seed(seed, rep)
    panel_seed, sim_seed = ss.spawn(2)
    cfg = study_config(study, n=n)
    panel = generate_panel(cfg, seed=np.random.default_rng(panel_seed))
    spec = study_spec(study, cfg)
    sim_seed = int(sim_seed.generate_state(1)[0])
    out = {}
    for tag in methods:
        try:
            res = run_method(tag, panel, cfg.family, spec, se=se, seed=sim_seed,
                             extrapolant=extrapolant or cfg.extrapolant, n_sim=n_sim)
            out[tag] = (res.theta, res.se if se else None, None)
        except MeacorrError as exc:
            out[tag] = (None, None, f"{type(exc).__name__}: {exc}")
    return out


@dataclass
class StudyResult:
    """Per-replicate estimates and the summary table."""

    study: int
    truth: np.ndarray
    names: list
    estimates: dict
    ses: dict
    failures: dict
    table: pd.DataFrame
    prob_rmse: dict = field(default_factory=dict)


def run_study(study, n=2000, reps=200, methods=None, seed=0, n_jobs=1, se=False,
              extrapolant=None, n_sim=100) -> StudyResult:
    """Replicate a simulation design and summarise each method.

    Replicate r uses SeedSequence([seed, r]), so the table depends only on the
    arguments, not on ``n_jobs``.
    """
    cfg = study_config(study, n=n)
    methods = check_methods(methods or default_methods(study))
    if n_jobs == 1:
        outs = [_one_rep(study, n, seed, r, methods, se, extrapolant, n_sim) for r in range(reps)]
    else:
        outs = Parallel(n_jobs=n_jobs)(
            delayed(_one_rep)(study, n, seed, r, methods, se, extrapolant, n_sim) for r in range(reps))
    truth = cfg.truth()
    names = OutcomeModel(cfg.family, cfg.p, cfg.q).names()
    est, ses, fails = {}, {}, {}
    for m in methods:
        rows = [o[m][0] for o in outs if o[m][0] is not None]
        est[m] = np.array(rows) if rows else np.empty((0, len(truth)))
        if se:
            ses[m] = np.array([o[m][1] for o in outs if o[m][0] is not None])
        fails[m] = [o[m][2] for o in outs if o[m][2] is not None]
    table = summarise(est, truth, names, ses if se else None)
    res = StudyResult(study, truth, names, est, ses, fails, table)
    if study == 3:
        res.prob_rmse = probability_rmse(est, truth, cfg)
    return res


def summarise(estimates, truth, names, ses=None):
    rows = []
    for m, e in estimates.items():
        r = len(e)
        for c, name in enumerate(names):
            col = e[:, c] if r else np.array([np.nan])
            sd = float(np.std(col, ddof=1)) if r > 1 else np.nan
            row = {
                "method": m, "coefficient": name, "truth": float(truth[c]),
                "mean": float(np.mean(col)), "sd": sd,
                "bias": float(np.mean(col) - truth[c]),
                "mc_se": sd / np.sqrt(r) if r > 1 else np.nan, "reps": r,
            }
            if ses is not None:
                row["mean_se"] = float(np.mean(ses[m][:, c])) if r else np.nan
            rows.append(row)
    return pd.DataFrame(rows)


def probability_grid(cfg, points=41):
    mu = float(cfg.x_mean[0])
    sd = float(np.sqrt(cfg.x_cov[0][0]))
    return np.linspace(mu - 1.96 * sd, mu + 1.96 * sd, points)


def probability_rmse(estimates, truth, cfg):
    """RMSE of expit(b0 + b1 x) over the central-95% grid and replicates."""
    grid = probability_grid(cfg)
    p_true = expit(truth[0] + truth[1] * grid)
    out = {}
    for m, e in estimates.items():
        if not len(e):
            out[m] = np.nan
            continue
        p_hat = expit(e[:, :1] + e[:, 1:2] * grid[None, :])
        out[m] = float(np.sqrt(np.mean((p_hat - p_true) ** 2)))
    return out


def run_analysis(panel: ProxyPanel, spec=None, scenario=1, methods=None, family="logistic",
                 seed=0, n_sim=100, rc_se="bootstrap", n_boot=1000, extrapolant="auto"):
    """All methods on one panel with SEs and intervals, plus the identified eta."""
    if spec is None:
        spec = framingham_spec(scenario)
    if spec.k != panel.k:
        raise ConfigError(f"spec describes {spec.k} proxies but the panel has {panel.k}")
    methods = check_methods(methods or BASE_METHODS)
    xi = estimate_correction_params(panel, spec)
    rows = []
    results = {}
    for tag in methods:
        res = run_method(tag, panel, family, spec, se=True, seed=seed, extrapolant=extrapolant,
                         n_sim=n_sim, rc_se=rc_se, n_boot=n_boot)
        results[tag] = res
        lo, hi = res.ci()
        for c, name in enumerate(res.names):
            rows.append({"method": tag, "coefficient": name, "estimate": float(res.theta[c]),
                         "se": float(res.se[c]), "lower": float(lo[c]), "upper": float(hi[c])})
    return {
        "table": pd.DataFrame(rows),
        "eta0": xi.eta0.tolist(),
        "eta1": xi.eta1.tolist(),
        "m": xi.m.tolist(),
        "spec": spec.to_dict(),
        "results": results,
    }
