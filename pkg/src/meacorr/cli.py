"""Command line interface: ``meacorr <command> ...``.

Exit codes: 0 success, 2 configuration or input error, 3 estimation failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from .calibration import fit_rc
from .data import (FRAMINGHAM_SCHEMA, ErrorModelSpec, PanelSchema, ScenarioConfig, framingham_synthetic_config,
                   generate_panel, read_panel_csv, study_config, write_panel_csv)
from .diagnostics import diagnose_panel, lambda_flatness
from .exceptions import ConfigError, DataError, MeacorrError
from .harness import framingham_spec, run_analysis, run_study
from .models import OutcomeModel
from .params import estimate_correction_params, sandwich_xi
from .reconstruction import fit_mr_logistic
from .simex import SimexConfig, fit_simex, write_curve_csv

EXIT_CONFIG = 2
EXIT_ESTIMATION = 3


class _Fail(click.ClickException):
    def __init__(self, message, code):
        super().__init__(message)
        self.exit_code = code


def _guard(fn):
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, DataError, NotImplementedError, FileNotFoundError) as exc:
            raise _Fail(str(exc), EXIT_CONFIG) from exc
        except (MeacorrError, np.linalg.LinAlgError) as exc:
            raise _Fail(f"{type(exc).__name__}: {exc}", EXIT_ESTIMATION) from exc
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _schema(name):
    if name in (None, "auto"):
        return None
    if name == "framingham":
        return FRAMINGHAM_SCHEMA
    return PanelSchema.from_dict(json.loads(Path(name).read_text()))


def _load(panel_path, spec_path, schema):
    panel = read_panel_csv(panel_path, _schema(schema))
    if spec_path is None:
        spec = ErrorModelSpec.unbiased(panel.k, use_z=panel.q > 0)
    else:
        try:
            d = json.loads(Path(spec_path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"spec file is not valid JSON: {exc}") from exc
        spec = ErrorModelSpec.from_dict(d, k=panel.k)
    if spec.k != panel.k:
        raise ConfigError(f"spec describes {spec.k} proxies but the panel has {panel.k}")
    return panel, spec


def _parse_se(text):
    """'sandwich' | 'none' | 'bootstrap[:B]' -> (method, B)."""
    if text.startswith("bootstrap"):
        _, _, b = text.partition(":")
        return "bootstrap", int(b) if b else 1000
    if text in ("sandwich", "none"):
        return text, 0
    raise ConfigError(f"unknown --se value {text!r}")


def _emit(res, out):
    click.echo(f"method: {res.method}  (n = {res.n})")
    click.echo(res.table())
    if out:
        Path(out).write_text(res.to_json())


panel_opt = click.option("--panel", "panel_path", required=True, type=click.Path(), help="panel CSV")
spec_opt = click.option("--spec", "spec_path", type=click.Path(), default=None, help="error-model spec JSON")
schema_opt = click.option("--schema", default="auto", show_default=True,
                          help="'auto', 'framingham' or a schema JSON file")
family_opt = click.option("--family", type=click.Choice(["linear", "logistic", "gamma"]),
                          default="linear", show_default=True)
out_opt = click.option("--out", type=click.Path(), default=None, help="write JSON result here")


@click.group()
def main():
    """Measurement-error corrections with multiple non-identical proxies."""


@main.command()
@click.option("--study", type=click.IntRange(1, 3), default=None)
@click.option("--config", "config_path", type=click.Path(), default=None, help="scenario JSON")
@click.option("--framingham", is_flag=True, help="synthetic data on the Framingham schema")
@click.option("--n", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--truth-out", type=click.Path(), default=None, help="write the scenario JSON here")
@_guard
def generate(study, config_path, framingham, n, seed, out, truth_out):
    """Draw a synthetic panel and write it as CSV."""
    if sum(v is not None and v is not False for v in (study, config_path, framingham or None)) != 1:
        raise ConfigError("choose exactly one of --study, --config, --framingham")
    if study is not None:
        cfg = study_config(study)
    elif config_path is not None:
        cfg = ScenarioConfig.from_json(Path(config_path).read_text())
    else:
        cfg = framingham_synthetic_config()
    if n is not None:
        cfg.n = n
    panel = generate_panel(cfg, seed=seed)
    schema = FRAMINGHAM_SCHEMA if framingham else None
    write_panel_csv(panel, out, schema)
    if truth_out:
        cfg.to_json(truth_out)
    click.echo(f"wrote {panel.n} subjects, {panel.k} proxies to {out}")


@main.command()
@click.option("--study", type=click.IntRange(1, 3), required=True)
@click.option("--n", type=int, default=2000, show_default=True)
@click.option("--reps", type=int, default=200, show_default=True)
@click.option("--methods", default=None, help="comma-separated method tags")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--n-jobs", type=int, default=1, show_default=True)
@click.option("--se", is_flag=True, help="also record sandwich SEs")
@click.option("--out", type=click.Path(), required=True, help="summary table CSV")
@_guard
def simulate(study, n, reps, methods, seed, n_jobs, se, out):
    """Monte Carlo study; writes the per-method summary table."""
    tags = [m.strip() for m in methods.split(",")] if methods else None
    res = run_study(study, n=n, reps=reps, methods=tags, seed=seed, n_jobs=n_jobs, se=se)
    res.table.to_csv(out, index=False)
    if res.prob_rmse:
        pd.DataFrame({"method": list(res.prob_rmse), "prob_rmse": list(res.prob_rmse.values())}).to_csv(
            Path(out).with_suffix(".prob.csv"), index=False)
    click.echo(res.table.to_string(index=False))


@main.command()
@panel_opt
@spec_opt
@click.option("--scenario", type=click.IntRange(1, 4), default=None)
@schema_opt
@click.option("--methods", default=None)
@family_opt
@click.option("--boot", type=int, default=1000, show_default=True, help="bootstrap replicates for RC")
@click.option("--B", "n_sim", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="report JSON")
@click.option("--table-out", type=click.Path(), default=None, help="estimates table CSV")
@_guard
def analyze(panel_path, spec_path, scenario, schema, methods, family, boot, n_sim, seed, out, table_out):
    """All methods on one panel, with intervals and identified eta values."""
    panel = read_panel_csv(panel_path, _schema(schema))
    if spec_path is not None:
        _, spec = _load(panel_path, spec_path, schema)
    else:
        spec = framingham_spec(scenario or 1)
    tags = [m.strip() for m in methods.split(",")] if methods else None
    rep = run_analysis(panel, spec, methods=tags, family=family, seed=seed, n_sim=n_sim, n_boot=boot)
    click.echo(rep["table"].to_string(index=False))
    click.echo("eta0: " + json.dumps(rep["eta0"]))
    click.echo("eta1: " + json.dumps(rep["eta1"]))
    if table_out:
        rep["table"].to_csv(table_out, index=False)
    if out:
        body = {k: v for k, v in rep.items() if k not in ("table", "results")}
        body["results"] = {k: r.to_dict() for k, r in rep["results"].items()}
        Path(out).write_text(json.dumps(body, indent=2))


@main.command("params")
@panel_opt
@spec_opt
@schema_opt
@click.option("--out", type=click.Path(), required=True)
@_guard
def params_cmd(panel_path, spec_path, schema, out):
    """Estimate the correction parameters and their sandwich covariance."""
    panel, spec = _load(panel_path, spec_path, schema)
    xi = estimate_correction_params(panel, spec)
    inf = sandwich_xi(panel, xi, spec)
    Path(out).write_text(xi.to_json(inf.cov, inf.names))
    click.echo(f"wrote correction parameters to {out}")


@main.command("fit-rc")
@panel_opt
@spec_opt
@schema_opt
@family_opt
@click.option("--weights", type=click.Choice(["equal", "optimal"]), default="equal", show_default=True)
@click.option("--se", "se_text", default="sandwich", show_default=True, help="sandwich | bootstrap[:B] | none")
@click.option("--seed", type=int, default=0, show_default=True)
@out_opt
@_guard
def fit_rc_cmd(panel_path, spec_path, schema, family, weights, se_text, seed, out):
    """Generalised regression calibration."""
    panel, spec = _load(panel_path, spec_path, schema)
    se, b = _parse_se(se_text)
    model = OutcomeModel(family, panel.p, panel.q)
    _emit(fit_rc(panel, model, spec, weights=weights, se=se, n_boot=b or 1000, seed=seed), out)


@main.command("fit-simex")
@panel_opt
@spec_opt
@schema_opt
@family_opt
@click.option("--mode", type=click.Choice(["proxies", "estimates"]), default="proxies", show_default=True)
@click.option("--grid", default="0,0.5,1,1.5,2", show_default=True)
@click.option("--B", "n_sim", type=int, default=100, show_default=True)
@click.option("--extrapolant", type=click.Choice(["auto", "linear", "quadratic", "nonlinear"]),
              default="auto", show_default=True)
@click.option("--se", "se_text", default="sandwich", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--curve-out", type=click.Path(), default=None)
@out_opt
@_guard
def fit_simex_cmd(panel_path, spec_path, schema, family, mode, grid, n_sim, extrapolant, se_text, seed,
                  curve_out, out):
    """Generalised SIMEX."""
    panel, spec = _load(panel_path, spec_path, schema)
    se, b = _parse_se(se_text)
    try:
        lambdas = tuple(float(v) for v in grid.split(","))
    except ValueError as exc:
        raise ConfigError(f"malformed --grid {grid!r}") from exc
    cfg = SimexConfig(lambdas=lambdas, n_sim=n_sim, extrapolant=extrapolant, mode=mode, seed=seed)
    model = OutcomeModel(family, panel.p, panel.q)
    res = fit_simex(panel, model, spec, cfg, se=se, n_boot=b or 200, curve_out=curve_out)
    _emit(res, out)


@main.command("fit-mr")
@panel_opt
@spec_opt
@schema_opt
@click.option("--alpha", type=click.Choice(["equal", "optimal"]), default="equal", show_default=True)
@click.option("--cond-var", type=click.Choice(["class", "pooled", "marginal"]), default="class",
              show_default=True)
@out_opt
@_guard
def fit_mr_cmd(panel_path, spec_path, schema, alpha, cond_var, out):
    """Moment reconstruction (logistic outcome, scalar covariate)."""
    panel, spec = _load(panel_path, spec_path, schema)
    _emit(fit_mr_logistic(panel, spec, alpha=alpha, cond_var=cond_var), out)


@main.command()
@panel_opt
@spec_opt
@schema_opt
@family_opt
@click.option("--curves/--no-curves", default=False, help="also run SIMEX and summarise lambda-curves")
@click.option("--out", type=click.Path(), required=True, help="JSON report")
@click.option("--csv", "csv_out", type=click.Path(), default=None, help="plottable CSV")
@_guard
def diagnose(panel_path, spec_path, schema, family, curves, out, csv_out):
    """Pairwise proxy linearity (and optional lambda-curve flatness)."""
    panel, spec = _load(panel_path, spec_path, schema)
    reports = diagnose_panel(panel)
    body = {"linearity": [r.to_dict() for r in reports]}
    rows = []
    for r in reports:
        for dc, (f, e) in enumerate(zip(r.decile_fitted, r.decile_residual)):
            rows.append({"kind": "decile", "j": r.j, "l": r.l, "component": r.component,
                         "x": f, "y": e, "index": dc + 1})
    if curves:
        model = OutcomeModel(family, panel.p, panel.q)
        res = fit_simex(panel, model, spec, SimexConfig(), se="none")
        body["flatness"] = []
        for cv in res.curves:
            body["flatness"].append({"curve": cv.label,
                                     "tests": lambda_flatness(cv.lambdas, cv.estimates, cv.mc_se, res.names)})
            for r_, lam in enumerate(cv.lambdas):
                for c, name in enumerate(res.names):
                    rows.append({"kind": "lambda", "curve": cv.label, "coefficient": name, "x": lam,
                                 "y": cv.estimates[r_, c], "mc_se": cv.mc_se[r_, c]})
    Path(out).write_text(json.dumps(body, indent=2))
    if csv_out:
        pd.DataFrame(rows).to_csv(csv_out, index=False)
    for r in reports:
        click.echo(f"proxies {r.j}~{r.l}[{r.component}]: wald={r.wald:.3f} p={r.p_value:.3g} "
                   f"dR2={r.r2_increment:.2e}")


if __name__ == "__main__":
    sys.exit(main())
