"""Measurement error corrections for regressions with several unequal proxies."""

from .calibration import BlupMap, build_blup, fit_rc, optimal_alpha, standard_rc
from .data import (ErrorModelSpec, ProxyLaw, ProxyPanel, ScenarioConfig, generate_panel,
                   read_panel_csv, study_config, write_panel_csv)
from .diagnostics import diagnose_panel, lambda_flatness, proxy_pair_linearity
from .estimators import (MomentReconstruction, NaiveRegression, RegressionCalibration, Simex,
                         correction_params)
from .exceptions import (ConfigError, DataError, IdentificationError, MeacorrError,
                         ModelViolationError)
from .harness import run_analysis, run_study
from .models import FitResult, OutcomeModel, naive_fit, solve_m
from .params import CorrectionParams, estimate_correction_params, sandwich_xi
from .reconstruction import fit_mr_logistic
from .simex import SimexConfig, fit_simex, standard_simex

__version__ = "0.1.0"

__all__ = [
    "BlupMap", "ConfigError", "CorrectionParams", "DataError", "ErrorModelSpec", "FitResult",
    "IdentificationError", "MeacorrError", "ModelViolationError", "MomentReconstruction",
    "NaiveRegression", "OutcomeModel", "ProxyLaw", "ProxyPanel", "RegressionCalibration",
    "ScenarioConfig", "Simex", "SimexConfig", "build_blup", "correction_params",
    "diagnose_panel", "estimate_correction_params", "fit_mr_logistic", "fit_rc", "fit_simex",
    "generate_panel", "lambda_flatness", "naive_fit", "optimal_alpha", "proxy_pair_linearity",
    "read_panel_csv", "run_analysis", "run_study", "sandwich_xi", "solve_m", "standard_rc",
    "standard_simex", "study_config", "write_panel_csv",
]
