"""Scikit-learn style wrappers around the correction estimators.

``X`` holds the proxies as ``(n, k)`` or ``(n, k, p)`` with NaN for a missing
proxy; ``Z`` holds error-free covariates. After ``fit`` the coefficients sit in
``coef_`` (intercept first, then X, then Z) and the full result in ``result_``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _validation as V
from .calibration import fit_rc
from .exceptions import ConfigError
from .models import OutcomeModel, naive_fit
from .params import estimate_correction_params
from .reconstruction import fit_mr_logistic
from .simex import SimexConfig, fit_simex


class _CorrectionEstimator(BaseEstimator):
    """Shared fit plumbing; subclasses implement ``_fit_result``."""

    def _prepare(self, X, y, Z):
        V.check_family(self.family)
        panel = V.make_panel(X, y, Z, self.family)
        spec = V.check_spec(getattr(self, "error_spec", None), panel.k,
                            getattr(self, "j0", None), getattr(self, "j1", None),
                            use_z=getattr(self, "use_z", True))
        return panel, spec

    def fit(self, X, y, Z=None):
        panel, spec = self._prepare(X, y, Z)
        res = self._fit_result(panel, spec)
        self.result_ = res
        self.coef_ = np.asarray(res.theta)
        self.cov_ = res.cov
        self.se_ = res.se
        self.feature_names_ = list(res.names)
        self.n_proxies_ = panel.k
        self.n_features_x_ = panel.p
        self.n_features_z_ = panel.q
        return self

    def predict(self, X, Z=None):
        """Fitted mean of y at error-free covariate values ``X`` (n, p)."""
        check_is_fitted(self, "coef_")
        x = V.check_true_covariate(X, self.n_features_x_)
        z = V.check_covariates(Z, x.shape[0])
        if self.n_features_z_ and z is None:
            raise ConfigError("this model was fitted with Z; pass Z to predict")
        model = OutcomeModel(self.family, self.n_features_x_, self.n_features_z_)
        return model.predict(self.coef_, x, z if self.n_features_z_ else None)


class NaiveRegression(_CorrectionEstimator):
    """Outcome model fitted on the proxy average, ignoring measurement error."""

    def __init__(self, family="linear", weights=None):
        self.family = family
        self.weights = weights

    def _fit_result(self, panel, spec):
        model = OutcomeModel(self.family, panel.p, panel.q)
        return naive_fit(panel, model, alpha=self.weights)


class RegressionCalibration(_CorrectionEstimator):
    """Generalised regression calibration.

    ``j0``/``j1`` list the proxies (0-based) with zero intercept and unit scale;
    by default every proxy is unbiased. ``weights`` is "equal", "optimal" or a
    length-k array.
    """

    def __init__(self, family="linear", weights="equal", j0=None, j1=None, error_spec=None,
                 use_z=True, se="sandwich", n_boot=1000, random_state=0, n_jobs=1):
        self.family = family
        self.weights = weights
        self.j0 = j0
        self.j1 = j1
        self.error_spec = error_spec
        self.use_z = use_z
        self.se = se
        self.n_boot = n_boot
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _fit_result(self, panel, spec):
        model = OutcomeModel(self.family, panel.p, panel.q)
        self.xi_ = estimate_correction_params(panel, spec)
        return fit_rc(panel, model, spec, xi=self.xi_, weights=self.weights, se=self.se,
                      n_boot=self.n_boot, seed=self.random_state, n_jobs=self.n_jobs)


class Simex(_CorrectionEstimator):
    """Generalised SIMEX; ``mode`` is "proxies" or "estimates"."""

    def __init__(self, family="linear", mode="proxies", lambdas=(0.0, 0.5, 1.0, 1.5, 2.0),
                 n_sim=100, extrapolant="auto", weights="equal", combine="equal", j0=None,
                 j1=None, error_spec=None, use_z=True, se="sandwich", n_boot=200,
                 random_state=0, n_jobs=1):
        self.family = family
        self.mode = mode
        self.lambdas = lambdas
        self.n_sim = n_sim
        self.extrapolant = extrapolant
        self.weights = weights
        self.combine = combine
        self.j0 = j0
        self.j1 = j1
        self.error_spec = error_spec
        self.use_z = use_z
        self.se = se
        self.n_boot = n_boot
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _fit_result(self, panel, spec):
        model = OutcomeModel(self.family, panel.p, panel.q)
        cfg = SimexConfig(lambdas=tuple(self.lambdas), n_sim=self.n_sim,
                          extrapolant=self.extrapolant, mode=self.mode, alpha=self.weights,
                          combine=self.combine, seed=self.random_state)
        cfg.validate()
        res = fit_simex(panel, model, spec, cfg, se=self.se, n_boot=self.n_boot,
                        n_jobs=self.n_jobs)
        self.curves_ = res.curves
        return res


class MomentReconstruction(_CorrectionEstimator):
    """Moment reconstruction for a binary outcome and one error-prone covariate."""

    def __init__(self, weights="equal", cond_var="class", j0=None, j1=None, error_spec=None,
                 se="sandwich"):
        self.weights = weights
        self.cond_var = cond_var
        self.j0 = j0
        self.j1 = j1
        self.error_spec = error_spec
        self.se = se

    family = "logistic"
    use_z = False

    def _fit_result(self, panel, spec):
        if panel.q:
            raise ConfigError("moment reconstruction does not take error-free covariates")
        return fit_mr_logistic(panel, spec, alpha=self.weights, cond_var=self.cond_var, se=self.se)


def correction_params(X, Z=None, j0=None, j1=None, use_z=True):
    """Identified error-model parameters for a proxy array (no outcome needed)."""
    x = V.check_proxies(X)
    z = V.check_covariates(Z, x.shape[0])
    panel = V.make_panel(x, np.zeros(x.shape[0]), z)
    spec = V.check_spec(None, panel.k, j0, j1, use_z=use_z)
    return estimate_correction_params(panel, spec)
