"""Input checks shared by the estimator classes."""

from __future__ import annotations

import numpy as np

from .data import ErrorModelSpec, ProxyPanel
from .exceptions import ConfigError, DataError

FAMILIES = ("linear", "logistic", "gamma")


def check_family(family):
    if family not in FAMILIES:
        raise ConfigError(f"family must be one of {FAMILIES}, got {family!r}")
    return family


def check_proxies(X):
    """Proxy array as float (n, k, p); NaN marks a missing proxy."""
    x = np.asarray(X, dtype=float)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise ConfigError(f"X must be (n, k) or (n, k, p), got ndim={x.ndim}")
    if x.shape[1] < 2:
        raise ConfigError("at least two proxies are needed to identify the error model")
    if np.isinf(x).any():
        raise DataError("X contains infinite values")
    return x


def check_outcome(y, n, family):
    y = np.ravel(np.asarray(y, dtype=float))
    if y.shape[0] != n:
        raise ConfigError(f"y has {y.shape[0]} rows, X has {n}")
    if family == "logistic" and not np.isin(y, (0.0, 1.0)).all():
        raise DataError("logistic outcome must be coded 0/1")
    if family == "gamma" and (y <= 0).any():
        raise DataError("gamma outcome must be positive")
    return y


def check_covariates(Z, n):
    if Z is None:
        return None
    z = np.asarray(Z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.ndim != 2 or z.shape[0] != n:
        raise ConfigError(f"Z must be (n, q) with n={n}")
    return z


def check_spec(spec, k, j0=None, j1=None, use_z=True):
    """An ErrorModelSpec for k proxies; index sets are 0-based."""
    if spec is not None:
        if not isinstance(spec, ErrorModelSpec):
            raise ConfigError("error_spec must be an ErrorModelSpec")
        if spec.k != k:
            raise ConfigError(f"error_spec describes {spec.k} proxies, X has {k}")
        return spec
    j0 = range(k) if j0 is None else j0
    j1 = range(k) if j1 is None else j1
    return ErrorModelSpec.from_sets(k, list(j0), list(j1), use_z=use_z)


def make_panel(X, y, Z=None, family="linear") -> ProxyPanel:
    x = check_proxies(X)
    y = check_outcome(y, x.shape[0], family)
    z = check_covariates(Z, x.shape[0])
    return ProxyPanel.from_arrays(y, x, z)


def check_true_covariate(X, p):
    """Error-free covariate values for prediction, as (n, p)."""
    x = np.asarray(X, dtype=float)
    if x.ndim == 1:
        x = x[:, None] if p == 1 else x[None, :]
    if x.ndim != 2 or x.shape[1] != p:
        raise ConfigError(f"expected covariate values with {p} columns")
    return x
