"""Resampling helpers shared by the correction methods."""

from __future__ import annotations

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import norm

from .exceptions import MeacorrError


def _one(fn, panel, seed_seq):
    rng = np.random.default_rng(seed_seq)
    rows = rng.integers(0, panel.n, size=panel.n)
    try:
        return np.asarray(fn(panel.take(rows)), dtype=float)
    except (MeacorrError, np.linalg.LinAlgError):
        return None


def bootstrap(fn, panel, n_boot=1000, seed=0, n_jobs=1):
    """Subject-level nonparametric bootstrap of ``fn(panel) -> vector``.

    Each replicate draws from its own child seed, so results do not depend on
    ``n_jobs``. Failed replicates are dropped and counted.
    """
    children = np.random.SeedSequence(seed).spawn(n_boot)
    if n_jobs == 1:
        out = [_one(fn, panel, s) for s in children]
    else:
        out = Parallel(n_jobs=n_jobs)(delayed(_one)(fn, panel, s) for s in children)
    good = [o for o in out if o is not None]
    if not good:
        raise MeacorrError("every bootstrap replicate failed")
    return np.array(good), n_boot - len(good)


def bc_percentile(theta_hat, draws, level=0.95):
    """Bias-corrected percentile interval per component."""
    draws = np.asarray(draws)
    theta_hat = np.asarray(theta_hat)
    frac = (draws < theta_hat).mean(axis=0) + 0.5 * (draws == theta_hat).mean(axis=0)
    frac = np.clip(frac, 1.0 / (len(draws) + 1), 1.0 - 1.0 / (len(draws) + 1))
    z0 = norm.ppf(frac)
    zl = norm.ppf(0.5 - level / 2.0)
    lo_q = norm.cdf(2 * z0 + zl)
    hi_q = norm.cdf(2 * z0 - zl)
    lo = np.array([np.quantile(draws[:, i], lo_q[i]) for i in range(draws.shape[1])])
    hi = np.array([np.quantile(draws[:, i], hi_q[i]) for i in range(draws.shape[1])])
    return lo, hi


def attach_bootstrap(result, fn, panel, n_boot=1000, seed=0, n_jobs=1, level=0.95):
    """Replace ``result.cov`` by n * bootstrap covariance and add BC intervals."""
    draws, failed = bootstrap(fn, panel, n_boot, seed, n_jobs)
    result.cov = panel.n * np.atleast_2d(np.cov(draws, rowvar=False))
    lo, hi = bc_percentile(result.theta, draws, level)
    result.diagnostics.update(
        se_method="bootstrap", n_boot=n_boot, boot_failed=failed,
        ci_lower=lo.tolist(), ci_upper=hi.tolist())
    return result
