"""Proxy moments, identification of the generalized error model, and the
stacked estimating equations for the correction parameters."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import ErrorModelSpec, ProxyPanel
from .exceptions import (
    IdentifiabilityError,
    IdentificationError,
    InferenceError,
    ModelViolationError,
)
from .numdiff import central_jacobian


@dataclass
class RawMoments:
    """Means and cross-covariances of the proxies (and of Z when used).

    ``sigma[j, l]`` is cov(X*_j, X*_l) (p x p) estimated on subjects observing
    both proxies, centred at the per-proxy means and divided by the pair count.
    """

    mu: np.ndarray
    sigma: np.ndarray
    n_pair: np.ndarray
    mu_z: np.ndarray
    sigma_zz: np.ndarray
    sigma_zj: np.ndarray
    n: int

    @property
    def k(self):
        return self.mu.shape[0]

    @property
    def p(self):
        return self.mu.shape[1]

    @property
    def q(self):
        return self.mu_z.shape[0]


@dataclass
class CorrectionParams:
    """Identified correction parameters plus the raw moments they came from.

    ``eta0`` and ``eta1`` are (k, p); eta1 holds the diagonal of the scale
    matrix. ``m`` is the PSD-clipped error covariance; ``m_raw`` the unclipped
    value that solves the estimating equations.
    """

    mu_x: np.ndarray
    sigma_xx: np.ndarray
    eta0: np.ndarray
    eta1: np.ndarray
    m: np.ndarray
    sigma_xxj: np.ndarray
    sigma_zx: Optional[np.ndarray]
    alpha: np.ndarray
    moments: RawMoments
    has_z: bool
    m_raw: np.ndarray = None
    m_clip: np.ndarray = None

    @property
    def k(self):
        return self.eta0.shape[0]

    @property
    def p(self):
        return self.eta0.shape[1]

    def with_alpha(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        return CorrectionParams(**{**self.__dict__, "alpha": alpha / alpha.sum()})

    def to_dict(self, cov=None, names=None):
        d = {
            "mu_x": self.mu_x.tolist(),
            "sigma_xx": self.sigma_xx.tolist(),
            "eta0": self.eta0.tolist(),
            "eta1": self.eta1.tolist(),
            "m_j": self.m.tolist(),
            "sigma_xxj": self.sigma_xxj.tolist(),
            "sigma_zx": None if self.sigma_zx is None else self.sigma_zx.tolist(),
            "alpha": self.alpha.tolist(),
            "m_clip": self.m_clip.tolist(),
            "moments": {
                "mu_j": self.moments.mu.tolist(),
                "sigma_jl": self.moments.sigma.tolist(),
                "n_jl": self.moments.n_pair.tolist(),
                "mu_z": self.moments.mu_z.tolist(),
                "sigma_zz": self.moments.sigma_zz.tolist(),
                "sigma_zj": self.moments.sigma_zj.tolist(),
                "n": self.moments.n,
            },
            "has_z": self.has_z,
        }
        if cov is not None:
            d["covariance"] = {"names": list(names or []), "matrix": np.asarray(cov).tolist()}
        return d

    def to_json(self, cov=None, names=None):
        return json.dumps(self.to_dict(cov, names), indent=2)

    @classmethod
    def from_dict(cls, d):
        mo = d["moments"]
        moments = RawMoments(
            mu=np.array(mo["mu_j"], float),
            sigma=np.array(mo["sigma_jl"], float),
            n_pair=np.array(mo["n_jl"]),
            mu_z=np.array(mo["mu_z"], float),
            sigma_zz=np.array(mo["sigma_zz"], float).reshape(len(mo["mu_z"]), len(mo["mu_z"])),
            sigma_zj=np.array(mo["sigma_zj"], float),
            n=int(mo["n"]),
        )
        m = np.array(d["m_j"], float)
        return cls(
            mu_x=np.array(d["mu_x"], float),
            sigma_xx=np.array(d["sigma_xx"], float),
            eta0=np.array(d["eta0"], float),
            eta1=np.array(d["eta1"], float),
            m=m,
            sigma_xxj=np.array(d["sigma_xxj"], float),
            sigma_zx=None if d.get("sigma_zx") is None else np.array(d["sigma_zx"], float),
            alpha=np.array(d["alpha"], float),
            moments=moments,
            has_z=bool(d["has_z"]),
            m_raw=m,
            m_clip=np.array(d.get("m_clip", np.zeros(len(m))), float),
        )


def estimate_raw_moments(panel: ProxyPanel, use_z=True) -> RawMoments:
    """Pairwise-complete proxy moments (divisor = number of contributing subjects)."""
    obs = panel.observed
    n_pair = obs.T.astype(int) @ obs.astype(int)
    k = panel.k
    for j in range(k):
        for l in range(j, k):
            if n_pair[j, l] < 2:
                raise IdentifiabilityError((j, l), int(n_pair[j, l]))
    x = panel.filled()
    n_j = np.diag(n_pair).astype(float)
    mu = x.sum(axis=1) / n_j[:, None]
    dev = (x - mu[:, None, :]) * obs.T[:, :, None]
    sigma = np.einsum("jna,lnb->jlab", dev, dev) / n_pair[:, :, None, None]
    q = panel.q if use_z else 0
    z = panel.z[:, :q]
    mu_z = z.mean(axis=0)
    zc = z - mu_z
    sigma_zz = zc.T @ zc / panel.n
    sigma_zj = np.einsum("nc,jnb->jcb", zc, dev) / n_j[:, None, None]
    return RawMoments(mu, sigma, n_pair, mu_z, sigma_zz, sigma_zj, panel.n)


def _inv(a, what):
    if not np.all(np.isfinite(a)) or np.linalg.cond(a) > 1e12:
        raise IdentificationError(f"{what} is singular")
    return np.linalg.inv(a)


def _working_scale(spec: ErrorModelSpec, k, p):
    """(offset, scale) of the working variables (X*_j - offset) / scale."""
    off = np.zeros((k, p))
    scale = np.ones((k, p))
    for j, v in spec.eta0.items():
        off[j] = np.broadcast_to(np.asarray(v, float), (p,))
    for j, v in spec.eta1.items():
        scale[j] = np.broadcast_to(np.asarray(v, float), (p,))
    return off, scale


def identify(moments: RawMoments, spec: ErrorModelSpec, has_z=None, clip=True,
             alpha=None) -> CorrectionParams:
    """Correction parameters from proxy moments under the J0/J1 restrictions.

    Without Z: Sigma_{XX*_j} from J1 cross-covariances -> eta1 -> Sigma_XX ->
    mu_X -> eta0 -> M. With Z: Sigma_ZX -> eta1 -> Sigma_{XX*_j} -> Sigma_XX ->
    mu_X -> eta0 -> M.
    """
    k, p = moments.k, moments.p
    if spec.k != k:
        raise IdentificationError(f"spec describes {spec.k} proxies, data have {k}")
    if has_z is None:
        has_z = spec.use_z and moments.q > 0
    spec.check(has_z)
    j0 = spec.j0_mask
    j1 = spec.j1_mask

    off, scale = _working_scale(spec, k, p)
    mu = (moments.mu - off) / scale
    sig = moments.sigma / (scale[:, None, :, None] * scale[None, :, None, :])
    szj = moments.sigma_zj / scale[:, None, :]

    eye = np.eye(p)
    eta1 = np.ones((k, p))
    sxxj = np.empty((k, p, p))
    szx = None
    if not has_z:
        for j in range(k):
            ref = [l for l in range(k) if j1[l] and l != j]
            sxxj[j] = np.mean([sig[l, j] for l in ref], axis=0)
        inv_sxxj = [_inv(sxxj[l], f"Sigma_XX*_{l + 1}") for l in range(k)]
        for j in range(k):
            if not j1[j]:
                est = np.mean([sig[j, l] @ inv_sxxj[l] for l in range(k) if l != j], axis=0)
                eta1[j] = np.diag(est)
    else:
        if moments.q == 0:
            raise IdentificationError("identification through Z requested but Z is empty")
        szx = np.mean([szj[j] for j in range(k) if j1[j]], axis=0)
        s = np.diag(szx.T @ szx)
        if np.any(s <= 1e-14 * max(1.0, float(np.abs(s).max()))):
            raise IdentificationError("Sigma_XZ Sigma_ZX is singular")
        for j in range(k):
            if not j1[j]:
                t = np.diag(szj[j].T @ szj[j])
                ratio = t / s
                if np.any(ratio < 0):
                    raise ModelViolationError(f"negative value under square root for proxy {j + 1}")
                eta1[j] = np.sqrt(ratio)
        for j in range(k):
            sxxj[j] = np.mean([sig[l, j] / eta1[l][:, None] for l in range(k) if l != j], axis=0)
    if np.any(eta1 <= 0) or not np.all(np.isfinite(eta1)):
        raise ModelViolationError("identified scale parameters eta1 must be positive")

    sxx = np.mean([sxxj[j] / eta1[j][None, :] for j in range(k)], axis=0)
    sxx = 0.5 * (sxx + sxx.T)
    terms = [mu[j] if j1[j] else mu[j] / eta1[j] for j in range(k) if j0[j]]
    mu_x = np.sum(terms, axis=0) / j0.sum()
    eta0 = np.where(j0[:, None], 0.0, mu - eta1 * mu_x)
    m_raw = np.array([sig[j, j] - eta1[j][:, None] * sxx * eta1[j][None, :] for j in range(k)])
    m_raw = 0.5 * (m_raw + np.transpose(m_raw, (0, 2, 1)))

    # back to the original proxy scale for proxies with known eta
    eta0 = off + scale * eta0
    eta1 = scale * eta1
    m_raw = scale[:, :, None] * m_raw * scale[:, None, :]
    sxxj = sxxj * scale[:, None, :]

    m = m_raw.copy()
    m_clip = np.zeros(k)
    if clip:
        for j in range(k):
            vals, vecs = np.linalg.eigh(m_raw[j])
            lo = vals.min()
            # tolerance is relative to the proxy's own spread: sampling noise
            # routinely pushes a small error variance below zero
            scale_j = max(float(np.trace(moments.sigma[j, j])), 1e-300)
            if lo < -0.1 * scale_j:
                raise ModelViolationError(
                    f"error covariance of proxy {j + 1} has eigenvalue {lo:.3g}, "
                    "far below zero; the error model is misspecified")
            if lo < 0:
                m[j] = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
                m_clip[j] = -lo
    if alpha is None:
        alpha = np.full(k, 1.0 / k)
    return CorrectionParams(
        mu_x=mu_x,
        sigma_xx=sxx,
        eta0=eta0,
        eta1=eta1,
        m=m,
        sigma_xxj=sxxj,
        sigma_zx=None if szx is None else szx,
        alpha=np.asarray(alpha, float),
        moments=moments,
        has_z=bool(has_z),
        m_raw=m_raw,
        m_clip=m_clip,
    )


def estimate_correction_params(panel: ProxyPanel, spec: ErrorModelSpec, has_z=None,
                               alpha=None) -> CorrectionParams:
    """Raw moments followed by identification."""
    if has_z is None:
        has_z = spec.use_z and panel.q > 0
    moments = estimate_raw_moments(panel, use_z=has_z)
    return identify(moments, spec, has_z=has_z, alpha=alpha)


# --------------------------------------------------------------------------
# Stacked estimating equations


class XiLayout:
    """Vectorisation of (raw moments, identified parameters).

    Symmetric blocks (Sigma_jj, Sigma_ZZ, Sigma_XX, M_j) contribute their upper
    triangle only, so the Jacobian of the stacked equations is square and
    nonsingular.
    """

    def __init__(self, k, p, q, has_z):
        self.k, self.p, self.q, self.has_z = k, p, (q if has_z else 0), has_z
        self.iu = np.triu_indices(p)
        self.iuz = np.triu_indices(self.q)
        pv = len(self.iu[0])
        qv = len(self.iuz[0])
        blocks = [("mu", k * p)]
        for j in range(k):
            blocks.append((("sigma", j, j), pv))
            for l in range(j + 1, k):
                blocks.append((("sigma", j, l), p * p))
        if has_z:
            blocks += [("mu_z", self.q), ("sigma_zz", qv), ("sigma_zj", k * self.q * p)]
        self.n_raw = sum(s for _, s in blocks)
        blocks += [("mu_x", p), ("sigma_xx", pv), ("eta0", k * p), ("eta1", k * p),
                   ("m", k * pv), ("sigma_xxj", k * p * p)]
        if has_z:
            blocks.append(("sigma_zx", self.q * p))
        self.slices = {}
        start = 0
        for name, size in blocks:
            self.slices[name] = slice(start, start + size)
            start += size
        self.size = start

    @classmethod
    def for_params(cls, params: CorrectionParams):
        return cls(params.k, params.p, params.moments.q, params.has_z)

    def names(self):
        p, k = self.p, self.k
        out = [None] * self.size
        iu = list(zip(*self.iu))

        def put(name, labels):
            sl = self.slices[name]
            for i, lab in zip(range(sl.start, sl.stop), labels):
                out[i] = lab

        put("mu", [f"mu_{j + 1}[{a + 1}]" for j in range(k) for a in range(p)])
        for j in range(k):
            put(("sigma", j, j), [f"sigma_{j + 1}{j + 1}[{a + 1},{b + 1}]" for a, b in iu])
            for l in range(j + 1, k):
                put(("sigma", j, l),
                    [f"sigma_{j + 1}{l + 1}[{a + 1},{b + 1}]" for a in range(p) for b in range(p)])
        if self.has_z:
            q = self.q
            put("mu_z", [f"mu_z[{c + 1}]" for c in range(q)])
            put("sigma_zz", [f"sigma_zz[{a + 1},{b + 1}]" for a, b in zip(*self.iuz)])
            put("sigma_zj", [f"sigma_z{j + 1}[{c + 1},{a + 1}]"
                             for j in range(k) for c in range(q) for a in range(p)])
            put("sigma_zx", [f"sigma_zx[{c + 1},{a + 1}]" for c in range(q) for a in range(p)])
        put("mu_x", [f"mu_x[{a + 1}]" for a in range(p)])
        put("sigma_xx", [f"sigma_xx[{a + 1},{b + 1}]" for a, b in iu])
        put("eta0", [f"eta0_{j + 1}[{a + 1}]" for j in range(k) for a in range(p)])
        put("eta1", [f"eta1_{j + 1}[{a + 1}]" for j in range(k) for a in range(p)])
        put("m", [f"M_{j + 1}[{a + 1},{b + 1}]" for j in range(k) for a, b in iu])
        put("sigma_xxj", [f"sigma_xx{j + 1}[{a + 1},{b + 1}]"
                          for j in range(k) for a in range(p) for b in range(p)])
        return out

    def _sym(self, v, dim, iu):
        a = np.zeros(v.shape[:-1] + (dim, dim))
        a[..., iu[0], iu[1]] = v
        a[..., iu[1], iu[0]] = v
        return a

    def pack_raw(self, mo: RawMoments):
        v = np.empty(self.n_raw)
        k, p = self.k, self.p
        v[self.slices["mu"]] = mo.mu.ravel()
        for j in range(k):
            v[self.slices[("sigma", j, j)]] = mo.sigma[j, j][self.iu]
            for l in range(j + 1, k):
                v[self.slices[("sigma", j, l)]] = mo.sigma[j, l].ravel()
        if self.has_z:
            v[self.slices["mu_z"]] = mo.mu_z
            v[self.slices["sigma_zz"]] = mo.sigma_zz[self.iuz]
            v[self.slices["sigma_zj"]] = mo.sigma_zj.ravel()
        return v

    def unpack_raw(self, v, n=0, n_pair=None) -> RawMoments:
        k, p, q = self.k, self.p, self.q
        mu = v[self.slices["mu"]].reshape(k, p)
        sigma = np.empty((k, k, p, p))
        for j in range(k):
            sigma[j, j] = self._sym(v[self.slices[("sigma", j, j)]], p, self.iu)
            for l in range(j + 1, k):
                blk = v[self.slices[("sigma", j, l)]].reshape(p, p)
                sigma[j, l] = blk
                sigma[l, j] = blk.T
        if self.has_z:
            mu_z = v[self.slices["mu_z"]].copy()
            szz = self._sym(v[self.slices["sigma_zz"]], q, self.iuz)
            szj = v[self.slices["sigma_zj"]].reshape(k, q, p)
        else:
            mu_z, szz, szj = np.zeros(0), np.zeros((0, 0)), np.zeros((k, 0, p))
        if n_pair is None:
            n_pair = np.zeros((k, k), dtype=int)
        return RawMoments(mu, sigma, n_pair, mu_z, szz, szj, n)

    def pack_derived(self, cp: CorrectionParams, unclipped=True):
        v = np.empty(self.size - self.n_raw)
        off = self.n_raw
        m = cp.m_raw if unclipped and cp.m_raw is not None else cp.m

        def put(name, vals):
            sl = self.slices[name]
            v[sl.start - off:sl.stop - off] = vals

        put("mu_x", cp.mu_x)
        put("sigma_xx", cp.sigma_xx[self.iu])
        put("eta0", cp.eta0.ravel())
        put("eta1", cp.eta1.ravel())
        put("m", np.concatenate([m[j][self.iu] for j in range(self.k)]))
        put("sigma_xxj", cp.sigma_xxj.ravel())
        if self.has_z:
            put("sigma_zx", cp.sigma_zx.ravel())
        return v

    def pack(self, cp: CorrectionParams):
        return np.concatenate([self.pack_raw(cp.moments), self.pack_derived(cp)])

    def unpack(self, v, template: CorrectionParams) -> CorrectionParams:
        """Parameters stored in ``v`` (derived block taken verbatim)."""
        k, p, q = self.k, self.p, self.q
        mo = self.unpack_raw(v[:self.n_raw], template.moments.n, template.moments.n_pair)
        m = self._sym(v[self.slices["m"]].reshape(k, -1), p, self.iu)
        return CorrectionParams(
            mu_x=v[self.slices["mu_x"]].copy(),
            sigma_xx=self._sym(v[self.slices["sigma_xx"]], p, self.iu),
            eta0=v[self.slices["eta0"]].reshape(k, p).copy(),
            eta1=v[self.slices["eta1"]].reshape(k, p).copy(),
            m=m,
            sigma_xxj=v[self.slices["sigma_xxj"]].reshape(k, p, p).copy(),
            sigma_zx=v[self.slices["sigma_zx"]].reshape(q, p).copy() if self.has_z else None,
            alpha=template.alpha,
            moments=mo,
            has_z=self.has_z,
            m_raw=m,
            m_clip=np.zeros(k),
        )


def g_matrix(panel: ProxyPanel, vec, spec: ErrorModelSpec, layout: XiLayout):
    """Per-subject stacked residuals, shape (n, layout.size).

    Raw-moment rows are gated by the observation indicators; the identified
    parameters enter as (formula applied to the raw block) - (parameter).
    """
    k, p = layout.k, layout.p
    mo = layout.unpack_raw(vec[:layout.n_raw])
    obs = panel.observed.T.astype(float)  # (k, n)
    x = panel.filled()
    dev = (x - mo.mu[:, None, :]) * obs[:, :, None]
    n = panel.n
    g = np.empty((n, layout.size))
    g[:, layout.slices["mu"]] = np.transpose(dev, (1, 0, 2)).reshape(n, k * p)
    iu = layout.iu
    for j in range(k):
        outer = dev[j][:, :, None] * dev[j][:, None, :]
        g[:, layout.slices[("sigma", j, j)]] = (outer - obs[j][:, None, None] * mo.sigma[j, j])[:, iu[0], iu[1]]
        for l in range(j + 1, k):
            outer = dev[j][:, :, None] * dev[l][:, None, :]
            both = (obs[j] * obs[l])[:, None, None]
            g[:, layout.slices[("sigma", j, l)]] = (outer - both * mo.sigma[j, l]).reshape(n, p * p)
    if layout.has_z:
        q = layout.q
        zc = panel.z[:, :q] - mo.mu_z
        g[:, layout.slices["mu_z"]] = zc
        zz = zc[:, :, None] * zc[:, None, :] - mo.sigma_zz
        g[:, layout.slices["sigma_zz"]] = zz[:, layout.iuz[0], layout.iuz[1]]
        zj = zc[None, :, :, None] * dev[:, :, None, :] - obs[:, :, None, None] * mo.sigma_zj[:, None]
        g[:, layout.slices["sigma_zj"]] = np.transpose(zj, (1, 0, 2, 3)).reshape(n, -1)
    derived = identify(mo, spec, has_z=layout.has_z, clip=False)
    target = layout.pack_derived(derived)
    g[:, layout.n_raw:] = target - vec[layout.n_raw:]
    return g


def g_residual(row: int, panel: ProxyPanel, params: CorrectionParams, spec: ErrorModelSpec):
    """Stacked residual for subject ``row`` at parameters ``params``."""
    layout = XiLayout.for_params(params)
    return g_matrix(panel.take([row]), layout.pack(params), spec, layout)[0]


@dataclass
class XiInference:
    """Sandwich covariance of sqrt(n) (xi_hat - xi)."""

    vec: np.ndarray
    cov: np.ndarray
    names: list
    n: int
    bread: np.ndarray = field(repr=False, default=None)
    meat: np.ndarray = field(repr=False, default=None)
    g: np.ndarray = field(repr=False, default=None)

    @property
    def se(self):
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None) / self.n)

    def influence(self):
        """Per-subject influence of xi_hat, shape (n, size): -A^{-1} g_i."""
        return -np.linalg.solve(self.bread, self.g.T).T


def g_mean_fn(panel: ProxyPanel, spec: ErrorModelSpec, layout: XiLayout):
    """``v -> g_matrix(panel, v).mean(axis=0)`` from precomputed sums.

    The raw-moment rows are polynomial in the parameters with data entering
    only through per-pair counts, sums and cross-products, so the Jacobian
    can be differenced without touching the n rows again.
    """
    k, p = layout.k, layout.p
    n = panel.n
    obs = panel.observed.T.astype(float)
    x = panel.filled() * obs[:, :, None]
    cnt = obs @ obs.T                                   # (k, k) co-observed counts
    s_in = np.einsum("ln,jna->jla", obs, x)             # sum of x_j over rows with j and l
    cross = np.einsum("jna,lnb->jlab", x, x)            # sum of x_j x_l' (zero unless both seen)
    iu = layout.iu
    if layout.has_z:
        q = layout.q
        z = panel.z[:, :q]
        sz, qzz = z.sum(axis=0), z.T @ z
        szj = obs @ z                                   # (k, q)
        rzj = np.einsum("nc,jna->jca", z, x)            # (k, q, p)

    def fn(vec):
        mo = layout.unpack_raw(vec[:layout.n_raw])
        mu = mo.mu
        out = np.empty(layout.size)
        out[layout.slices["mu"]] = (np.diagonal(s_in, axis1=0, axis2=1).T - np.diag(cnt)[:, None] * mu).ravel() / n
        for j in range(k):
            for l in range(j, k):
                c = cnt[j, l]
                blk = (cross[j, l] - np.outer(s_in[j, l], mu[l]) - np.outer(mu[j], s_in[l, j])
                       + c * np.outer(mu[j], mu[l]) - c * mo.sigma[j, l]) / n
                out[layout.slices[("sigma", j, l)]] = blk[iu[0], iu[1]] if j == l else blk.ravel()
        if layout.has_z:
            mz = mo.mu_z
            out[layout.slices["mu_z"]] = sz / n - mz
            zz = (qzz - np.outer(sz, mz) - np.outer(mz, sz)) / n + np.outer(mz, mz) - mo.sigma_zz
            out[layout.slices["sigma_zz"]] = zz[layout.iuz[0], layout.iuz[1]]
            nj = np.diag(cnt)
            zj = (rzj - np.einsum("jc,ja->jca", szj, mu) - np.einsum("c,ja->jca", mz, np.diagonal(s_in, axis1=0, axis2=1).T)
                  + nj[:, None, None] * (np.einsum("c,ja->jca", mz, mu) - mo.sigma_zj)) / n
            out[layout.slices["sigma_zj"]] = zj.ravel()
        derived = identify(mo, spec, has_z=layout.has_z, clip=False)
        out[layout.n_raw:] = layout.pack_derived(derived) - vec[layout.n_raw:]
        return out

    return fn


def xi_jacobian(panel, vec, spec, layout):
    return central_jacobian(g_mean_fn(panel, spec, layout), vec)


def sandwich_xi(panel: ProxyPanel, params: CorrectionParams, spec: ErrorModelSpec) -> XiInference:
    """A^{-1} B A^{-T} for the stacked correction-parameter equations."""
    layout = XiLayout.for_params(params)
    vec = layout.pack(params)
    g = g_matrix(panel, vec, spec, layout)
    a = xi_jacobian(panel, vec, spec, layout)
    b = g.T @ g / panel.n
    rank = np.linalg.matrix_rank(a)
    if rank < a.shape[0]:
        raise InferenceError("Jacobian of the correction-parameter equations is singular", rank)
    a_inv = np.linalg.inv(a)
    cov = a_inv @ b @ a_inv.T
    return XiInference(vec, 0.5 * (cov + cov.T), layout.names(), panel.n, a, b, g)
