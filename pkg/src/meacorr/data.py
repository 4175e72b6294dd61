"""Observed-data panel, error-model specification and synthetic scenarios."""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import ConfigError, DataError, PanelParseError

STRUCTURES = ("additive", "multiplicative")


def _readonly(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ProxyPanel:
    """n subjects with an outcome, error-free covariates and k proxy series.

    ``proxies`` is stored series-major with shape ``(k, n, p)``; ``observed`` is
    an ``(n, k)`` boolean mask. Values under a false mask entry are kept (they
    may be NaN) but no estimator reads them.
    """

    y: np.ndarray
    proxies: np.ndarray
    observed: np.ndarray
    z: Optional[np.ndarray] = None
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        y = _readonly(np.ravel(self.y))
        n = y.shape[0]
        prox = np.asarray(self.proxies, dtype=float)
        if prox.ndim == 2:
            prox = prox[:, :, None]
        if prox.ndim != 3 or prox.shape[1] != n:
            raise ConfigError(f"proxies must have shape (k, n, p) with n={n}, got {prox.shape}")
        obs = np.array(self.observed, dtype=bool, copy=True)
        if obs.shape != (n, prox.shape[0]):
            raise ConfigError(f"observed mask must be (n, k) = {(n, prox.shape[0])}, got {obs.shape}")
        z = np.zeros((n, 0)) if self.z is None else np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if z.shape[0] != n:
            raise ConfigError("z must have one row per subject")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(z)):
            raise DataError("outcome and error-free covariates must be finite")
        if np.any(obs.sum(axis=1) == 0):
            bad = int(np.flatnonzero(obs.sum(axis=1) == 0)[0])
            raise DataError(f"subject {bad} has no observed proxy")
        for j in range(prox.shape[0]):
            if not np.all(np.isfinite(prox[j][obs[:, j]])):
                raise DataError(f"proxy {j + 1} has non-finite observed values")
        obs.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "proxies", _readonly(prox))
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "z", _readonly(z))
        ids = np.arange(n) if self.ids is None else np.asarray(self.ids)
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_arrays(cls, y, proxies, z=None, observed=None):
        """Build a panel from ``(n, k)`` or ``(n, k, p)`` proxies, NaN = missing."""
        x = np.asarray(proxies, dtype=float)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.ndim != 3:
            raise ConfigError("proxies must be (n, k) or (n, k, p)")
        if observed is None:
            observed = ~np.any(np.isnan(x), axis=2)
        return cls(y=y, proxies=np.transpose(x, (1, 0, 2)), observed=observed, z=z)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def k(self):
        return self.proxies.shape[0]

    @property
    def p(self):
        return self.proxies.shape[2]

    @property
    def q(self):
        return self.z.shape[1]

    @property
    def kappa(self):
        return self.observed.sum(axis=1)

    def filled(self, fill=0.0):
        """Proxies with masked cells replaced by ``fill``, shape (k, n, p)."""
        mask = self.observed.T[:, :, None]
        return np.where(mask, self.proxies, fill)

    def patterns(self):
        """Distinct observation patterns as ``[(pattern, row_indices), ...]``.

        Ordered by decreasing number of observed proxies, then lexicographically,
        so the complete pattern (if present) comes first.
        """
        keys = {}
        for i, row in enumerate(map(tuple, self.observed)):
            keys.setdefault(row, []).append(i)
        order = sorted(keys, key=lambda r: (-sum(r), tuple(not v for v in r)))
        return [(np.array(r, dtype=bool), np.array(keys[r])) for r in order]

    def combine(self, alpha):
        """Per-subject weighted proxy average with weights renormalised over the
        observed proxies. Returns ``(xstar, weights)`` of shapes (n, p), (n, k)."""
        w = row_weights(self.observed, alpha)
        xstar = np.einsum("nk,knp->np", w, self.filled())
        return xstar, w

    def take(self, rows):
        rows = np.asarray(rows)
        return ProxyPanel(
            y=self.y[rows],
            proxies=self.proxies[:, rows, :],
            observed=self.observed[rows],
            z=self.z[rows],
            ids=self.ids[rows],
        )

    def select_proxies(self, js):
        """Panel restricted to proxies ``js`` (0-based); subjects left with no
        observed proxy are dropped."""
        js = list(js)
        obs = self.observed[:, js]
        keep = obs.any(axis=1)
        return ProxyPanel(
            y=self.y[keep],
            proxies=self.proxies[js][:, keep, :],
            observed=obs[keep],
            z=self.z[keep],
            ids=self.ids[keep],
        )

    def with_proxies(self, proxies):
        """Same panel with replaced proxy values (shape (k, n, p))."""
        return ProxyPanel(y=self.y, proxies=proxies, observed=self.observed, z=self.z, ids=self.ids)


def row_weights(observed, alpha):
    """Renormalise global weights over each row's observed proxies.

    Rows whose observed proxies all carry zero weight fall back to equal
    weights over the observed proxies.
    """
    observed = np.asarray(observed, dtype=bool)
    alpha = np.asarray(alpha, dtype=float)
    w = observed * alpha[None, :]
    s = w.sum(axis=1, keepdims=True)
    dead = s[:, 0] <= 1e-12
    if np.any(dead):
        w[dead] = observed[dead]
        s[dead] = observed[dead].sum(axis=1, keepdims=True)
    return w / s


def pattern_weights(pattern, alpha):
    return row_weights(np.asarray(pattern)[None, :], alpha)[0]


@dataclass(frozen=True)
class ErrorModelSpec:
    """Per-proxy error structure and identifiability restrictions.

    ``in_j0[j]`` asserts eta0_j = 0, ``in_j1[j]`` asserts eta1_j = 1. Known
    offsets/scales can be supplied through ``eta0`` / ``eta1`` (dicts keyed by
    0-based proxy index); such proxies are handled through the working variable
    (X*_j - eta0) / eta1, which then belongs to J0 and J1.
    """

    structure: tuple
    in_j0: tuple
    in_j1: tuple
    eta0: dict = field(default_factory=dict)
    eta1: dict = field(default_factory=dict)
    use_z: bool = True

    def __post_init__(self):
        k = len(self.structure)
        if len(self.in_j0) != k or len(self.in_j1) != k:
            raise ConfigError("structure, in_j0 and in_j1 must all have length k")
        for s in self.structure:
            if s not in STRUCTURES:
                raise ConfigError(f"unknown error structure {s!r}")
        object.__setattr__(self, "structure", tuple(self.structure))
        object.__setattr__(self, "in_j0", tuple(bool(v) for v in self.in_j0))
        object.__setattr__(self, "in_j1", tuple(bool(v) for v in self.in_j1))
        object.__setattr__(self, "eta0", {int(j): v for j, v in dict(self.eta0).items()})
        object.__setattr__(self, "eta1", {int(j): v for j, v in dict(self.eta1).items()})
        if sum(self.j0_mask) < 1:
            raise ConfigError("at least one proxy must have eta0 = 0 (|J0| >= 1)")

    @property
    def k(self):
        return len(self.structure)

    @property
    def j0_mask(self):
        return np.array([a or j in self.eta0 for j, a in enumerate(self.in_j0)])

    @property
    def j1_mask(self):
        return np.array([a or j in self.eta1 for j, a in enumerate(self.in_j1)])

    def check(self, has_z):
        """Validate the |J1| condition for the chosen identification path."""
        n1 = int(self.j1_mask.sum())
        if has_z and n1 < 1:
            raise ConfigError("|J1| >= 1 is required when error-free covariates are used")
        if not has_z and n1 < 2:
            raise ConfigError("|J1| > 1 is required without error-free covariates")
        return self

    @classmethod
    def unbiased(cls, k, structure="additive", use_z=True):
        return cls((structure,) * k, (True,) * k, (True,) * k, use_z=use_z)

    @classmethod
    def from_sets(cls, k, j0, j1, structure=None, use_z=True, eta0=None, eta1=None):
        """From 0-based index sets."""
        structure = structure or ("additive",) * k
        return cls(
            tuple(structure),
            tuple(j in set(j0) for j in range(k)),
            tuple(j in set(j1) for j in range(k)),
            eta0=eta0 or {},
            eta1=eta1 or {},
            use_z=use_z,
        )

    def subset(self, js):
        js = list(js)
        remap = {j: i for i, j in enumerate(js)}
        return ErrorModelSpec(
            tuple(self.structure[j] for j in js),
            tuple(self.in_j0[j] for j in js),
            tuple(self.in_j1[j] for j in js),
            eta0={remap[j]: v for j, v in self.eta0.items() if j in remap},
            eta1={remap[j]: v for j, v in self.eta1.items() if j in remap},
            use_z=self.use_z,
        )

    def to_dict(self):
        """JSON form with 1-based proxy indices."""
        d = {
            "structure": list(self.structure),
            "j0": [j + 1 for j, v in enumerate(self.in_j0) if v],
            "j1": [j + 1 for j, v in enumerate(self.in_j1) if v],
            "use_z": self.use_z,
        }
        if self.eta0:
            d["eta0"] = {str(j + 1): _jsonable(v) for j, v in self.eta0.items()}
        if self.eta1:
            d["eta1"] = {str(j + 1): _jsonable(v) for j, v in self.eta1.items()}
        return d

    @classmethod
    def from_dict(cls, d, k=None):
        try:
            structure = d.get("structure")
            if structure is None:
                if k is None:
                    raise ConfigError("spec needs 'structure' or an explicit k")
                structure = ["additive"] * k
            if isinstance(structure, str):
                structure = [structure] * (k or 1)
            k = len(structure)
            j0 = [int(j) - 1 for j in d.get("j0", range(1, k + 1))]
            j1 = [int(j) - 1 for j in d.get("j1", range(1, k + 1))]
            for j in j0 + j1:
                if not 0 <= j < k:
                    raise ConfigError(f"proxy index {j + 1} out of range 1..{k}")
            eta0 = {int(j) - 1: v for j, v in d.get("eta0", {}).items()}
            eta1 = {int(j) - 1: v for j, v in d.get("eta1", {}).items()}
            return cls.from_sets(k, j0, j1, structure, bool(d.get("use_z", True)), eta0, eta1)
        except (TypeError, AttributeError) as exc:
            raise ConfigError(f"malformed error-model spec: {exc}") from exc


def _jsonable(v):
    return np.asarray(v).tolist()


# --------------------------------------------------------------------------
# Synthetic scenarios


@dataclass
class ProxyLaw:
    """Generative law of one proxy.

    ``error_var`` is the variance of the additive error (additive) or of the
    multiplier V = 1 + delta U (multiplicative), per component.
    """

    structure: str = "additive"
    eta0: object = 0.0
    eta1: object = 1.0
    error_var: object = 1.0
    error_dist: str = "normal"
    missing: float = 0.0


@dataclass
class ScenarioConfig:
    """Generative truth for a simulation design."""

    name: str
    x_mean: list
    x_cov: list
    proxies: list
    family: str = "linear"
    coef: list = field(default_factory=list)
    z: list = field(default_factory=list)
    x_on_z: Optional[list] = None
    noise_var: float = 1.0
    gamma_shape: float = 1.0
    j0: Optional[list] = None
    j1: Optional[list] = None
    extrapolant: str = "auto"
    n: int = 2000
    seed: int = 0

    def __post_init__(self):
        self.proxies = [p if isinstance(p, ProxyLaw) else ProxyLaw(**p) for p in self.proxies]

    @property
    def p(self):
        return len(self.x_mean)

    @property
    def q(self):
        return len(self.z)

    @property
    def k(self):
        return len(self.proxies)

    def truth(self):
        return np.asarray(self.coef, dtype=float)

    def eta(self):
        """Generative (eta0, eta1) as (k, p) arrays."""
        p = self.p
        eta0 = np.array([np.broadcast_to(np.asarray(pl.eta0, float), (p,)) for pl in self.proxies])
        eta1 = np.array([np.broadcast_to(np.asarray(pl.eta1, float), (p,)) for pl in self.proxies])
        return eta0, eta1

    def error_spec(self, use_z=True):
        """J0/J1 taken from explicit lists (1-based) or from the generative truth."""
        eta0, eta1 = self.eta()
        j0 = [j - 1 for j in self.j0] if self.j0 is not None else [
            j for j in range(self.k) if np.all(eta0[j] == 0)]
        j1 = [j - 1 for j in self.j1] if self.j1 is not None else [
            j for j in range(self.k) if np.all(eta1[j] == 1)]
        structure = [pl.structure for pl in self.proxies]
        return ErrorModelSpec.from_sets(self.k, j0, j1, structure, use_z=use_z and self.q > 0)

    def validate(self):
        p, q = self.p, self.q
        if np.shape(self.x_cov) != (p, p):
            raise ConfigError(f"x_cov must be {p}x{p}")
        if len(self.coef) != 1 + p + q:
            raise ConfigError(f"coef must have 1 + p + q = {1 + p + q} entries")
        if self.x_on_z is not None and np.shape(self.x_on_z) != (p, q):
            raise ConfigError(f"x_on_z must be {p}x{q}")
        if self.family not in ("linear", "logistic", "gamma"):
            raise ConfigError(f"unknown outcome family {self.family!r}")
        for j, pl in enumerate(self.proxies):
            if pl.structure not in STRUCTURES:
                raise ConfigError(f"proxy {j + 1}: unknown structure {pl.structure!r}")
            if pl.error_dist not in ("normal", "uniform"):
                raise ConfigError(f"proxy {j + 1}: unknown error law {pl.error_dist!r}")
            if not 0.0 <= pl.missing < 1.0:
                raise ConfigError(f"proxy {j + 1}: missing fraction must lie in [0, 1)")
            for name in ("eta0", "eta1", "error_var"):
                if np.size(getattr(pl, name)) not in (1, p):
                    raise ConfigError(f"proxy {j + 1}: {name} must be scalar or length {p}")
        for zd in self.z:
            if zd.get("dist") not in ("bernoulli", "normal"):
                raise ConfigError(f"unknown z distribution {zd!r}")
        return self

    def to_dict(self):
        d = asdict(self)
        d["proxies"] = [asdict(p) for p in self.proxies]
        return d

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, default=_jsonable)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d).validate()
        except TypeError as exc:
            raise ConfigError(f"malformed scenario config: {exc}") from exc

    @classmethod
    def from_json(cls, path_or_text):
        text = str(path_or_text)
        if not text.lstrip().startswith("{"):
            text = Path(path_or_text).read_text()
        return cls.from_dict(json.loads(text))


def _psd_sqrt(a):
    vals, vecs = np.linalg.eigh(np.asarray(a, dtype=float))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def _standard_errors(rng, dist, size):
    if dist == "normal":
        return rng.standard_normal(size)
    return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size)


def expit(u):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(u, dtype=float)))


def generate_panel(cfg: ScenarioConfig, seed=None, n=None) -> ProxyPanel:
    """Draw one panel from ``cfg``; identical seeds give identical panels."""
    return _draw(cfg, seed, n)[0]


def generate_truth(cfg: ScenarioConfig, seed=None, n=None):
    """Like :func:`generate_panel` but also returns the latent covariate (n, p)."""
    return _draw(cfg, seed, n)


def _draw(cfg, seed, n):
    cfg.validate()
    n = cfg.n if n is None else int(n)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    p, q = cfg.p, cfg.q

    z = np.zeros((n, q))
    for c, zd in enumerate(cfg.z):
        if zd["dist"] == "bernoulli":
            z[:, c] = rng.random(n) < zd["p"]
        else:
            z[:, c] = zd.get("mean", 0.0) + math.sqrt(zd.get("var", 1.0)) * rng.standard_normal(n)

    x = np.asarray(cfg.x_mean, float) + rng.standard_normal((n, p)) @ _psd_sqrt(cfg.x_cov).T
    if cfg.x_on_z is not None and q:
        x = x + z @ np.asarray(cfg.x_on_z, float).T

    coef = cfg.truth()
    lin = coef[0] + x @ coef[1:1 + p] + z @ coef[1 + p:]
    if cfg.family == "linear":
        y = lin + math.sqrt(cfg.noise_var) * rng.standard_normal(n)
    elif cfg.family == "logistic":
        y = (rng.random(n) < expit(lin)).astype(float)
    else:
        shape = cfg.gamma_shape
        y = rng.gamma(shape, np.exp(lin) / shape)

    eta0, eta1 = cfg.eta()
    prox = np.empty((cfg.k, n, p))
    for j, pl in enumerate(cfg.proxies):
        sd = np.sqrt(np.broadcast_to(np.asarray(pl.error_var, float), (p,)))
        u = _standard_errors(rng, pl.error_dist, (n, p)) * sd
        if pl.structure == "additive":
            prox[j] = eta0[j] + eta1[j] * x + u
        else:
            prox[j] = eta0[j] + eta1[j] * x * (1.0 + u)

    # MCAR mask, drawn after all values
    observed = np.ones((n, cfg.k), dtype=bool)
    for j, pl in enumerate(cfg.proxies):
        if pl.missing > 0:
            observed[:, j] = rng.random(n) >= pl.missing
    if np.any(observed.sum(axis=1) == 0):
        raise ConfigError("missingness fractions left a subject with no observed proxy; "
                          "keep at least one proxy fully observed")
    return ProxyPanel(y=y, proxies=prox, observed=observed, z=z), x


# --------------------------------------------------------------------------
# Preset designs


def study_config(study, n=2000, seed=0) -> ScenarioConfig:
    """Simulation designs: 1 linear, 2 log-linear gamma, 3 logistic."""
    if study == 1:
        return ScenarioConfig(
            name="study1",
            x_mean=[0.0, 3.0, 1.0],
            x_cov=np.diag([1.0, 2.0, 3.0]).tolist(),
            coef=[2.0, -1.0, 2.0, 0.5],
            family="linear",
            noise_var=1.0,
            proxies=[
                ProxyLaw(error_var=[1.0, 1.0, 1.0]),
                ProxyLaw(error_var=[1.0, 4.0, 3.0], missing=0.5),
                ProxyLaw(error_var=[2.0, 2.0, 5.0], missing=0.2),
            ],
            extrapolant="nonlinear",
            n=n,
            seed=seed,
        )
    if study == 2:
        # V ~ Unif(0.7, 1.3): mean 1, variance 0.6^2 / 12 = 0.03.
        return ScenarioConfig(
            name="study2",
            x_mean=[0.0],
            x_cov=[[0.5]],
            z=[{"dist": "bernoulli", "p": 0.3}],
            x_on_z=[[0.02]],
            coef=[2.0, 2.0, -3.0],
            family="gamma",
            gamma_shape=1.0,
            proxies=[
                ProxyLaw(structure="multiplicative", error_var=0.03, error_dist="uniform"),
                ProxyLaw(error_var=1.0),
                ProxyLaw(error_var=1.0, missing=0.5),
            ],
            extrapolant="nonlinear",
            n=n,
            seed=seed,
        )
    if study == 3:
        return ScenarioConfig(
            name="study3",
            x_mean=[3.0],
            x_cov=[[1.0]],
            coef=[0.5, -0.5],
            family="logistic",
            proxies=[
                ProxyLaw(error_var=1.0),
                ProxyLaw(error_var=1.0, missing=0.8),
                ProxyLaw(eta0=0.5, eta1=0.5, error_var=1.0 / 12.0, error_dist="uniform"),
            ],
            extrapolant="nonlinear",
            n=n,
            seed=seed,
        )
    raise ConfigError(f"unknown study {study!r}; choose 1, 2 or 3")


def framingham_synthetic_config(n=1615, seed=0) -> ScenarioConfig:
    """Synthetic data on the Framingham schema (4 blood-pressure proxies on the
    log(SBP - 50) scale, age / smoking / cholesterol as error-free covariates).

    Exam-two proxies carry a small offset so the four η-scenarios differ.
    """
    return ScenarioConfig(
        name="framingham-synthetic",
        x_mean=[4.37],
        x_cov=[[0.045]],
        z=[
            {"dist": "normal", "mean": 0.0, "var": 1.0},
            {"dist": "bernoulli", "p": 0.7},
            {"dist": "normal", "mean": 0.0, "var": 1.0},
        ],
        x_on_z=[[0.05, 0.0, 0.02]],
        coef=[-12.0, 1.9, 0.5, 0.6, 0.4],
        family="logistic",
        proxies=[
            ProxyLaw(eta0=0.036, error_var=0.012),
            ProxyLaw(eta0=0.004, error_var=0.010),
            ProxyLaw(error_var=0.014),
            ProxyLaw(error_var=0.011),
        ],
        j0=[3, 4],
        j1=[1, 2, 3, 4],
        extrapolant="auto",
        n=n,
        seed=seed,
    )


# --------------------------------------------------------------------------
# CSV ingestion

TRANSFORMS: dict = {
    "identity": (lambda a: a, lambda a: a),
    "log_minus_50": (lambda a: np.log(a - 50.0), lambda a: np.exp(a) + 50.0),
}


@dataclass
class PanelSchema:
    """Column mapping for a panel CSV file."""

    y: str = "y"
    z: list = field(default_factory=list)
    proxies: list = field(default_factory=list)
    id: Optional[str] = "id"
    transform: str = "identity"

    @classmethod
    def infer(cls, header: Sequence[str]) -> "PanelSchema":
        """Default layout: ``id, y, z1..zq, x1..xk`` or ``x{j}_{c}`` for vectors."""
        z = sorted((h for h in header if re.fullmatch(r"z\d+", h)), key=lambda h: int(h[1:]))
        scalar = {int(m.group(1)): h for h in header if (m := re.fullmatch(r"x(\d+)", h))}
        vector: dict = {}
        for h in header:
            m = re.fullmatch(r"x(\d+)_(\d+)", h)
            if m:
                vector.setdefault(int(m.group(1)), {})[int(m.group(2))] = h
        if scalar and vector:
            raise ConfigError("mixed scalar and vector proxy columns")
        if scalar:
            proxies = [[scalar[j]] for j in sorted(scalar)]
        else:
            proxies = [[vector[j][c] for c in sorted(vector[j])] for j in sorted(vector)]
        if not proxies:
            raise ConfigError("no proxy columns (x1.. or x1_1..) in header")
        return cls(y="y", z=z, proxies=proxies, id="id" if "id" in header else None)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        return asdict(self)


FRAMINGHAM_SCHEMA = PanelSchema(
    y="chd",
    z=["age", "smoke", "chol"],
    proxies=[["sbp21"], ["sbp22"], ["sbp31"], ["sbp32"]],
    id="id",
    transform="log_minus_50",
)


def read_panel_csv(path, schema: Optional[PanelSchema] = None) -> ProxyPanel:
    """Read a panel; empty proxy cells become masked entries."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise PanelParseError("empty file", line=1) from None
        schema = schema or PanelSchema.infer(header)
        if schema.transform not in TRANSFORMS:
            raise ConfigError(f"unknown transform {schema.transform!r}")
        forward = TRANSFORMS[schema.transform][0]
        col = {h: i for i, h in enumerate(header)}
        needed = [schema.y, *schema.z, *(c for cols in schema.proxies for c in cols)]
        missing = [c for c in needed if c not in col]
        if missing:
            raise ConfigError(f"columns missing from header: {missing}")
        k, p = len(schema.proxies), len(schema.proxies[0])
        if any(len(cols) != p for cols in schema.proxies):
            raise ConfigError("all proxies must have the same number of components")

        ys, zs, xs, obs, ids = [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise PanelParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)

            def num(name, allow_empty=False):
                s = row[col[name]].strip()
                if s == "":
                    if allow_empty:
                        return None
                    raise PanelParseError(f"empty value in column {name!r}", line=lineno)
                try:
                    v = float(s)
                except ValueError:
                    raise PanelParseError(f"non-numeric value {s!r} in column {name!r}",
                                          line=lineno) from None
                return v

            ys.append(num(schema.y))
            zs.append([num(c) for c in schema.z])
            xrow, orow = [], []
            for cols in schema.proxies:
                vals = [num(c, allow_empty=True) for c in cols]
                if any(v is None for v in vals):
                    if not all(v is None for v in vals):
                        raise PanelParseError("partially missing vector proxy", line=lineno)
                    xrow.append([np.nan] * p)
                    orow.append(False)
                else:
                    xrow.append(vals)
                    orow.append(True)
            if not any(orow):
                raise DataError(f"line {lineno}: all proxies are empty")
            xs.append(xrow)
            obs.append(orow)
            ids.append(row[col[schema.id]] if schema.id and schema.id in col else len(ids))

    if not ys:
        raise PanelParseError("no data rows", line=2)
    y = np.array(ys)
    z = np.array(zs, dtype=float).reshape(len(ys), len(schema.z))
    x = np.transpose(np.array(xs, dtype=float), (1, 0, 2))
    observed = np.array(obs, dtype=bool)
    with np.errstate(invalid="ignore", divide="ignore"):
        x = np.where(observed.T[:, :, None], forward(x), np.nan)
    for j in range(k):
        bad = ~np.all(np.isfinite(x[j]), axis=1) & observed[:, j]
        if np.any(bad):
            raise DataError(f"line {int(np.flatnonzero(bad)[0]) + 2}: non-finite value for proxy {j + 1}")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(z)):
        raise DataError("non-finite outcome or covariate value")
    return ProxyPanel(y=y, proxies=x, observed=observed, z=z, ids=np.array(ids))


def write_panel_csv(panel: ProxyPanel, path, schema: Optional[PanelSchema] = None):
    """Write ``panel`` using ``schema`` (default layout when omitted)."""
    if schema is None:
        if panel.p == 1:
            proxies = [[f"x{j + 1}"] for j in range(panel.k)]
        else:
            proxies = [[f"x{j + 1}_{c + 1}" for c in range(panel.p)] for j in range(panel.k)]
        schema = PanelSchema(z=[f"z{c + 1}" for c in range(panel.q)], proxies=proxies)
    inverse = TRANSFORMS[schema.transform][1]
    header = ([schema.id] if schema.id else []) + [schema.y, *schema.z]
    header += [c for cols in schema.proxies for c in cols]
    raw = inverse(np.asarray(panel.proxies))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(panel.n):
            row = [str(panel.ids[i])] if schema.id else []
            row += [repr(float(panel.y[i]))] + [repr(float(v)) for v in panel.z[i]]
            for j in range(panel.k):
                if panel.observed[i, j]:
                    row += [repr(float(v)) for v in raw[j, i]]
                else:
                    row += [""] * panel.p
            w.writerow(row)
    return schema

