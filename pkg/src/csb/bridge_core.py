"""Local conditional bridges.

A local bridge moves one node from its source conditional law to its target
conditional law given its parents. Linear-Gaussian conditionals use the
closed-form Gaussian bridge; anything else falls back to a small network
trained with independent conditional flow matching (I-CFM).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np
from scipy import stats

from . import structural_net as snet
from .errors import DimensionMismatch, NonFiniteLoss, NonPositiveStd
from .sde_engine import TimeGrid, integrate_sde

# -- diffusion schedule --------------------------------------------------------


@dataclass(frozen=True)
class DiffusionSchedule:
    """Noise level g(t). ``constant``: g = sigma. ``bridge_scaled``: g = sigma*2*sqrt(t(1-t))."""

    sigma: float = 0.0
    kind: str = "constant"

    def __post_init__(self):
        if self.sigma < 0 or not math.isfinite(self.sigma):
            raise ValueError("sigma must be a nonnegative finite number")
        if self.kind not in ("constant", "bridge_scaled"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    def g(self, t, sigma=None):
        s = self.sigma if sigma is None else sigma
        if self.kind == "constant":
            return s * np.ones_like(np.asarray(t, dtype=float))
        t = np.asarray(t, dtype=float)
        return s * 2.0 * np.sqrt(np.clip(t * (1.0 - t), 0.0, None))

    def g_fn(self, sigma=None):
        s = self.sigma if sigma is None else float(sigma)
        if self.kind == "constant":
            return lambda t: s
        return lambda t: s * 2.0 * math.sqrt(max(t * (1.0 - t), 0.0))

    def evaluate(self, grid: TimeGrid) -> np.ndarray:
        return self.g(grid.t)

    def with_sigma(self, sigma) -> "DiffusionSchedule":
        return DiffusionSchedule(float(sigma), self.kind)


# -- closed-form Gaussian bridge -------------------------------------------------


def entropic_coupling_cov(s0, s1, sigma):
    """Cross-covariance of the entropic coupling of N(., s0^2) and N(., s1^2)
    under a Brownian reference of variance sigma^2 over [0, 1]."""
    s0 = np.asarray(s0, dtype=float)
    s1 = np.asarray(s1, dtype=float)
    e = float(sigma) ** 2
    return 0.5 * (np.sqrt(4.0 * s0 ** 2 * s1 ** 2 + e * e) - e)


@dataclass(frozen=True)
class GaussianBridge:
    """Schrodinger bridge between N(m0, s0^2) and N(m1, s1^2) with reference sigma*W.

    Means may be arrays (one bridge per conditioning value); they broadcast
    against the state passed to :meth:`drift`.
    """

    m0: object
    s0: float
    m1: object
    s1: float
    sigma: float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.s0) <= 0) or np.any(np.asarray(self.s1) <= 0):
            raise NonPositiveStd("endpoint standard deviations must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    @property
    def coupling_cov(self):
        return entropic_coupling_cov(self.s0, self.s1, self.sigma)

    def mean(self, t):
        return (1.0 - t) * np.asarray(self.m0) + t * np.asarray(self.m1)

    def var(self, t, sigma=None):
        sig = self.sigma if sigma is None else sigma
        a2, b2 = np.asarray(self.s0) ** 2, np.asarray(self.s1) ** 2
        c = entropic_coupling_cov(self.s0, self.s1, sig)
        return (1 - t) ** 2 * a2 + t * t * b2 + 2 * t * (1 - t) * c + t * (1 - t) * sig ** 2

    def beta(self, t, sigma=None):
        """Linear feedback gain: drift = (m1 - m0) + beta(t) (x - mean(t))."""
        sig = self.sigma if sigma is None else sigma
        a2, b2 = np.asarray(self.s0) ** 2, np.asarray(self.s1) ** 2
        c = entropic_coupling_cov(self.s0, self.s1, sig)
        num = -(1 - t) * (a2 - c) + t * (b2 - c) - t * sig ** 2
        return num / self.var(t, sig)

    def drift(self, x, t, sigma=None):
        return (np.asarray(self.m1) - np.asarray(self.m0)) + self.beta(t, sigma) * (x - self.mean(t))

    def monge_map(self, x0):
        """Deterministic (sigma -> 0) transport map."""
        return np.asarray(self.m1) + (np.asarray(self.s1) / np.asarray(self.s0)) * (x0 - np.asarray(self.m0))


def solve_gaussian_bridge(m0, s0, m1, s1, sigma=0.0) -> GaussianBridge:
    return GaussianBridge(m0, s0, m1, s1, float(sigma))


def _ols(y, X):
    """Least squares y ~ X w + c; returns (w, c, residual std)."""
    n = y.shape[0]
    A = np.column_stack([X, np.ones(n)]) if X.size else np.ones((n, 1))
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(n - A.shape[1], 1)
    return coef[:-1], float(coef[-1]), float(np.sqrt(resid @ resid / dof))


@dataclass
class ConditionalGaussian:
    """Linear-Gaussian conditionals x | pa ~ N(pa @ w + c, s^2) at both endpoints."""

    w0: np.ndarray
    c0: float
    s0: float
    w1: np.ndarray
    c1: float
    s1: float
    sigma: float = 0.0

    kind = "gaussian"

    @classmethod
    def fit(cls, x0, pa0, x1, pa1, sigma=0.0) -> "ConditionalGaussian":
        w0, c0, s0 = _ols(x0, pa0)
        w1, c1, s1 = _ols(x1, pa1)
        # round-off leaves ~1e-16 residuals on exactly determined columns
        tiny = 1e-10 * max(1.0, float(np.abs(x0).max()), float(np.abs(x1).max()))
        if s0 <= tiny or s1 <= tiny:
            raise NonPositiveStd("a conditional residual variance is zero")
        return cls(np.asarray(w0), c0, s0, np.asarray(w1), c1, s1, float(sigma))

    def bridge(self, pa, sigma=None) -> GaussianBridge:
        sig = self.sigma if sigma is None else sigma
        if pa is None or self.w0.size == 0:
            m0, m1 = self.c0, self.c1
        else:
            m0 = pa @ self.w0 + self.c0
            m1 = pa @ self.w1 + self.c1
        return GaussianBridge(m0, self.s0, m1, self.s1, float(sig))

    def drift(self, x, pa, t, sigma=None):
        return self.bridge(pa, sigma).drift(x, t)

    def sample_source(self, pa, n, rng):
        m0 = self.bridge(pa).m0
        return np.asarray(m0) + self.s0 * rng.standard_normal(n)

    def to_json(self) -> dict:
        return {"kind": "gaussian", "w0": self.w0.tolist(), "c0": self.c0, "s0": self.s0,
                "w1": self.w1.tolist(), "c1": self.c1, "s1": self.s1, "sigma": self.sigma}

    @classmethod
    def from_json(cls, obj) -> "ConditionalGaussian":
        return cls(np.asarray(obj["w0"], float), obj["c0"], obj["s0"],
                   np.asarray(obj["w1"], float), obj["c1"], obj["s1"], obj.get("sigma", 0.0))


# -- neural drift ----------------------------------------------------------------


@dataclass
class NeuralDrift:
    """Learned velocity v(x_i, pa_i, t) backed by an Mlp.

    Inputs are standardised with the statistics stored in ``shift``/``scale``.
    ``source`` keeps a reservoir of source-law values for simulation.
    """

    net: snet.Mlp
    n_parents: int
    shift: np.ndarray
    scale: np.ndarray
    out_scale: float = 1.0
    sigma_train: float = 0.0
    trained: bool = False
    source: np.ndarray | None = None

    kind = "neural"

    def features(self, x, pa, t):
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        cols = [x[:, None]]
        if self.n_parents:
            cols.append(np.asarray(pa, dtype=float).reshape(n, self.n_parents))
        cols.append(np.broadcast_to(np.asarray(t, dtype=float), (n,))[:, None])
        z = np.concatenate(cols, axis=1)
        return (z - self.shift) / self.scale

    def drift(self, x, pa, t, sigma=None):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1)
        pa = None if pa is None else np.asarray(pa, dtype=float).reshape(flat.shape[0], -1)
        out = self.net.forward(self.features(flat, pa, t))[:, 0] * self.out_scale
        return out.reshape(x.shape)

    def sample_source(self, pa, n, rng):
        return rng.choice(self.source, size=n, replace=True)


@dataclass
class TrainConfig:
    """Training configuration (serialisable to JSON).

    ``steps`` overrides ``epochs`` when positive; otherwise the step count is
    ``epochs * ceil(n_rows / batch)``.
    """

    epochs: int = 20
    batch: int = 256
    lr: float = 1e-3
    sigma: float = 0.0
    schedule: str = "constant"
    seed: int = 42
    steps: int = 0
    hidden: tuple = (64, 64)
    optimizer: str = "sgd"
    momentum: float = 0.9
    solver: str = "auto"
    path_steps: int = 50
    clip: float | None = 10.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)

    def n_steps(self, n_rows: int) -> int:
        if self.steps > 0:
            return int(self.steps)
        return int(self.epochs * max(1, math.ceil(n_rows / self.batch)))

    def to_json(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_json(cls, obj) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in dict(obj).items() if k in names})

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


# -- local bridge ----------------------------------------------------------------


@dataclass
class LocalBridge:
    node: int
    parents: tuple[int, ...]
    solver: object
    schedule: DiffusionSchedule = field(default_factory=DiffusionSchedule)
    history: list = field(default_factory=list)

    @property
    def kind(self) -> str:
        return self.solver.kind

    def drift(self, x, pa, t, sigma=None):
        """Drift for this node; ``sigma`` defaults to the schedule's level."""
        sig = self.schedule.sigma if sigma is None else sigma
        return self.solver.drift(x, pa, t, sigma=sig)

    def sample_source(self, pa, n, rng):
        return self.solver.sample_source(pa, n, rng)


def cfm_training_pair(x0, x1, t, sigma, noise):
    """I-CFM sample: point on the Brownian-bridge interpolant and its target velocity."""
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    t = np.asarray(t, dtype=float)
    if x0.shape != x1.shape:
        raise DimensionMismatch(f"x0 shape {x0.shape} != x1 shape {x1.shape}")
    tt = t.reshape(t.shape + (1,) * (x0.ndim - t.ndim)) if t.ndim else t
    xt = (1.0 - tt) * x0 + tt * x1 + sigma * np.sqrt(tt * (1.0 - tt)) * np.asarray(noise, dtype=float)
    return xt, x1 - x0


def _is_linear_gaussian(y, X, tol_skew=0.25, tol_kurt=0.6, tol_corr=0.1, z_max=5.0) -> bool:
    """Heuristic: OLS residuals look Gaussian and carry no quadratic or saturating structure.

    A statistic rejects only when it is both larger than its tolerance and
    more than ``z_max`` standard errors from zero, so thousands of truly
    linear nodes do not trip it by chance.
    """
    w, c, s = _ols(y, X)
    r = y - (X @ w if X.size else 0.0) - c
    if s <= 0:
        return False
    n = len(r)
    if n >= 20:
        skew, kurt = stats.skew(r), stats.kurtosis(r)
        if abs(skew) > tol_skew and abs(stats.skewtest(r).statistic) > z_max:
            return False
        if abs(kurt) > tol_kurt and abs(stats.kurtosistest(r).statistic) > z_max:
            return False
    zc = math.sqrt(max(n - 3, 1))

    def related(a, b):
        if a.std() == 0 or b.std() == 0:
            return False
        rho = float(np.corrcoef(a, b)[0, 1])
        return abs(rho) > tol_corr and abs(np.arctanh(min(abs(rho), 0.999999))) * zc > z_max

    for j in range(X.shape[1] if X.size else 0):
        q = X[:, j] ** 2
        if related(q, r) or related(q, r ** 2):
            return False
        for f in (np.sin, np.tanh):
            if related(f(X[:, j]), r):
                return False
    return True


def choose_solver(node_data0, pa0, node_data1, pa1, cfg: TrainConfig) -> str:
    if cfg.solver in ("gaussian", "neural"):
        return cfg.solver
    if cfg.solver != "auto":
        raise ValueError(f"unknown solver {cfg.solver!r}")
    ok = _is_linear_gaussian(node_data0, pa0) and _is_linear_gaussian(node_data1, pa1)
    return "gaussian" if ok else "neural"


def _parent_at(parent_paths, rows, t, n_steps):
    """Linear interpolation of stored parent paths at times ``t`` for ``rows``."""
    pos = t * n_steps
    k0 = np.clip(np.floor(pos).astype(int), 0, n_steps - 1)
    w = (pos - k0)[:, None]
    return (1.0 - w) * parent_paths[k0, rows] + w * parent_paths[k0 + 1, rows]


def train_local_bridge(node: int, data0, data1, parent_paths=None, schedule: DiffusionSchedule | None = None,
                       cfg: TrainConfig | None = None, parents: Sequence[int] = (), rng=None) -> LocalBridge:
    """Solve the local bridge of ``node`` given its parents.

    ``parent_paths`` has shape (path_steps+1, n1, n_parents): one parent
    trajectory per target row, ending at that row's parent values. It is only
    read by the neural solver; the Gaussian solver is closed form.
    """
    cfg = cfg or TrainConfig()
    schedule = schedule or DiffusionSchedule(cfg.sigma, cfg.schedule)
    data0 = np.asarray(data0, dtype=float)
    data1 = np.asarray(data1, dtype=float)
    parents = tuple(int(p) for p in parents)
    cols = (node,) + parents
    for name, data in (("data0", data0), ("data1", data1)):
        if data.ndim != 2 or max(cols) >= data.shape[1]:
            raise DimensionMismatch(f"{name} does not cover node {node} and its parents")
    if parent_paths is not None:
        parent_paths = np.asarray(parent_paths, dtype=float)
        if parent_paths.ndim != 3 or parent_paths.shape[1:] != (data1.shape[0], len(parents)):
            raise DimensionMismatch(
                f"parent_paths shape {parent_paths.shape} does not match "
                f"({data1.shape[0]} rows, {len(parents)} parents)")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    x0, pa0 = data0[:, node], data0[:, list(parents)]
    x1, pa1 = data1[:, node], data1[:, list(parents)]

    kind = choose_solver(x0, pa0, x1, pa1, cfg)
    if kind == "gaussian":
        solver = ConditionalGaussian.fit(x0, pa0, x1, pa1, schedule.sigma)
        return LocalBridge(node, parents, solver, schedule)

    if parents and parent_paths is None:
        raise DimensionMismatch("neural solver needs parent paths for a non-root node")
    solver, history = _train_neural(x0, x1, parent_paths, len(parents), schedule.sigma, cfg, rng)
    return LocalBridge(node, parents, solver, schedule, history)


def _train_neural(x0, x1, parent_paths, n_parents, sigma, cfg: TrainConfig, rng):
    n0, n1 = x0.shape[0], x1.shape[0]
    path_steps = parent_paths.shape[0] - 1 if parent_paths is not None else 0
    # standardise inputs with pooled endpoint statistics
    pooled = np.concatenate([x0, x1])
    shift = [pooled.mean()]
    scale = [pooled.std() + 1e-8]
    if n_parents:
        flat = parent_paths.reshape(-1, n_parents)
        shift += list(flat.mean(axis=0))
        scale += list(flat.std(axis=0) + 1e-8)
    shift += [0.5]
    scale += [math.sqrt(1.0 / 12.0)]
    v_scale = float(np.std(x1) + np.std(x0)) or 1.0
    widths = (1 + n_parents + 1, *cfg.hidden, 1)
    net = snet.Mlp(widths, rng=rng)
    drift = NeuralDrift(net, n_parents, np.array(shift), np.array(scale), v_scale, sigma,
                        source=x0[rng.choice(n0, size=min(n0, 4096), replace=False)].copy())

    def batch(r):
        rows = r.integers(0, n1, cfg.batch)
        src = r.integers(0, n0, cfg.batch)
        t = r.random(cfg.batch)
        xt, v = cfm_training_pair(x0[src], x1[rows], t, sigma, r.standard_normal(cfg.batch))
        pa = _parent_at(parent_paths, rows, t, path_steps) if n_parents else None
        return drift.features(xt, pa, t), (v / v_scale)[:, None]

    steps = cfg.n_steps(n1)
    res = snet.train(net, batch, steps, rng, optimizer=cfg.optimizer, lr=cfg.lr,
                     momentum=cfg.momentum, clip=cfg.clip)
    drift.trained = True
    return drift, res.losses


# -- energies ----------------------------------------------------------------------


def path_energy(drift_values: np.ndarray, dt: float) -> np.ndarray:
    """Per-path left Riemann sum of 1/2 |b|^2 dt; drift_values is (steps, n, ...)."""
    sq = drift_values.reshape(drift_values.shape[0], drift_values.shape[1], -1) ** 2
    return 0.5 * dt * sq.sum(axis=(0, 2))


def simulate_node(bridge: LocalBridge, n: int, grid: TimeGrid, rng, parent_paths=None, sigma=None):
    """Simulate ``n`` paths of one node from its source conditional law.

    Returns (states, drifts) with shapes (steps+1, n) and (steps, n).
    """
    sig = bridge.schedule.sigma if sigma is None else sigma
    g = bridge.schedule.g_fn(sig)
    pa0 = None if parent_paths is None else parent_paths[0]
    x = bridge.sample_source(pa0, n, rng)
    ts, dt = grid.t, grid.dt
    states = [x]
    drifts = []
    for k in range(grid.n_steps):
        pa = None if parent_paths is None else parent_paths[k]
        b = bridge.drift(x, pa, ts[k], sigma=sig)
        drifts.append(b)
        x = x + b * dt
        gk = g(ts[k])
        if gk:
            x = x + gk * math.sqrt(dt) * rng.standard_normal(n)
        states.append(x)
    return np.stack(states), np.stack(drifts)


def local_kl_energy(bridge: LocalBridge, schedule: DiffusionSchedule | None = None, n_mc: int = 10000,
                    seed=0, parent_paths=None, grid: TimeGrid | None = None) -> float:
    """Monte-Carlo estimate of E[int_0^1 1/2 |b_t|^2 dt] along simulated bridge paths.

    ``b`` is the drift of the simulated SDE (the control relative to a
    zero-drift reference, in units of the noise level). ``parent_paths`` must
    have shape (steps+1, n_mc, n_parents) for non-root nodes.
    """
    grid = grid or TimeGrid(100)
    sigma = None if schedule is None else schedule.sigma
    if schedule is not None and schedule.kind != bridge.schedule.kind:
        bridge = LocalBridge(bridge.node, bridge.parents, bridge.solver, schedule)
    rng = np.random.default_rng(seed)
    _, drifts = simulate_node(bridge, n_mc, grid, rng, parent_paths, sigma)
    return float(np.mean(path_energy(drifts, grid.dt)))


# -- structure-blind joint flow ------------------------------------------------


@dataclass
class FlowModel:
    """Joint velocity field v(x, t) over all coordinates, conditioning on nothing else."""

    net: snet.Mlp
    shift: np.ndarray
    scale: np.ndarray
    out_scale: np.ndarray
    schedule: DiffusionSchedule = field(default_factory=DiffusionSchedule)
    history: list = field(default_factory=list)
    fitted: bool = True

    def drift(self, X, t, sigma=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        tt = np.full((X.shape[0], 1), float(t))
        z = np.concatenate([(X - self.shift) / self.scale, (tt - 0.5) * math.sqrt(12.0)], axis=1)
        return self.net.forward(z) * self.out_scale


def train_flow(data0, data1, sigma=0.0, cfg: TrainConfig | None = None, rng=None,
               schedule: DiffusionSchedule | None = None, paired: bool = False) -> FlowModel:
    """I-CFM on full vectors; random coupling unless ``paired`` (row i of data0 goes to row i of data1)."""
    cfg = cfg or TrainConfig()
    X0 = np.atleast_2d(np.asarray(data0, dtype=float))
    X1 = np.atleast_2d(np.asarray(data1, dtype=float))
    if X0.shape[1] != X1.shape[1]:
        raise DimensionMismatch(f"source has {X0.shape[1]} columns, target {X1.shape[1]}")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    d = X0.shape[1]
    pooled = np.concatenate([X0, X1])
    shift, scale = pooled.mean(axis=0), pooled.std(axis=0) + 1e-8
    out_scale = X0.std(axis=0) + X1.std(axis=0) + 1e-8
    net = snet.Mlp((d + 1, *cfg.hidden, d), rng=rng)
    schedule = schedule or DiffusionSchedule(sigma, cfg.schedule)
    model = FlowModel(net, shift, scale, out_scale, schedule)
    n0, n1 = len(X0), len(X1)
    if paired and n0 != n1:
        raise DimensionMismatch("paired coupling needs equal row counts")

    def batch(r):
        i1 = r.integers(0, n1, cfg.batch)
        a = X0[i1 if paired else r.integers(0, n0, cfg.batch)]
        b = X1[i1]
        t = r.random(cfg.batch)
        xt, v = cfm_training_pair(a, b, t, sigma, r.standard_normal(a.shape))
        z = np.concatenate([(xt - shift) / scale, (t[:, None] - 0.5) * math.sqrt(12.0)], axis=1)
        return z, v / out_scale

    res = snet.train(net, batch, cfg.n_steps(n1), rng, optimizer=cfg.optimizer, lr=cfg.lr,
                     momentum=cfg.momentum, clip=cfg.clip)
    model.history = res.losses
    return model
