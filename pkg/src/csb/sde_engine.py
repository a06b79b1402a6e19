"""Euler / Euler-Maruyama integration, structural abduction and hybrid counterfactuals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import NonFiniteState, UnfittedModel

DEFAULT_STEPS = 200


@dataclass(frozen=True)
class TimeGrid:
    n_steps: int = DEFAULT_STEPS

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be positive")

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_steps + 1)

    @property
    def dt(self) -> float:
        return 1.0 / self.n_steps


@dataclass
class Trajectory:
    """States in integration order; ``times[k]`` is the clock at ``states[k]``.

    When integrated with ``keep_path=False`` only the first and last states
    are kept and ``times`` holds the two end clocks.
    """

    states: np.ndarray
    grid: TimeGrid
    sigma_used: float = 0.0
    direction: str = "forward"

    @property
    def times(self) -> np.ndarray:
        t = self.grid.t if self.direction == "forward" else self.grid.t[::-1]
        return t if len(self.states) == len(t) else t[[0, -1]]

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]

    def forward_states(self) -> np.ndarray:
        """States ordered by increasing time."""
        return self.states if self.direction == "forward" else self.states[::-1]

    def to_csv(self, path, names=None) -> None:
        from .formats import write_csv

        s = self.states.reshape(len(self.states), -1)
        names = list(names) if names is not None else [f"x_{i}" for i in range(s.shape[1])]
        write_csv(path, np.column_stack([self.times, s]), ["t"] + names)


def _clock(grid: TimeGrid, direction: str) -> np.ndarray:
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', not {direction!r}")
    return grid.t if direction == "forward" else grid.t[::-1]


def _as_g(g) -> Callable[[float], float]:
    if callable(g):
        return g
    value = float(g)
    return lambda t: value


def integrate_sde(drift, g, x0, grid: TimeGrid, seed=None, direction="forward",
                  keep_path=True, rng=None, noise_mask=None) -> Trajectory:
    """Euler-Maruyama: x <- x + drift(x, t) dt + g(t) sqrt(dt) xi.

    Noise draws are skipped whenever g(t) == 0, so g identically zero gives
    exactly the explicit Euler ODE result. For ``direction='backward'`` the
    clock runs from 1 to 0 and ``drift`` must already be the reverse-time field.
    ``noise_mask`` (broadcastable to the state) zeroes the noise on chosen
    coordinates, e.g. clamped nodes.
    """
    gfun = _as_g(g)
    ts = _clock(grid, direction)
    dt = grid.dt
    sq = np.sqrt(dt)
    x = np.array(x0, dtype=float, copy=True)
    if rng is None and seed is not None:
        rng = np.random.default_rng(seed)
    path = [x.copy()] if keep_path else None
    first = x.copy()
    sigma_seen = 0.0
    for k in range(grid.n_steps):
        t = ts[k]
        step = np.asarray(drift(x, t), dtype=float) * dt
        x = x + step
        gk = float(gfun(t))
        if gk != 0.0:
            if rng is None:
                rng = np.random.default_rng()
            xi = rng.standard_normal(x.shape)
            if noise_mask is not None:
                xi = xi * noise_mask
            x = x + gk * sq * xi
            sigma_seen = max(sigma_seen, gk)
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(k + 1, ts[k + 1])
        if keep_path:
            path.append(x)
    states = np.stack(path) if keep_path else np.stack([first, x])
    return Trajectory(states, grid, sigma_seen, direction)


def integrate_ode(drift, x0, grid: TimeGrid, direction="forward", keep_path=True) -> Trajectory:
    """Explicit Euler: x <- x + drift(x, t) dt."""
    return integrate_sde(drift, 0.0, x0, grid, direction=direction, keep_path=keep_path)


def structural_abduction(bridge, x_obs, parent_traj, grid: TimeGrid, keep_path=True) -> Trajectory:
    """Run one node's local bridge backwards from its observed value (sigma = 0).

    ``parent_traj`` is indexed by forward time, shape (n_steps+1, n, n_parents)
    or None for a root. Only the node's own state and its parents' states are
    read; children never enter.
    """
    x_obs = np.asarray(x_obs, dtype=float)
    ts = grid.t
    n = grid.n_steps

    def reverse(x, t):
        k = int(round(t * n))
        pa = None if parent_traj is None else parent_traj[k]
        return -bridge.drift(x, pa, ts[k], sigma=0.0)

    return integrate_ode(reverse, x_obs, grid, direction="backward", keep_path=keep_path)


def generate_node(bridge, u, parent_traj, grid: TimeGrid, sigma=0.0, seed=None, keep_path=True):
    """Forward-integrate one node's local bridge from latent ``u``."""
    ts = grid.t
    n = grid.n_steps

    def fwd(x, t):
        k = int(round(t * n))
        pa = None if parent_traj is None else parent_traj[k]
        return bridge.drift(x, pa, ts[k], sigma=sigma)

    return integrate_sde(fwd, sigma, u, grid, seed=seed, keep_path=keep_path)


def _clamp_mask(model, assignments):
    d = model.dag.node_count
    idx = np.array([model.dag.index(k) for k in assignments], dtype=int)
    vals = np.array([float(v) for v in assignments.values()], dtype=float)
    free = np.ones(d, dtype=bool)
    free[idx] = False
    return idx, vals, free


def abduct(model, x_fact, grid: TimeGrid, keep_path=False) -> Trajectory:
    """Deterministic reverse of every local bridge at once.

    All nodes step together; a node's reverse drift reads only its own and its
    parents' current states, so this matches node-by-node processing with
    parents first, step for step.
    """
    x = np.atleast_2d(np.asarray(x_fact, dtype=float))
    return integrate_ode(lambda s, t: -model.drift(s, t, sigma=0.0), x, grid,
                         direction="backward", keep_path=keep_path)


def _noise_fn(model, sigma):
    schedule = getattr(model, "schedule", None)
    if schedule is None or not sigma:
        return float(sigma)
    return schedule.g_fn(sigma)


def predict(model, u, grid: TimeGrid, sigma=0.0, seed=None, assignments: Mapping | None = None,
            keep_path=False) -> Trajectory:
    """Forward transport from latents ``u``; intervened nodes stay clamped for all t."""
    u = np.atleast_2d(np.asarray(u, dtype=float)).copy()
    mask = None
    if assignments:
        idx, vals, free = _clamp_mask(model, assignments)
        u[:, idx] = vals
        mask = free.astype(float)

    def field(s, t):
        b = model.drift(s, t, sigma=sigma)
        return b if mask is None else b * mask

    return integrate_sde(field, _noise_fn(model, sigma), u, grid, seed=seed,
                         keep_path=keep_path, noise_mask=mask)


def hybrid_counterfactual(model, x_fact, assignments: Mapping, grid: TimeGrid | None = None,
                          sigma_gen: float = 0.0, seed=None, return_latent=False):
    """Abduction (sigma=0) -> action (clamp) -> prediction (sigma=sigma_gen).

    ``x_fact`` may be one row or an (n, d) batch; the result has the same shape.
    """
    if not getattr(model, "fitted", False):
        raise UnfittedModel("model has not been fitted")
    grid = grid or TimeGrid()
    x = np.asarray(x_fact, dtype=float)
    single = x.ndim == 1
    # resolve names early so bad targets fail before any integration
    assignments = {model.dag.index(k): float(v) for k, v in (assignments or {}).items()}
    u = abduct(model, np.atleast_2d(x), grid).endpoint
    out = predict(model, u, grid, sigma=sigma_gen, seed=seed, assignments=assignments).endpoint
    if single:
        out, u = out[0], u[0]
    return (out, u) if return_latent else out


def transport(model, x0, grid: TimeGrid | None = None, sigma=0.0, seed=None, keep_path=False):
    """Push source samples through the fitted bridge."""
    grid = grid or TimeGrid()
    return predict(model, x0, grid, sigma=sigma, seed=seed, keep_path=keep_path)
