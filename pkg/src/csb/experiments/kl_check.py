"""Energy additivity of the factorised bridge on a two-node linear-Gaussian chain.

The control energy of the joint solution is compared with the sum of the two
local energies, each estimated from its own simulation. Admissible
perturbations keep every node's drift a function of its own state and its
parent's state and leave the endpoint laws unchanged: they bend the mean path
by ``delta * sin(pi t)`` and scale the variance path by ``1 + eps * sin(pi t)``.
"""

from __future__ import annotations

import time

import numpy as np

from ..bridge_core import DiffusionSchedule, TrainConfig, entropic_coupling_cov, local_kl_energy
from ..csf import fit
from ..graph_scm import Dag, Mechanism, Scm, sample
from ..metrics import ExperimentReport
from ..sde_engine import TimeGrid
from .common import merged

DEFAULTS = {
    "n": 100_000,
    "n_mc": 20_000,
    "sigma": 0.5,
    "grid_steps": 200,
    "source": {"root": [0.0, 1.0], "child": [0.8, 1.0, 0.5]},
    "target": {"root": [2.0, 1.5], "child": [0.8, -1.0, 0.7]},
    "n_perturbations": 10,
    "perturbation_scale": 0.3,
    "tolerance": 0.03,
}


def two_node_scm(spec) -> Scm:
    m, s = spec["root"]
    w, c, sc = spec["child"]
    dag = Dag.from_names(["x1", "x2"], [("x1", "x2")])
    return Scm(dag, (Mechanism("linear", (m,), s), Mechanism("linear", (w, c), sc)))


def _paths(sol, sigma, t, pa):
    """Mean, variance and variance rate of one node's Gaussian bridge at time t."""
    a2, b2 = sol.s0 ** 2, sol.s1 ** 2
    cc = entropic_coupling_cov(sol.s0, sol.s1, sigma)
    m0 = sol.c0 + (pa @ sol.w0 if pa is not None else 0.0)
    m1 = sol.c1 + (pa @ sol.w1 if pa is not None else 0.0)
    v = (1 - t) ** 2 * a2 + t * t * b2 + 2 * t * (1 - t) * cc + t * (1 - t) * sigma ** 2
    dv = -2 * (1 - t) * a2 + 2 * t * b2 + 2 * (1 - 2 * t) * cc + (1 - 2 * t) * sigma ** 2
    return m0, m1, v, dv


def perturbed_drift(sol, sigma, x, pa, t, delta=0.0, eps=0.0):
    """Gaussian bridge drift with bent mean path and rescaled variance path."""
    m0, m1, v, dv = _paths(sol, sigma, t, pa)
    s, c = np.sin(np.pi * t), np.cos(np.pi * t)
    vt = v * (1 + eps * s)
    dvt = dv * (1 + eps * s) + v * eps * np.pi * c
    beta = (dvt - sigma ** 2) / (2 * vt)
    mu = (1 - t) * m0 + t * m1 + delta * s
    return (m1 - m0) + delta * np.pi * c + beta * (x - mu)


def joint_energy(model, x0, sigma, grid, noise, params=None):
    """Per-path energy of the two-node system driven by fixed Brownian increments ``noise``."""
    sols = [b.solver for b in model.bridges]
    params = params or [(0.0, 0.0), (0.0, 0.0)]
    x = x0.copy()
    energy = np.zeros(len(x))
    for k, t in enumerate(grid.t[:-1]):
        b0 = perturbed_drift(sols[0], sigma, x[:, 0], None, t, *params[0])
        b1 = perturbed_drift(sols[1], sigma, x[:, 1], x[:, [0]], t, *params[1])
        energy += 0.5 * grid.dt * (b0 ** 2 + b1 ** 2)
        x = x + grid.dt * np.stack([b0, b1], axis=1) + sigma * np.sqrt(grid.dt) * noise[k]
    return energy, x


def run_kl_additivity(seed: int = 42, cfg: dict | None = None) -> ExperimentReport:
    c = merged(DEFAULTS, cfg)
    t0 = time.perf_counter()
    sigma = c["sigma"]
    data0 = sample(two_node_scm(c["source"]), c["n"], seed).samples
    data1 = sample(two_node_scm(c["target"]), c["n"], seed + 1).samples
    model = fit(Dag.from_names(["x1", "x2"], [("x1", "x2")]), data0, data1, DiffusionSchedule(sigma),
                TrainConfig(solver="gaussian", sigma=sigma), seed=seed)
    grid = TimeGrid(c["grid_steps"])
    n = c["n_mc"]
    rng = np.random.default_rng([seed, 31])
    x0 = model.sample_source(n, seed=seed + 2)
    noise = rng.standard_normal((grid.n_steps, n, 2))

    # joint energy; per-node split comes from the same simulation
    base, x_end = joint_energy(model, x0, sigma, grid, noise)
    total = float(base.mean())

    # local energies from separate simulations: root alone, then the child along fresh root paths
    root = model.bridges[0]
    e_root = local_kl_energy(root, model.schedule, n, seed=seed + 3, grid=grid)
    prng = np.random.default_rng([seed, 32])
    r = root.sample_source(None, n, prng)
    root_path = [r]
    for t in grid.t[:-1]:
        r = r + grid.dt * root.drift(r, None, t) + sigma * np.sqrt(grid.dt) * prng.standard_normal(n)
        root_path.append(r)
    root_path = np.stack(root_path)[:, :, None]
    e_child = local_kl_energy(model.bridges[1], model.schedule, n, seed=seed + 4,
                              parent_paths=root_path, grid=grid)
    local_sum = e_root + e_child

    # admissible perturbations with common random numbers
    prng = np.random.default_rng([seed, 33])
    worst = np.inf
    decreases = 0
    rows = []
    for _ in range(c["n_perturbations"]):
        params = [tuple(prng.uniform(-1, 1, 2) * c["perturbation_scale"]) for _ in range(2)]
        pert, _ = joint_energy(model, x0, sigma, grid, noise, params)
        diff = pert - base
        se = diff.std() / np.sqrt(n)
        margin = float(diff.mean() / max(se, 1e-12))
        worst = min(worst, margin)
        rows.append([*params[0], *params[1], float(pert.mean()), float(diff.mean()), float(se)])
        if diff.mean() < -3 * se:
            decreases += 1
    metrics = {
        "total_energy": total,
        "local_energy_root": e_root,
        "local_energy_child": e_child,
        "local_energy_sum": local_sum,
        "relative_gap": abs(total - local_sum) / total,
        "perturbation_decreases": decreases,
        "worst_margin_in_se": worst,
        "endpoint_mean_x1": float(x_end[:, 0].mean()),
        "endpoint_std_x1": float(x_end[:, 0].std()),
        "target_mean_x1": float(data1[:, 0].mean()),
        "target_std_x1": float(data1[:, 0].std()),
    }
    tables = {"perturbations": (np.array(rows).reshape(-1, 7),
                                ["delta_x1", "eps_x1", "delta_x2", "eps_x2", "energy", "energy_change", "std_error"])}
    return ExperimentReport("kl_additivity", metrics, time.perf_counter() - t0, seed=seed, config=c,
                            tables=tables)
