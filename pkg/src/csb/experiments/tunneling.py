"""Double-moon transport across a gap: deterministic flow versus entropic bridge."""

from __future__ import annotations

import time

import numpy as np

from ..bridge_core import DiffusionSchedule, TrainConfig, train_flow
from ..metrics import ExperimentReport, support_coverage
from ..sde_engine import TimeGrid, integrate_sde
from .common import data_hash, merged, trajectory_table

DEFAULTS = {
    "dim": 10,
    "n": 4000,
    "radius": 1.0,
    "gap": 0.5,
    "noise_std": 0.05,
    "shift": 4.0,
    "sigma": 0.5,
    "steps": 2000,
    "hidden": [64, 64],
    "lr": 1e-3,
    "grid_steps": 100,
    "n_gen": 4000,
    "sweep": [0.0, 0.25, 0.5],
}


def moons(n, rng, radius=1.0, gap=0.5, noise_std=0.05, offset=(0.0, 0.0), weights=(0.5, 0.5)):
    """Two interleaved half circles; returns (points, labels)."""
    labels = (rng.random(n) >= weights[0]).astype(int)
    theta = np.pi * rng.random(n)
    upper = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    lower = np.stack([radius - radius * np.cos(theta), -radius * np.sin(theta) + radius - gap], axis=1)
    lower[:, 1] -= radius
    pts = np.where(labels[:, None] == 0, upper, lower)
    pts = pts + np.asarray(offset) + noise_std * rng.standard_normal(pts.shape)
    return pts, labels


def moon_centres(radius=1.0, gap=0.5, offset=(0.0, 0.0), k=200):
    theta = np.linspace(0, np.pi, k)
    upper = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    lower = np.stack([radius - radius * np.cos(theta), -radius * np.sin(theta) - gap], axis=1)
    return upper + np.asarray(offset), lower + np.asarray(offset)


def classify(points2d, radius, gap, offset):
    up, lo = moon_centres(radius, gap, offset)
    du = np.min(np.linalg.norm(points2d[:, None] - up[None], axis=2), axis=1)
    dl = np.min(np.linalg.norm(points2d[:, None] - lo[None], axis=2), axis=1)
    return (dl < du).astype(int)


def embedding(dim, rng):
    q, _ = np.linalg.qr(rng.standard_normal((dim, 2)))
    return q  # (dim, 2), orthonormal columns


def populations(c, seed):
    rng = np.random.default_rng([seed, 7])
    A = embedding(c["dim"], rng)
    offset = (c["shift"], 0.0)
    s2, _ = moons(c["n"], rng, c["radius"], c["gap"], 0.0)
    t2, tl = moons(c["n"], rng, c["radius"], c["gap"], 0.0, offset)
    src = s2 @ A.T + c["noise_std"] * rng.standard_normal((c["n"], c["dim"]))
    tgt = t2 @ A.T + c["noise_std"] * rng.standard_normal((c["n"], c["dim"]))
    return A, src, tgt, tl


def _generate(flow, src, sigma, grid, seed):
    g = flow.schedule.g_fn(sigma)
    return integrate_sde(lambda x, t: flow.drift(x, t), g, src, grid, seed=seed, keep_path=False).endpoint


def run_tunneling(seed: int = 42, cfg: dict | None = None) -> ExperimentReport:
    c = merged(DEFAULTS, cfg)
    t0 = time.perf_counter()
    A, src, tgt, labels = populations(c, seed)
    grid = TimeGrid(c["grid_steps"])
    gen_src = src[np.random.default_rng([seed, 8]).integers(0, len(src), c["n_gen"])]
    offset = (c["shift"], 0.0)
    metrics = {}
    flows = {}
    for sig in sorted(set(c["sweep"]) | {0.0, c["sigma"]}):
        tc = TrainConfig(steps=c["steps"], hidden=tuple(c["hidden"]), lr=c["lr"], seed=seed, sigma=sig)
        flows[sig] = train_flow(src, tgt, sig, tc, rng=np.random.default_rng([seed, 9]),
                                schedule=DiffusionSchedule(sig))
    gens = {sig: _generate(f, gen_src, sig, grid, seed + 3) for sig, f in flows.items()}
    for sig, gen in gens.items():
        if sig in c["sweep"]:
            metrics[f"coverage_sigma_{sig:g}"] = support_coverage(gen, tgt)
    target_frac = float(np.mean(labels == 0))
    for name, sig in (("ode", 0.0), ("csb", c["sigma"])):
        gen = gens[sig]
        lab = classify(gen @ A, c["radius"], c["gap"], offset)
        frac = float(np.mean(lab == 0))
        metrics[f"{name}_coverage"] = support_coverage(gen, tgt)
        metrics[f"{name}_mode_mass_upper"] = frac
        metrics[f"{name}_mode_imbalance"] = abs(frac - target_frac)
        metrics[f"{name}_plane_coverage"] = support_coverage(gen @ A, tgt @ A)
    metrics["target_mode_mass_upper"] = target_frac
    tables = {
        "projection": (A, ["a_0", "a_1"]),
        "target_plane": (np.column_stack([tgt @ A, labels]), ["p_0", "p_1", "label"]),
        "generated_plane": (np.concatenate([np.column_stack([np.full(len(g), s), g @ A])
                                            for s, g in sorted(gens.items())]), ["sigma", "p_0", "p_1"]),
    }
    for name, sig in (("ode", 0.0), ("csb", c["sigma"])):
        f = flows[sig]
        path = integrate_sde(lambda x, t: f.drift(x, t), f.schedule.g_fn(sig), gen_src[:64], grid,
                             seed=seed + 4).states
        tables[f"{name}_trajectories_plane"] = trajectory_table(path @ A, ["p_0", "p_1"])
    return ExperimentReport("tunneling", metrics, time.perf_counter() - t0, seed=seed, config=c,
                            input_hash=data_hash(src, tgt),
                            notes={"projection": A.tolist()}, tables=tables)
