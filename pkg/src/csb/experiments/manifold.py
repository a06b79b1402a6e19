"""A 2-D circle pair embedded linearly in d dimensions, transported and projected back."""

from __future__ import annotations

import time

import numpy as np

from ..baseline_extrapolation import REFERENCE_T_REF, CubicCostModel, calibrate, extrapolate
from ..bridge_core import DiffusionSchedule, TrainConfig, train_flow
from ..metrics import ExperimentReport, recovery_mse
from ..sde_engine import TimeGrid, transport
from .common import data_hash, merged, trajectory_table

DEFAULTS = {
    "d": 1000,
    "n": 2000,
    "n_test": 500,
    "radius0": 1.0,
    "radius1": 1.5,
    "rotation": 0.7853981633974483,
    "offset": [2.0, 0.0],
    "radial_noise": 0.02,
    "ambient_noise": 0.01,
    "sigma": 0.05,
    "steps": 1500,
    "batch": 256,
    "hidden": [64],
    "lr": 0.05,
    "grid_steps": 50,
    "calibration_dref": 50,
    "calibration_trials": 5,
}


def circle_pair(n, c, rng):
    theta = 2 * np.pi * rng.random(n)
    r0 = c["radius0"] + c["radial_noise"] * rng.standard_normal(n)
    z0 = np.stack([r0 * np.cos(theta), r0 * np.sin(theta)], axis=1)
    a = c["rotation"]
    rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    z1 = (c["radius1"] / c["radius0"]) * z0 @ rot.T + np.asarray(c["offset"])
    return z0, z1


def run_manifold_recovery(seed: int = 42, cfg: dict | None = None, large: bool = False) -> ExperimentReport:
    c = merged(DEFAULTS, {**({"d": 100_000, "n": 500, "n_test": 100, "batch": 32} if large else {}), **(cfg or {})})
    t_start = time.perf_counter()
    rng = np.random.default_rng([seed, 21])
    d = c["d"]
    A, _ = np.linalg.qr(rng.standard_normal((d, 2)))
    z0, z1 = circle_pair(c["n"] + c["n_test"], c, rng)
    x0 = z0 @ A.T + c["ambient_noise"] * rng.standard_normal((len(z0), d))
    x1 = z1 @ A.T + c["ambient_noise"] * rng.standard_normal((len(z1), d))
    k = c["n"]
    t0 = time.perf_counter()
    flow = train_flow(x0[:k], x1[:k], c["sigma"],
                      TrainConfig(steps=c["steps"], batch=c["batch"], hidden=tuple(c["hidden"]), lr=c["lr"],
                                  seed=seed, sigma=c["sigma"]),
                      rng=np.random.default_rng([seed, 22]), schedule=DiffusionSchedule(c["sigma"]), paired=True)
    gen = transport(flow, x0[k:], TimeGrid(c["grid_steps"]), sigma=c["sigma"], seed=seed).endpoint
    csb_s = time.perf_counter() - t0
    zhat = gen @ A
    centre = np.asarray(c["offset"])
    radii = np.linalg.norm(zhat - centre, axis=1)
    local = calibrate(c["calibration_dref"], c["calibration_trials"], seed)
    ref = CubicCostModel(50, REFERENCE_T_REF)
    metrics = {
        "latent_mse": recovery_mse(zhat, z1[k:]),
        "radius_mean": float(radii.mean()),
        "circularity": float(radii.std() / radii.mean()),
        "csb_wall_s": csb_s,
        "local_t_ref": local.t_ref,
        "baseline_extrapolated_s": extrapolate(local, d),
        "baseline_extrapolated_reference_s": extrapolate(ref, d),
    }
    metrics["speedup_local"] = metrics["baseline_extrapolated_s"] / csb_s
    metrics["speedup_reference"] = metrics["baseline_extrapolated_reference_s"] / csb_s
    path = transport(flow, x0[k:k + 32], TimeGrid(c["grid_steps"]), sigma=c["sigma"], seed=seed,
                     keep_path=True).states
    tables = {
        "latent": (np.column_stack([z0[k:], z1[k:], zhat]), ["z0_0", "z0_1", "z1_0", "z1_1", "zhat_0", "zhat_1"]),
        "latent_trajectories": trajectory_table(path @ A, ["z_0", "z_1"]),
    }
    return ExperimentReport("manifold", metrics, time.perf_counter() - t_start, seed=seed, config=c,
                            input_hash=data_hash(x0[:4], x1[:4]), notes={"embedding_shape": [d, 2]},
                            tables=tables)
