"""Full-rank sin/tanh chain: weight-shared causal convolution versus a global MLP.

Both models learn the paired velocity v(x_t, x_0, t) with x_t on the straight
line from x_0 to x_1 and are integrated as an ODE from x_0. They see the same
information and the same number of optimiser steps; only the architecture
differs.
"""

from __future__ import annotations

import time

import numpy as np

from .. import structural_net as snet
from ..graph_scm import sin_tanh_step
from ..metrics import ExperimentReport, recovery_mse
from .common import data_hash, merged

CONV_CONFIG = {"in_channels": 2, "hidden": 106, "left_context": 1, "n_scalars": 1, "hidden_layers": 1}

DEFAULTS = {
    "d": 10_000,
    "d_small": 1_000,
    "n_train": 1000,
    "n_test": 64,
    "noise_std": 0.1,
    "steps": 1000,
    "batch": 32,
    "crop": 512,
    "mlp_hidden": 512,
    "optimizer": "sgd",
    "lr": 0.05,
    "momentum": 0.9,
    "mlp_lr": 0.05,
    "clip": 1.0,
    "ode_steps": 20,
    "run_small": True,
}

LARGE = {"d": 100_000, "n_train": 500, "n_test": 16, "batch": 8}


def chain_pairs(d, n, noise_std, rng, dtype=np.float32):
    x0 = rng.standard_normal((n, d))
    x1 = sin_tanh_step(x0, noise_std, rng)
    return x0.astype(dtype), x1.astype(dtype)


def _conv_batch(x0, x1, batch, crop):
    n, d = x0.shape
    crop = min(crop, d)

    def fn(r):
        rows = r.integers(0, n, batch)
        start = int(r.integers(0, d - crop + 1))
        lo = max(start - 1, 0)
        a = x0[rows, lo:start + crop]
        b = x1[rows, lo:start + crop]
        t = r.random((batch, 1)).astype(a.dtype)
        xt = (1 - t) * a + t * b
        v = b - a
        if lo < start:
            # the extra left column only feeds the receptive field of the first kept position
            v[:, 0] = np.nan
        return np.stack([xt, a], axis=2), v, t
    return fn


def _mlp_features(xt, x0, t):
    return np.concatenate([xt, x0, t], axis=1)


def _mlp_batch(x0, x1, batch):
    n = x0.shape[0]

    def fn(r):
        rows = r.integers(0, n, batch)
        a, b = x0[rows], x1[rows]
        t = r.random((batch, 1)).astype(a.dtype)
        return _mlp_features((1 - t) * a + t * b, a, t), b - a
    return fn


def integrate_conv(net, x0, steps):
    x = x0.copy()
    dt = 1.0 / steps
    for k in range(steps):
        t = np.full((len(x), 1), k * dt, dtype=x.dtype)
        x = x + dt * net.forward(np.stack([x, x0], axis=2), t)
    return x


def integrate_mlp(net, x0, steps):
    x = x0.copy()
    dt = 1.0 / steps
    for k in range(steps):
        t = np.full((len(x), 1), k * dt, dtype=x.dtype)
        x = x + dt * net.forward(_mlp_features(x, x0, t))
    return x


def train_conv(x0, x1, c, seed):
    rng = np.random.default_rng([seed, 11])
    net = snet.Conv1dDrift(**CONV_CONFIG, rng=rng, dtype=np.float32)
    t0 = time.perf_counter()
    res = snet.train(net, _conv_batch(x0, x1, c["batch"], c["crop"]), c["steps"], rng,
                     optimizer=c["optimizer"], lr=c["lr"], momentum=c["momentum"], clip=c["clip"])
    return net, time.perf_counter() - t0, res


def train_mlp(x0, x1, c, seed):
    d = x0.shape[1]
    rng = np.random.default_rng([seed, 12])
    net = snet.Mlp((2 * d + 1, c["mlp_hidden"], d), rng=rng, dtype=np.float32)
    t0 = time.perf_counter()
    res = snet.train(net, _mlp_batch(x0, x1, c["batch"]), c["steps"], rng,
                     optimizer=c["optimizer"], lr=c["mlp_lr"], momentum=c["momentum"], clip=c["clip"])
    return net, time.perf_counter() - t0, res


def _split(d, c, seed):
    rng = np.random.default_rng([seed, d])
    x0, x1 = chain_pairs(d, c["n_train"] + c["n_test"], c["noise_std"], rng)
    k = c["n_train"]
    return x0[:k], x1[:k], x0[k:], x1[k:]


def run_fullrank_audit(seed: int = 42, cfg: dict | None = None, large: bool = False) -> ExperimentReport:
    c = merged(DEFAULTS, {**(LARGE if large else {}), **(cfg or {})})
    t_start = time.perf_counter()
    d = c["d"]
    tr0, tr1, te0, te1 = _split(d, c, seed)
    conv, conv_s, conv_res = train_conv(tr0, tr1, c, seed)
    conv_pred = integrate_conv(conv, te0, c["ode_steps"])
    mlp, mlp_s, mlp_res = train_mlp(tr0, tr1, c, seed)
    mlp_pred = integrate_mlp(mlp, te0, c["ode_steps"])
    metrics = {
        "d": d,
        "conv_mse": recovery_mse(conv_pred, te1),
        "mlp_mse": recovery_mse(mlp_pred, te1),
        "conv_params": snet.param_count(conv),
        "mlp_params": snet.param_count(mlp),
        "conv_train_s": conv_s,
        "mlp_train_s": mlp_s,
        "conv_final_loss": float(np.mean(conv_res.losses[-50:])),
        "mlp_final_loss": float(np.mean(mlp_res.losses[-50:])),
        "noise_floor_mse": c["noise_std"] ** 2,
    }
    metrics["param_ratio"] = metrics["mlp_params"] / metrics["conv_params"]
    if c["run_small"]:
        s0, s1, q0, q1 = _split(c["d_small"], c, seed)
        small, _, _ = train_conv(s0, s1, c, seed)
        metrics["conv_mse_small"] = recovery_mse(integrate_conv(small, q0, c["ode_steps"]), q1)
        metrics["conv_params_small"] = snet.param_count(small)
        metrics["conv_mse_gap"] = abs(metrics["conv_mse_small"] - metrics["conv_mse"])
    tables = {
        "position_error": (np.column_stack([np.arange(d), ((conv_pred - te1) ** 2).mean(axis=0),
                                            ((mlp_pred - te1) ** 2).mean(axis=0)]),
                           ["position", "conv_sq_err", "mlp_sq_err"]),
        "test_example": (np.column_stack([np.arange(d), te0[0], te1[0], conv_pred[0], mlp_pred[0]]),
                         ["position", "source", "target", "conv", "mlp"]),
        "loss_curves": (np.column_stack([np.arange(len(conv_res.losses)), conv_res.losses, mlp_res.losses]),
                        ["step", "conv_loss", "mlp_loss"]),
    }
    return ExperimentReport("fullrank", metrics, time.perf_counter() - t_start, seed=seed, config=c,
                            input_hash=data_hash(tr0[:4], tr1[:4]),
                            notes={"conv_config": CONV_CONFIG, "mlp_widths": [2 * d + 1, c["mlp_hidden"], d]},
                            tables=tables)
