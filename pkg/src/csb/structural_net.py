"""Small numpy networks with hand-written backward passes.

Two architectures are provided:

``Mlp``
    dense tanh network, the structure-blind baseline.
``Conv1dDrift``
    a causal, weight-shared 1-D convolution. Output position ``i`` reads input
    positions ``i-L .. i`` only (zero padding on the left), so its parameter
    count does not depend on the number of positions.

Both expose ``forward_cache`` / ``backward`` returning exact parameter and
input gradients, which the training loop in :func:`train` consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFiniteLoss, ShapeMismatch


class Mlp:
    """Fully connected network with tanh hidden layers and a linear head."""

    def __init__(self, widths, rng=None, dtype=np.float64, zero=False):
        self.widths = tuple(int(w) for w in widths)
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(0) if rng is None else rng
        for k in range(len(self.widths) - 1):
            fan_in, fan_out = self.widths[k], self.widths[k + 1]
            if zero:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.standard_normal((fan_in, fan_out)) * math.sqrt(1.0 / fan_in)
            self.params[f"W{k}"] = w.astype(self.dtype)
            self.params[f"b{k}"] = np.zeros(fan_out, dtype=self.dtype)

    @property
    def n_layers(self) -> int:
        return max(len(self.widths) - 1, 0)

    def forward_cache(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if self.n_layers == 0:
            return x, []
        if x.ndim != 2 or x.shape[1] != self.widths[0]:
            raise ShapeMismatch(f"expected (batch, {self.widths[0]}) input, got {x.shape}")
        acts = [x]
        h = x
        for k in range(self.n_layers):
            z = h @ self.params[f"W{k}"] + self.params[f"b{k}"]
            h = np.tanh(z) if k < self.n_layers - 1 else z
            acts.append(h)
        return h, acts

    def forward(self, x):
        return self.forward_cache(x)[0]

    def backward(self, cache, dout):
        acts = cache
        dout = np.asarray(dout, dtype=self.dtype)
        if dout.shape != acts[-1].shape:
            raise ShapeMismatch(f"cotangent shape {dout.shape} != output shape {acts[-1].shape}")
        grads = {}
        g = dout
        for k in reversed(range(self.n_layers)):
            if k < self.n_layers - 1:
                g = g * (1.0 - acts[k + 1] ** 2)
            grads[f"W{k}"] = acts[k].T @ g
            grads[f"b{k}"] = g.sum(axis=0)
            g = g @ self.params[f"W{k}"].T
        return grads, g


class Conv1dDrift:
    """Causal weight-shared convolution over a sequence of positions.

    Input is ``(batch, positions)`` or ``(batch, positions, channels)``; optional
    per-sample scalars (time, noise level) enter the first layer through their
    own weights and are therefore seen by every position. The output has
    ``out_channels`` values per position, squeezed to ``(batch, positions)``
    when ``out_channels == 1``.
    """

    def __init__(self, in_channels=1, hidden=32, left_context=1, n_scalars=1,
                 hidden_layers=1, out_channels=1, rng=None, dtype=np.float64):
        self.in_channels = int(in_channels)
        self.hidden = int(hidden)
        self.left_context = int(left_context)
        self.n_scalars = int(n_scalars)
        self.hidden_layers = int(hidden_layers)
        self.out_channels = int(out_channels)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(0) if rng is None else rng
        fan = self.window * self.in_channels + self.n_scalars
        H = self.hidden
        p = {
            "W_in": rng.standard_normal((self.window * self.in_channels, H)) / math.sqrt(fan),
            "W_s": rng.standard_normal((self.n_scalars, H)) / math.sqrt(fan),
            "b_in": np.zeros(H),
        }
        for k in range(self.hidden_layers):
            p[f"W_h{k}"] = rng.standard_normal((H, H)) / math.sqrt(H)
            p[f"b_h{k}"] = np.zeros(H)
        p["W_out"] = rng.standard_normal((H, self.out_channels)) / math.sqrt(H)
        p["b_out"] = np.zeros(self.out_channels)
        self.params = {k: v.astype(self.dtype) for k, v in p.items()}

    @property
    def window(self) -> int:
        return self.left_context + 1

    def config(self) -> dict:
        return {
            "in_channels": self.in_channels, "hidden": self.hidden,
            "left_context": self.left_context, "n_scalars": self.n_scalars,
            "hidden_layers": self.hidden_layers, "out_channels": self.out_channels,
        }

    def _unfold(self, x):
        # x: (B, D, C) -> (B, D, window*C); column block k holds position i - L + k
        B, D, C = x.shape
        L = self.left_context
        pad = np.zeros((B, D + L, C), dtype=x.dtype)
        pad[:, L:] = x
        cols = [pad[:, k:k + D] for k in range(self.window)]
        return np.concatenate(cols, axis=2)

    def _prep(self, x, scalars):
        x = np.asarray(x, dtype=self.dtype)
        squeeze_in = x.ndim == 2
        if squeeze_in:
            x = x[:, :, None]
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise ShapeMismatch(f"expected {self.in_channels} input channel(s), got shape {x.shape}")
        B = x.shape[0]
        if self.n_scalars:
            if scalars is None:
                raise ShapeMismatch("this network needs per-sample scalar inputs")
            s = np.asarray(scalars, dtype=self.dtype)
            s = np.broadcast_to(s.reshape(s.shape[0] if s.ndim else 1, -1), (B, self.n_scalars))
        else:
            s = np.zeros((B, 0), dtype=self.dtype)
        return x, s

    def forward_cache(self, x, scalars=None):
        x, s = self._prep(x, scalars)
        B, D, _ = x.shape
        u = self._unfold(x)
        H = self.hidden
        z = (u.reshape(B * D, -1) @ self.params["W_in"]).reshape(B, D, H)
        z += (s @ self.params["W_s"] + self.params["b_in"])[:, None, :]
        h = np.tanh(z, out=z).reshape(B * D, H)
        hs = [h]
        for k in range(self.hidden_layers):
            h = h @ self.params[f"W_h{k}"]
            h += self.params[f"b_h{k}"]
            h = np.tanh(h, out=h)
            hs.append(h)
        out = (h @ self.params["W_out"] + self.params["b_out"]).reshape(B, D, self.out_channels)
        if self.out_channels == 1:
            out = out[:, :, 0]
        return out, (u, s, hs, x.shape)

    def forward(self, x, scalars=None):
        return self.forward_cache(x, scalars)[0]

    def backward(self, cache, dout):
        u, s, hs, xshape = cache
        B, D, C = xshape
        g = np.asarray(dout, dtype=self.dtype)
        if self.out_channels == 1 and g.ndim == 2:
            g = g[:, :, None]
        if g.shape != (B, D, self.out_channels):
            raise ShapeMismatch(f"cotangent shape {np.shape(dout)} does not match output")
        H = self.hidden
        grads = {}
        g2 = g.reshape(B * D, self.out_channels)
        grads["W_out"] = hs[-1].T @ g2
        grads["b_out"] = g2.sum(axis=0)
        gh = g2 @ self.params["W_out"].T
        for k in reversed(range(self.hidden_layers)):
            gz = gh * (1.0 - hs[k + 1] ** 2)
            grads[f"W_h{k}"] = hs[k].T @ gz
            grads[f"b_h{k}"] = gz.sum(axis=0)
            gh = gz @ self.params[f"W_h{k}"].T
        gz = gh * (1.0 - hs[0] ** 2)
        F = u.shape[2]
        grads["W_in"] = u.reshape(-1, F).T @ gz
        gz_sum = gz.reshape(B, D, H).sum(axis=1)
        grads["W_s"] = s.T @ gz_sum
        grads["b_in"] = gz_sum.sum(axis=0)
        gu = (gz @ self.params["W_in"].T).reshape(B, D, F)  # window*C columns
        L = self.left_context
        gpad = np.zeros((B, D + L, C), dtype=self.dtype)
        for k in range(self.window):
            gpad[:, k:k + D] += gu[:, :, k * C:(k + 1) * C]
        dx = gpad[:, L:]
        if C == 1:
            dx = dx[:, :, 0]
        return grads, dx


def forward(net, x, *args):
    return net.forward(x, *args)


def backward(net, x, dout, *args):
    """Parameter gradients of ``<net(x), dout>``."""
    _, cache = net.forward_cache(x, *args)
    return net.backward(cache, dout)[0]


def param_count(net) -> int:
    if net is None:
        return 0
    return int(sum(p.size for p in net.params.values()))


def mlp_param_count(widths) -> int:
    """Parameter count of an Mlp with the given widths, without allocating it."""
    return int(sum((a + 1) * b for a, b in zip(widths[:-1], widths[1:])))


def conv_param_count(in_channels=1, hidden=32, left_context=1, n_scalars=1,
                     hidden_layers=1, out_channels=1) -> int:
    w = (left_context + 1) * in_channels
    return int((w + n_scalars + 1) * hidden + hidden_layers * (hidden + 1) * hidden
               + (hidden + 1) * out_channels)


def mse_and_grads(net, x, target, *args):
    """Mean squared error and its exact parameter gradients (NaN targets are skipped)."""
    out, cache = net.forward_cache(x, *args)
    target = np.asarray(target, dtype=out.dtype)
    diff = out - target
    # NaN targets mark entries excluded from the loss
    missing = np.isnan(target)
    count = diff.size
    if missing.any():
        diff = np.where(missing, 0.0, diff).astype(out.dtype)
        count = int(diff.size - missing.sum())
    loss = float(np.sum(diff ** 2)) / count
    grads, _ = net.backward(cache, (2.0 / count) * diff)
    return loss, grads


# -- optimisers --------------------------------------------------------------


class SGD:
    """Heavy-ball momentum SGD with a fixed step."""

    def __init__(self, params, lr=1e-2, momentum=0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads):
        for k, g in grads.items():
            v = self.velocity[k]
            v *= self.momentum
            v -= self.lr * g
            self.params[k] += v


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            self.params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name, params, lr, momentum=0.9):
    if name == "sgd":
        return SGD(params, lr=lr, momentum=momentum)
    if name == "adam":
        return Adam(params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r}")


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_val: float = math.inf
    steps: int = 0


def train(net, batch_fn: Callable[[np.random.Generator], tuple], steps: int, rng,
          optimizer="sgd", lr=1e-2, momentum=0.9, val_fn=None, val_every=0,
          clip=None) -> TrainResult:
    """Minimise mean squared error over batches produced by ``batch_fn(rng)``.

    ``batch_fn`` returns ``(inputs, target)`` or ``(inputs, target, *extra_args)``
    where extra args are forwarded to the network (e.g. time scalars). Raises
    NonFiniteLoss as soon as a batch loss stops being finite.
    """
    opt = make_optimizer(optimizer, net.params, lr, momentum)
    res = TrainResult()
    for step in range(steps):
        x, y, *extra = batch_fn(rng)
        loss, grads = mse_and_grads(net, x, y, *extra)
        if not math.isfinite(loss):
            res.losses.append(loss)
            raise NonFiniteLoss(step, res.losses)
        if clip is not None:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > clip:
                grads = {k: g * (clip / norm) for k, g in grads.items()}
        opt.step(grads)
        res.losses.append(loss)
        if val_fn is not None and val_every and ((step + 1) % val_every == 0 or step + 1 == steps):
            v = float(val_fn(net))
            res.val_losses.append((step + 1, v))
            res.best_val = min(res.best_val, v)
    res.steps = steps
    return res


def epoch_means(losses, epoch_len: int) -> list[float]:
    n = len(losses) // epoch_len
    return [float(np.mean(losses[k * epoch_len:(k + 1) * epoch_len])) for k in range(n)]


# -- (de)serialisation -------------------------------------------------------


def net_spec(net) -> dict:
    if isinstance(net, Mlp):
        return {"type": "mlp", "widths": list(net.widths)}
    if isinstance(net, Conv1dDrift):
        return {"type": "conv1d", **net.config()}
    raise TypeError(f"unsupported network {type(net).__name__}")


def net_from_spec(spec: dict, params: dict | None = None):
    spec = dict(spec)
    kind = spec.pop("type")
    if kind == "mlp":
        net = Mlp(spec["widths"])
    elif kind == "conv1d":
        net = Conv1dDrift(**spec)
    else:
        raise ValueError(f"unknown network type {kind!r}")
    if params is not None:
        for k in net.params:
            net.params[k] = np.asarray(params[k], dtype=net.dtype).reshape(net.params[k].shape)
    return net
