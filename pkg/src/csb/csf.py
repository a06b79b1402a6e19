"""Causal sequential fitting: one pass over topological layers, one local bridge per node."""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from . import structural_net as snet
from .bridge_core import (ConditionalGaussian, DiffusionSchedule, GaussianBridge, LocalBridge,
                          NeuralDrift, TrainConfig, choose_solver, train_local_bridge)
from .errors import CsbError, DimensionMismatch, NodeError
from .formats import read_f32, write_f32
from .graph_scm import Dag, Scm, node_rng, sample, topological_layers
from .sde_engine import TimeGrid, structural_abduction


def node_seed(seed: int, node: int) -> int:
    """Deterministic per-node training seed derived from (master seed, node)."""
    return int(np.random.SeedSequence([int(seed), int(node)]).generate_state(1)[0])


def array_hash(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()[:16]


@dataclass
class CsbModel:
    """A fitted factorised bridge: one LocalBridge per node plus the shared schedule."""

    dag: Dag
    bridges: list
    schedule: DiffusionSchedule = field(default_factory=DiffusionSchedule)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layers = topological_layers(self.dag)
        if len(self.bridges) != self.dag.node_count:
            raise DimensionMismatch(f"{len(self.bridges)} bridges for {self.dag.node_count} nodes")
        for i, b in enumerate(self.bridges):
            if b is not None and tuple(b.parents) != self.dag.parents(i):
                raise DimensionMismatch(f"bridge {i} parents {b.parents} != graph parents {self.dag.parents(i)}")
        self._pack()

    @property
    def fitted(self) -> bool:
        return all(b is not None for b in self.bridges)

    @property
    def d(self) -> int:
        return self.dag.node_count

    def _pack(self):
        """Stack all Gaussian nodes into sparse linear maps so the drift is one vectorised call."""
        self._gauss = [i for i, b in enumerate(self.bridges) if b is not None and b.kind == "gaussian"]
        self._other = [i for i, b in enumerate(self.bridges) if b is not None and b.kind != "gaussian"]
        if not self._gauss:
            return
        rows, cols, v0, v1 = [], [], [], []
        c0, c1, s0, s1 = [], [], [], []
        for j, i in enumerate(self._gauss):
            sol = self.bridges[i].solver
            for p, w0, w1 in zip(self.bridges[i].parents, sol.w0, sol.w1):
                rows.append(p)
                cols.append(j)
                v0.append(w0)
                v1.append(w1)
            c0.append(sol.c0)
            c1.append(sol.c1)
            s0.append(sol.s0)
            s1.append(sol.s1)
        shape = (self.d, len(self._gauss))
        self._W0 = sparse.csr_matrix((v0, (rows, cols)), shape=shape)
        self._W1 = sparse.csr_matrix((v1, (rows, cols)), shape=shape)
        self._c0, self._c1 = np.array(c0), np.array(c1)
        self._s0, self._s1 = np.array(s0), np.array(s1)

    def drift(self, X, t, sigma=None):
        """Joint drift; column i depends only on column i and its parents' columns."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        sig = self.schedule.sigma if sigma is None else sigma
        out = np.zeros_like(X)
        if self._gauss:
            m0 = np.asarray(X @ self._W0) + self._c0
            m1 = np.asarray(X @ self._W1) + self._c1
            gb = GaussianBridge(m0, self._s0, m1, self._s1, float(sig))
            out[:, self._gauss] = gb.drift(X[:, self._gauss], t)
        for i in self._other:
            b = self.bridges[i]
            pa = X[:, list(b.parents)] if b.parents else None
            out[:, i] = b.drift(X[:, i], pa, t, sigma=sig)
        return out

    def sample_source(self, n, seed=0):
        """Draw from the fitted source laws, ancestrally."""
        X = np.zeros((n, self.d))
        for i in self.dag.topological_order():
            b = self.bridges[i]
            pa = X[:, list(b.parents)] if b.parents else None
            X[:, i] = b.sample_source(pa, n, node_rng(seed, i))
        return X

    def control_energy(self, x0, grid: TimeGrid | None = None, sigma=None, seed=0, per_node=False):
        """Monte-Carlo E[int 1/2 |b|^2 dt] along forward paths started at ``x0``."""
        grid = grid or TimeGrid(100)
        sig = self.schedule.sigma if sigma is None else sigma
        rng = np.random.default_rng(seed)
        g = self.schedule.g_fn(sig)
        x = np.array(x0, dtype=float)
        acc = np.zeros(x.shape)
        for k, t in enumerate(grid.t[:-1]):
            b = self.drift(x, t, sigma=sig)
            acc += 0.5 * grid.dt * b * b
            x = x + b * grid.dt
            gk = g(t)
            if gk:
                x = x + gk * np.sqrt(grid.dt) * rng.standard_normal(x.shape)
        per = acc.mean(axis=0)
        return per if per_node else float(per.sum())

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        out = Path(path)
        out.mkdir(parents=True, exist_ok=True)
        nodes = []
        for i, b in enumerate(self.bridges):
            entry = {"node": i, "parents": list(b.parents), "kind": b.kind}
            if b.kind == "gaussian":
                entry["solver"] = b.solver.to_json()
            else:
                s = b.solver
                files = {}
                for name, arr in s.net.params.items():
                    fname = f"node{i}_{name}.bin"
                    write_f32(out / fname, arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr)
                    files[name] = fname
                write_f32(out / f"node{i}_source.bin", s.source)
                entry["solver"] = {
                    "net": snet.net_spec(s.net), "weights": files, "n_parents": s.n_parents,
                    "shift": s.shift.tolist(), "scale": s.scale.tolist(), "out_scale": s.out_scale,
                    "sigma_train": s.sigma_train, "source": f"node{i}_source.bin",
                }
            nodes.append(entry)
        doc = {
            "format": "csb-model/1",
            "dag": {"node_count": self.d, "edges": [list(e) for e in self.dag.edges],
                    "node_names": list(self.dag.names)},
            "layers": self.layers,
            "schedule": {"sigma": self.schedule.sigma, "kind": self.schedule.kind},
            "meta": _jsonable(self.meta),
            "nodes": nodes,
        }
        (out / "model.json").write_text(json.dumps(doc, indent=1))

    @classmethod
    def load(cls, path) -> "CsbModel":
        root = Path(path)
        doc = json.loads((root / "model.json").read_text())
        g = doc["dag"]
        dag = Dag(g["node_count"], tuple(tuple(e) for e in g["edges"]), tuple(g["node_names"]))
        schedule = DiffusionSchedule(**doc["schedule"])
        bridges = []
        for entry in doc["nodes"]:
            s = entry["solver"]
            if entry["kind"] == "gaussian":
                solver = ConditionalGaussian.from_json(s)
            else:
                params = {k: read_f32(root / f) for k, f in s["weights"].items()}
                net = snet.net_from_spec(s["net"], params)
                solver = NeuralDrift(net, s["n_parents"], np.array(s["shift"]), np.array(s["scale"]),
                                     s["out_scale"], s["sigma_train"], True,
                                     read_f32(root / s["source"])[:, 0])
            bridges.append(LocalBridge(entry["node"], tuple(entry["parents"]), solver, schedule))
        return cls(dag, bridges, schedule, doc.get("meta", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


# -- fitting --------------------------------------------------------------------


def _as_array(data) -> np.ndarray:
    return np.atleast_2d(np.asarray(data, dtype=float))


def fit(dag: Dag, data0, data1, schedule: DiffusionSchedule | None = None, cfg: TrainConfig | None = None,
        seed: int = 42, jobs: int = 1, order: Callable[[list], list] | None = None,
        audit: bool = False) -> CsbModel:
    """Fit every local bridge exactly once, layer by layer.

    Parent trajectories for neural nodes are obtained by running the already
    fitted parent bridges backwards (sigma = 0) from each target row, so the
    path ends at that row's parent values. Paths are shared by all children
    and dropped once the last child has been fitted. ``order`` permutes the
    nodes inside each layer (used to check order independence); ``jobs > 1``
    trains a layer's nodes on a thread pool.
    """
    cfg = cfg or TrainConfig()
    schedule = schedule or DiffusionSchedule(cfg.sigma, cfg.schedule)
    X0, X1 = _as_array(data0), _as_array(data1)
    d = dag.node_count
    if X0.shape[1] != d or X1.shape[1] != d:
        raise DimensionMismatch(f"datasets have {X0.shape[1]} and {X1.shape[1]} columns, graph has {d} nodes")
    layers = topological_layers(dag)
    kinds = {}
    for i in range(d):
        pa = list(dag.parents(i))
        try:
            kinds[i] = choose_solver(X0[:, i], X0[:, pa], X1[:, i], X1[:, pa], cfg)
        except CsbError as exc:
            raise NodeError(i, exc) from exc
    needs_path = {i: any(kinds[c] == "neural" for c in dag.children(i)) for i in range(d)}
    # abducting a node's path reads its parents' paths, so ancestors need them too
    for i in reversed(dag.topological_order()):
        if needs_path[i]:
            for p in dag.parents(i):
                needs_path[p] = True
    pending_children = {i: len(dag.children(i)) for i in range(d)}
    path_grid = TimeGrid(cfg.path_steps)
    paths: dict[int, np.ndarray] = {}
    bridges: list = [None] * d
    meta = {"seed": seed, "train_calls": [0] * d, "layer_seconds": [], "node_seeds": {},
            "solver": {}, "path_hashes": {}, "layers": layers, "config": cfg.to_json()}

    def fit_node(i):
        pa = dag.parents(i)
        node_cfg = TrainConfig.from_json({**cfg.to_json(), "solver": kinds[i], "seed": node_seed(seed, i)})
        pp = None
        if kinds[i] == "neural" and pa:
            pp = np.stack([paths[p] for p in pa], axis=2)
        try:
            b = train_local_bridge(i, X0, X1, pp, schedule, node_cfg, pa,
                                   rng=np.random.default_rng(node_cfg.seed))
        except CsbError as exc:
            raise NodeError(i, exc) from exc
        return i, b, node_cfg.seed

    for layer in layers:
        t0 = time.perf_counter()
        todo = order(list(layer)) if order else list(layer)
        if audit:
            for i in todo:
                if kinds[i] == "neural":
                    meta["path_hashes"][i] = {p: array_hash(paths[p]) for p in dag.parents(i)}
        if jobs > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(fit_node, todo))
        else:
            results = [fit_node(i) for i in todo]
        for i, b, s in results:
            bridges[i] = b
            meta["train_calls"][i] += 1
            meta["node_seeds"][i] = s
            meta["solver"][i] = b.kind
        # trajectories for the next layer, then release parents no longer needed
        for i in layer:
            if needs_path[i]:
                pa = dag.parents(i)
                ptraj = np.stack([paths[p] for p in pa], axis=2) if pa else None
                tr = structural_abduction(bridges[i], X1[:, i], ptraj, path_grid)
                paths[i] = tr.forward_states()
            for p in dag.parents(i):
                pending_children[p] -= 1
                if pending_children[p] == 0:
                    paths.pop(p, None)
        meta["layer_seconds"].append(time.perf_counter() - t0)
    meta["layer_passes"] = len(layers)
    return CsbModel(dag, bridges, schedule, meta)


def fit_scm_pair(scm: Scm, n: int, seed: int = 42, schedule=None, cfg=None, jobs: int = 1,
                 source: str = "gaussian") -> tuple[CsbModel, np.ndarray, np.ndarray]:
    """Fit a model transporting a source law to samples of ``scm``.

    ``source='gaussian'`` uses independent N(0, 1) columns as the latent source.
    """
    data1 = sample(scm, n, seed).samples
    rng = np.random.default_rng([seed, 1])
    data0 = rng.standard_normal(data1.shape)
    model = fit(scm.dag, data0, data1, schedule, cfg, seed=seed, jobs=jobs)
    return model, data0, data1


def fit_wall_time_by_dimension(family: Callable[[int], Scm], dims: Sequence[int], cfg: TrainConfig | None = None,
                               n: int = 1000, seed: int = 42, repeats: int = 1) -> list[tuple[int, float]]:
    """Wall-clock of ``fit`` per dimension (best of ``repeats``; data generation excluded)."""
    cfg = cfg or TrainConfig()
    out = []
    for d in dims:
        scm = family(int(d))
        data1 = sample(scm, n, seed).samples
        data0 = np.random.default_rng([seed, int(d)]).standard_normal(data1.shape)
        best = np.inf
        for _ in range(max(1, repeats)):
            t0 = time.perf_counter()
            fit(scm.dag, data0, data1, DiffusionSchedule(cfg.sigma, cfg.schedule), cfg, seed=seed)
            best = min(best, time.perf_counter() - t0)
        out.append((int(d), float(best)))
    return out


def loglog_slope(pairs) -> float:
    d = np.log([p[0] for p in pairs])
    t = np.log([p[1] for p in pairs])
    return float(np.polyfit(d, t, 1)[0])


# -- weight-shared chain model -----------------------------------------------------


@dataclass
class ChainCsbModel:
    """Markov chain of identical local mechanisms served by one causal Conv1dDrift.

    The drift of coordinate i reads coordinates i-L..i of the state only
    (left zero padding), i.e. node i and its chain parents. Every local
    bridge shares the same weights, so one network call evaluates all of them.
    """

    net: snet.Conv1dDrift
    d: int
    schedule: DiffusionSchedule = field(default_factory=DiffusionSchedule)
    out_scale: float = 1.0
    meta: dict = field(default_factory=dict)
    fitted: bool = True

    @property
    def dag(self) -> Dag:
        L = self.net.left_context
        return Dag(self.d, tuple((j, i) for i in range(self.d) for j in range(max(0, i - L), i)))

    def drift(self, X, t, sigma=None):
        X = np.atleast_2d(np.asarray(X, dtype=self.net.dtype))
        ts = np.full((X.shape[0], 1), t, dtype=self.net.dtype)
        return self.net.forward(X, ts).astype(float) * self.out_scale


def fit_chain(data0, data1, schedule: DiffusionSchedule | None = None, cfg: TrainConfig | None = None,
              seed: int = 42, hidden: int = 32, left_context: int = 1, dtype=np.float32) -> ChainCsbModel:
    """Joint I-CFM training of the shared chain drift on full-length rows."""
    cfg = cfg or TrainConfig()
    schedule = schedule or DiffusionSchedule(cfg.sigma, cfg.schedule)
    X0, X1 = _as_array(data0), _as_array(data1)
    n0, d = X0.shape
    n1 = X1.shape[0]
    rng = np.random.default_rng(seed)
    net = snet.Conv1dDrift(1, hidden, left_context, 1, rng=rng, dtype=dtype)
    sig = schedule.sigma
    v_scale = float(np.mean(X1.std(axis=0) + X0.std(axis=0))) or 1.0

    def batch(r):
        a = X0[r.integers(0, n0, cfg.batch)]
        b = X1[r.integers(0, n1, cfg.batch)]
        t = r.random(cfg.batch)
        tt = t[:, None]
        xt = (1 - tt) * a + tt * b + sig * np.sqrt(tt * (1 - tt)) * r.standard_normal(a.shape)
        return xt.astype(dtype), ((b - a) / v_scale).astype(dtype), tt.astype(dtype)

    t0 = time.perf_counter()
    res = snet.train(net, batch, cfg.n_steps(n1), rng, optimizer=cfg.optimizer, lr=cfg.lr,
                     momentum=cfg.momentum, clip=cfg.clip)
    meta = {"seed": seed, "train_seconds": time.perf_counter() - t0, "losses": res.losses[-10:],
            "train_calls": 1, "params": snet.param_count(net)}
    return ChainCsbModel(net, d, schedule, v_scale, meta)
