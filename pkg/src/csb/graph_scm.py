"""Causal graphs, structural causal models, sampling and interventions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import CycleDetected, InvalidGraph, InvalidMechanism, UnknownNode

MECHANISM_KINDS = ("linear", "sin_tanh_chain", "constant", "custom_table")


@dataclass(frozen=True)
class Dag:
    node_count: int
    edges: tuple[tuple[int, int], ...] = ()
    node_names: tuple[str, ...] | None = None

    def __post_init__(self):
        edges = tuple((int(p), int(c)) for p, c in self.edges)
        object.__setattr__(self, "edges", edges)
        if self.node_names is not None:
            object.__setattr__(self, "node_names", tuple(self.node_names))
            if len(self.node_names) != self.node_count:
                raise InvalidGraph("node_names length does not match node_count")
            if len(set(self.node_names)) != self.node_count:
                raise InvalidGraph("duplicate node names")
        seen = set()
        for p, c in edges:
            if not (0 <= p < self.node_count and 0 <= c < self.node_count):
                raise InvalidGraph(f"edge {(p, c)} out of range for {self.node_count} nodes")
            if p == c:
                raise InvalidGraph(f"self-edge on node {p}")
            if (p, c) in seen:
                raise InvalidGraph(f"duplicate edge {(p, c)}")
            seen.add((p, c))
        parents = [[] for _ in range(self.node_count)]
        children = [[] for _ in range(self.node_count)]
        for p, c in edges:
            parents[c].append(p)
            children[p].append(c)
        object.__setattr__(self, "_parents", tuple(tuple(sorted(ps)) for ps in parents))
        object.__setattr__(self, "_children", tuple(tuple(sorted(cs)) for cs in children))
        # raises CycleDetected
        object.__setattr__(self, "_layers", _layers(self))

    @classmethod
    def from_names(cls, names: Sequence[str], edges: Sequence[tuple[str, str]]) -> "Dag":
        idx = {n: i for i, n in enumerate(names)}
        try:
            e = [(idx[p], idx[c]) for p, c in edges]
        except KeyError as exc:
            raise UnknownNode(exc.args[0]) from None
        return cls(len(names), tuple(e), tuple(names))

    @property
    def names(self) -> tuple[str, ...]:
        if self.node_names is not None:
            return self.node_names
        return tuple(f"x{i}" for i in range(self.node_count))

    def parents(self, node: int) -> tuple[int, ...]:
        return self._parents[self._check(node)]

    def children(self, node: int) -> tuple[int, ...]:
        return self._children[self._check(node)]

    def index(self, node) -> int:
        """Resolve a node name or integer index."""
        if isinstance(node, (int, np.integer)) and not isinstance(node, bool):
            return self._check(int(node))
        if isinstance(node, str):
            if node in self.names:
                return self.names.index(node)
            if node.lstrip("-").isdigit():
                return self._check(int(node))
        raise UnknownNode(node)

    def _check(self, node: int) -> int:
        if not 0 <= node < self.node_count:
            raise UnknownNode(node)
        return node

    def topological_order(self) -> list[int]:
        return [i for layer in self._layers for i in layer]

    def without_incoming(self, targets) -> "Dag":
        targets = set(targets)
        return replace(self, edges=tuple(e for e in self.edges if e[1] not in targets))


def _layers(dag: Dag) -> list[list[int]]:
    indeg = [len(dag._parents[i]) for i in range(dag.node_count)]
    frontier = [i for i in range(dag.node_count) if indeg[i] == 0]
    layers = []
    placed = 0
    while frontier:
        layers.append(sorted(frontier))
        placed += len(frontier)
        nxt = []
        for n in frontier:
            for c in dag._children[n]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    nxt.append(c)
        frontier = nxt
    if placed != dag.node_count:
        raise CycleDetected([i for i in range(dag.node_count) if indeg[i] > 0])
    return layers


def topological_layers(dag: Dag) -> list[list[int]]:
    """Group nodes into layers; each node sits in the earliest layer after all its parents."""
    return [list(layer) for layer in dag._layers]


def check_acyclic(node_count: int, edges) -> None:
    """Raise CycleDetected if the edge list has no topological order."""
    Dag(node_count, tuple(edges))


def descendants(dag: Dag, node: int) -> set[int]:
    node = dag.index(node)
    out: set[int] = set()
    stack = list(dag.children(node))
    while stack:
        n = stack.pop()
        if n not in out:
            out.add(n)
            stack.extend(dag.children(n))
    return out


@dataclass(frozen=True)
class Mechanism:
    """Structural assignment for one node.

    ``linear`` uses one weight per parent followed by an intercept.
    ``sin_tanh_chain`` computes ``a*sin(self) + b*tanh(left)`` with coefficients
    ``(a, b)``, where the parents in index order are ``(left, self)``; with a
    single parent that parent is ``self`` and the left term is zero.
    ``custom_table`` looks up the nearest grid row of ``table_grid`` (one column
    per parent) and returns ``table_values``.
    """

    kind: str
    coefficients: tuple[float, ...] = ()
    noise_std: float = 0.0
    table_grid: tuple[tuple[float, ...], ...] | None = None
    table_values: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in MECHANISM_KINDS:
            raise InvalidMechanism(f"unknown mechanism kind {self.kind!r}")
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if not np.isfinite(self.noise_std) or self.noise_std < 0:
            raise InvalidMechanism("noise_std must be a nonnegative finite number")
        if self.kind == "constant":
            if self.noise_std != 0:
                raise InvalidMechanism("constant mechanism must have zero noise")
            if len(self.coefficients) != 1:
                raise InvalidMechanism("constant mechanism takes exactly one coefficient")
        if self.kind == "sin_tanh_chain" and len(self.coefficients) != 2:
            raise InvalidMechanism("sin_tanh_chain takes two coefficients (sin, tanh)")
        if self.kind == "custom_table":
            if not self.table_grid or self.table_values is None:
                raise InvalidMechanism("custom_table needs table_grid and table_values")
            if len(self.table_grid) != len(self.table_values):
                raise InvalidMechanism("table_grid and table_values differ in length")

    @classmethod
    def constant(cls, value: float) -> "Mechanism":
        return cls("constant", (float(value),), 0.0)

    def check_arity(self, n_parents: int) -> None:
        if self.kind == "linear" and len(self.coefficients) != n_parents + 1:
            raise InvalidMechanism(
                f"linear mechanism has {len(self.coefficients)} coefficients "
                f"for {n_parents} parents (expected {n_parents + 1})"
            )
        if self.kind == "constant" and n_parents != 0:
            raise InvalidMechanism("constant mechanism cannot have parents")
        if self.kind == "sin_tanh_chain" and n_parents not in (1, 2):
            raise InvalidMechanism("sin_tanh_chain needs one or two parents")
        if self.kind == "custom_table":
            widths = {len(r) for r in self.table_grid}
            if widths != {n_parents}:
                raise InvalidMechanism("custom_table grid width does not match parent count")

    def evaluate(self, parents: np.ndarray, noise: np.ndarray) -> np.ndarray:
        """Apply the mechanism to an (n, p) parent matrix plus standard-normal ``noise``."""
        n = noise.shape[0]
        if self.kind == "constant":
            return np.full(n, self.coefficients[0])
        if self.kind == "linear":
            w = np.asarray(self.coefficients[:-1])
            base = parents @ w + self.coefficients[-1] if w.size else np.full(n, self.coefficients[-1])
        elif self.kind == "sin_tanh_chain":
            a, b = self.coefficients
            # parents arrive in index order: (left neighbour, self), or just (self)
            own = parents[:, -1]
            left = parents[:, 0] if parents.shape[1] > 1 else 0.0
            base = a * np.sin(own) + b * np.tanh(left)
        else:
            grid = np.asarray(self.table_grid, dtype=float)
            d2 = ((parents[:, None, :] - grid[None, :, :]) ** 2).sum(-1)
            base = np.asarray(self.table_values, dtype=float)[np.argmin(d2, axis=1)]
        return base + self.noise_std * noise

    def to_json(self) -> dict:
        out = {"kind": self.kind, "coefficients": list(self.coefficients), "noise_std": self.noise_std}
        if self.kind == "custom_table":
            out["table_grid"] = [list(r) for r in self.table_grid]
            out["table_values"] = list(self.table_values)
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "Mechanism":
        grid = obj.get("table_grid")
        values = obj.get("table_values")
        return cls(
            kind=obj["kind"],
            coefficients=tuple(obj.get("coefficients", ())),
            noise_std=float(obj.get("noise_std", 0.0)),
            table_grid=tuple(tuple(r) for r in grid) if grid is not None else None,
            table_values=tuple(values) if values is not None else None,
        )


@dataclass(frozen=True)
class Scm:
    dag: Dag
    mechanisms: tuple[Mechanism, ...]

    def __post_init__(self):
        object.__setattr__(self, "mechanisms", tuple(self.mechanisms))
        if len(self.mechanisms) != self.dag.node_count:
            raise InvalidMechanism("need exactly one mechanism per node")
        for i, m in enumerate(self.mechanisms):
            m.check_arity(len(self.dag.parents(i)))

    @property
    def names(self) -> tuple[str, ...]:
        return self.dag.names

    def to_json(self) -> dict:
        names = self.names
        return {
            "nodes": [
                {
                    "name": names[i],
                    "parents": [names[p] for p in self.dag.parents(i)],
                    "mechanism": self.mechanisms[i].to_json(),
                }
                for i in range(self.dag.node_count)
            ]
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Scm":
        nodes = obj["nodes"]
        names = [n["name"] for n in nodes]
        edges = [(p, n["name"]) for n in nodes for p in n.get("parents", [])]
        dag = Dag.from_names(names, edges)
        mechs = []
        for i, n in enumerate(nodes):
            mech = Mechanism.from_json(n["mechanism"])
            # the json parent list fixes the coefficient order; Dag sorts parents by index
            declared = [names.index(p) for p in n.get("parents", [])]
            mechs.append(_reorder(mech, declared, list(dag.parents(i))))
        return cls(dag, tuple(mechs))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "Scm":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _reorder(mech: Mechanism, declared: list[int], canonical: list[int]) -> Mechanism:
    if declared == canonical:
        return mech
    perm = [declared.index(p) for p in canonical]
    if mech.kind == "linear":
        w = [mech.coefficients[k] for k in perm] + [mech.coefficients[-1]]
        return replace(mech, coefficients=tuple(w))
    if mech.kind == "custom_table":
        grid = tuple(tuple(r[k] for k in perm) for r in mech.table_grid)
        return replace(mech, table_grid=grid)
    if mech.kind == "sin_tanh_chain":
        raise InvalidMechanism("sin_tanh_chain parents must be listed in index order (left, self)")
    return mech


@dataclass(frozen=True)
class Dataset:
    """An (n, d) sample matrix whose columns follow the node order of an SCM."""

    samples: np.ndarray
    names: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if not np.all(np.isfinite(arr)):
            raise ValueError("dataset contains non-finite entries")
        object.__setattr__(self, "samples", arr)
        if self.names is not None and len(self.names) != arr.shape[1]:
            raise ValueError("names do not match column count")

    def __array__(self, dtype=None, copy=None):
        return self.samples if dtype is None else self.samples.astype(dtype)

    @property
    def shape(self):
        return self.samples.shape

    def column(self, name_or_index) -> np.ndarray:
        if isinstance(name_or_index, str):
            return self.samples[:, self.names.index(name_or_index)]
        return self.samples[:, name_or_index]


def node_rng(seed: int, node: int) -> np.random.Generator:
    """Independent stream for (master seed, node index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(node)])))


def sample(scm: Scm, n: int, seed: int) -> Dataset:
    """Ancestral sampling; node i draws its noise from the stream ``node_rng(seed, i)``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    d = scm.dag.node_count
    out = np.empty((n, d))
    for i in scm.dag.topological_order():
        mech = scm.mechanisms[i]
        pa = list(scm.dag.parents(i))
        noise = node_rng(seed, i).standard_normal(n) if mech.noise_std > 0 else np.zeros(n)
        out[:, i] = mech.evaluate(out[:, pa], noise)
    return Dataset(out, scm.names)


def intervene(scm: Scm, assignments: Mapping) -> Scm:
    """Hard intervention: clamp targets to constants and cut their incoming edges."""
    resolved = {scm.dag.index(k): float(v) for k, v in assignments.items()}
    mechs = list(scm.mechanisms)
    for node, value in resolved.items():
        mechs[node] = Mechanism.constant(value)
    return Scm(scm.dag.without_incoming(resolved), tuple(mechs))


# -- SCM families used by the experiments ------------------------------------


def confounder_scm(noise_std: float = 0.3) -> Scm:
    """Fork Y <- X -> Z with X ~ N(0,1), Y = 2X + e, Z = 2X + e."""
    dag = Dag.from_names(["X", "Y", "Z"], [("X", "Y"), ("X", "Z")])
    return Scm(
        dag,
        (
            Mechanism("linear", (0.0,), 1.0),
            Mechanism("linear", (2.0, 0.0), noise_std),
            Mechanism("linear", (2.0, 0.0), noise_std),
        ),
    )


def linear_chain_scm(d: int, weight: float = 0.8, intercept: float = 0.0, noise_std: float = 0.6) -> Scm:
    """Markov chain x0 -> x1 -> ... with stationary-ish linear Gaussian links."""
    dag = Dag(d, tuple((i - 1, i) for i in range(1, d)))
    mechs = [Mechanism("linear", (intercept,), 1.0)]
    mechs += [Mechanism("linear", (weight, intercept), noise_std) for _ in range(1, d)]
    return Scm(dag, tuple(mechs))


def fullrank_chain_scm(d: int, noise_std: float = 0.1) -> Scm:
    """Two-slice chain: roots a_i ~ N(0,1), b_i = sin(a_i) + 0.5 tanh(a_{i-1}) + e.

    Nodes 0..d-1 are the source slice, d..2d-1 the target slice.
    """
    edges = []
    for i in range(d):
        edges.append((i, d + i))
        if i > 0:
            edges.append((i - 1, d + i))
    names = tuple(f"a{i}" for i in range(d)) + tuple(f"b{i}" for i in range(d))
    dag = Dag(2 * d, tuple(edges), names)
    mechs = [Mechanism("linear", (0.0,), 1.0)] * d
    mechs += [Mechanism("sin_tanh_chain", (1.0, 0.5), noise_std)] * d
    return Scm(dag, tuple(mechs))


def sin_tanh_step(x0: np.ndarray, noise_std: float = 0.0, rng=None) -> np.ndarray:
    """Vectorised chain map over the last axis, zero-padding the left boundary."""
    left = np.zeros_like(x0)
    left[..., 1:] = x0[..., :-1]
    out = np.sin(x0) + 0.5 * np.tanh(left)
    if noise_std > 0:
        out = out + noise_std * rng.standard_normal(out.shape)
    return out
