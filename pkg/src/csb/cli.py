"""Command-line entry point: ``csb <fit|counterfactual|sample|calibrate-baseline|experiment>``."""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import CsbError

SYNOPSIS = """\
usage: csb fit --scm scm.json --target t.csv [--source s.csv] --out model/ [--sigma S] [--steps K]
       csb counterfactual --model dir --fact row.csv [--do "Y=3,..."] [--sigma S] [--steps K] [--out f.csv]
       csb sample --scm scm.json -n N [--out f.csv|f.bin]
       csb calibrate-baseline [--dref 50] [--trials 20] [--out f.json]
       csb experiment <name ...|all> [--config cfg.json] [--out dir] [--large] [--jobs J]
common: --seed N (default 42)
exit codes: 0 ok, 1 usage error, 2 runtime error"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)

    def exit(self, status=0, message=None):
        # --help lands here with status 0
        if message:
            sys.stderr.write(message)
        raise SystemExit(status)


def parse_do(expr: str | None) -> dict[str, float]:
    """``"Y=3,Z=-1.5"`` -> {"Y": 3.0, "Z": -1.5}; empty or None gives {}."""
    out = {}
    if not expr or not expr.strip():
        return out
    for part in expr.split(","):
        name, sep, value = part.partition("=")
        name = name.strip()
        if not sep or not name:
            raise UsageError(f"bad do term {part!r}; expected NAME=FLOAT")
        try:
            out[name] = float(value)
        except ValueError:
            raise UsageError(f"bad do value in {part!r}; expected NAME=FLOAT") from None
        if not np.isfinite(out[name]):
            raise UsageError(f"do value for {name} must be finite")
    return out


def _load_json(path):
    if path is None:
        return None
    with open(path) as fh:
        return json.load(fh)


def _write_matrix(path, matrix, names):
    from .formats import write_csv, write_f32

    if path is None:
        w = sys.stdout
        w.write(",".join(names) + "\n")
        for row in np.atleast_2d(matrix):
            w.write(",".join(repr(float(v)) for v in row) + "\n")
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".bin":
        write_f32(path, matrix)
    else:
        write_csv(path, matrix, names)


def _columns(data, names, scm):
    """Reorder loaded columns to the SCM node order when headers are present."""
    if names is None:
        if data.shape[1] != scm.dag.node_count:
            raise UsageError(f"data has {data.shape[1]} columns, graph has {scm.dag.node_count} nodes")
        return data
    missing = [n for n in scm.names if n not in names]
    if missing:
        raise UsageError(f"data is missing columns {missing}")
    return data[:, [names.index(n) for n in scm.names]]


# -- subcommands -----------------------------------------------------------------


def cmd_fit(args) -> int:
    from .bridge_core import DiffusionSchedule, TrainConfig
    from .csf import fit
    from .formats import load_matrix
    from .graph_scm import Scm, sample

    scm = Scm.load(args.scm)
    cfg = TrainConfig.from_json(_load_json(args.config) or {})
    if args.steps is not None:
        cfg.steps = args.steps
    if args.sigma is not None:
        cfg.sigma = args.sigma
    cfg.seed = args.seed
    if args.target:
        data1 = _columns(*load_matrix(args.target), scm)
    else:
        data1 = sample(scm, args.n, args.seed).samples
    if args.source:
        data0 = _columns(*load_matrix(args.source), scm)
    else:
        data0 = np.random.default_rng([args.seed, 1]).standard_normal(data1.shape)
    model = fit(scm.dag, data0, data1, DiffusionSchedule(cfg.sigma, args.schedule), cfg,
                seed=args.seed, jobs=args.jobs)
    model.save(args.out)
    print(json.dumps({"model": str(args.out), "nodes": model.d, "layers": len(model.layers),
                      "solvers": model.meta.get("solver")}))
    return 0


def cmd_counterfactual(args) -> int:
    from .csf import CsbModel
    from .formats import load_matrix
    from .sde_engine import TimeGrid, hybrid_counterfactual

    model = CsbModel.load(args.model)
    do = parse_do(args.do)
    bad = [k for k in do if k not in model.dag.names]
    if bad:
        raise UsageError(f"--do names {bad} are not nodes of the model ({', '.join(model.dag.names)})")
    data, names = load_matrix(args.fact)
    if names is not None:
        unknown = [n for n in names if n not in model.dag.names]
        if unknown:
            raise UsageError(f"fact columns {unknown} are not nodes of the model")
        data = data[:, [names.index(n) for n in model.dag.names]]
    sigma = model.schedule.sigma if args.sigma is None else args.sigma
    grid = TimeGrid(args.steps or 200)
    if args.draws < 1:
        raise UsageError("--draws must be at least 1")
    reps = np.repeat(np.atleast_2d(data), args.draws, axis=0)
    out = hybrid_counterfactual(model, reps, do, grid, sigma_gen=sigma, seed=args.seed)
    out = out.reshape(-1, args.draws, out.shape[1]).mean(axis=1)
    _write_matrix(args.out, out, list(model.dag.names))
    return 0


def cmd_sample(args) -> int:
    from .graph_scm import Scm, intervene, sample

    scm = Scm.load(args.scm)
    do = parse_do(args.do)
    bad = [k for k in do if k not in scm.names]
    if bad:
        raise UsageError(f"--do names {bad} are not nodes of the SCM ({', '.join(scm.names)})")
    if do:
        scm = intervene(scm, do)
    ds = sample(scm, args.n, args.seed)
    _write_matrix(args.out, ds.samples, list(scm.names))
    return 0


def cmd_calibrate(args) -> int:
    from . import baseline_extrapolation as be

    model = be.calibrate(args.dref, args.trials, args.seed, args.iterations)
    doc = be.report(model)
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text)
    return 0


def _run_one(name, seed, cfg, large, out):
    from .experiments import run

    report = run(name, seed=seed, cfg=cfg, large=large)
    path = report.write(out)
    return name, str(path), report.metrics


def cmd_experiment(args) -> int:
    from .experiments import REGISTRY

    names = list(REGISTRY) if args.names == ["all"] else args.names
    unknown = [n for n in names if n not in REGISTRY]
    if unknown:
        raise UsageError(f"unknown experiment(s) {unknown}; choose from {', '.join(REGISTRY)} or all")
    cfg = _load_json(args.config)
    out_root = Path(args.out)

    def out_dir(name):
        return out_root / name if len(names) > 1 else out_root

    def cfg_for(name):
        return cfg.get(name) if cfg and len(names) > 1 else cfg

    jobs = [(n, args.seed, cfg_for(n), args.large, out_dir(n)) for n in names]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_run_one, *zip(*jobs)))
    else:
        results = [_run_one(*j) for j in jobs]
    for name, path, metrics in results:
        print(json.dumps({"experiment": name, "report": path, "metrics": metrics}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="csb", description="Causal Schrodinger bridges over a DAG.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, default=42)
        return sp

    f = common(sub.add_parser("fit", help="fit local bridges for every node"))
    f.add_argument("--scm", required=True, help="SCM definition (JSON)")
    f.add_argument("--target", help="target samples (CSV or binary); sampled from --scm if omitted")
    f.add_argument("--source", help="source samples; independent N(0,1) if omitted")
    f.add_argument("-n", type=int, default=5000, help="rows to sample when --target is omitted")
    f.add_argument("--out", required=True)
    f.add_argument("--sigma", type=float)
    f.add_argument("--steps", type=int, help="training steps for neural nodes")
    f.add_argument("--schedule", choices=["constant", "bridge_scaled"], default="constant")
    f.add_argument("--config", help="training config (JSON)")
    f.add_argument("--jobs", type=int, default=1)
    f.set_defaults(func=cmd_fit)

    c = common(sub.add_parser("counterfactual", help="abduct, intervene, predict"))
    c.add_argument("--model", required=True)
    c.add_argument("--fact", required=True, help="factual rows (CSV with node-name header)")
    c.add_argument("--do", default="", help='interventions, e.g. "Y=3,Z=0"')
    c.add_argument("--sigma", type=float, help="generation noise; defaults to the model's sigma")
    c.add_argument("--steps", type=int, help="time-grid steps (default 200)")
    c.add_argument("--draws", type=int, default=1, help="average this many stochastic draws per row")
    c.add_argument("--out")
    c.set_defaults(func=cmd_counterfactual)

    s = common(sub.add_parser("sample", help="ancestral samples from an SCM"))
    s.add_argument("--scm", required=True)
    s.add_argument("-n", type=int, required=True)
    s.add_argument("--do", default="", help="optional hard interventions")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sample)

    b = common(sub.add_parser("calibrate-baseline", help="time a dense inversion and extrapolate"))
    b.add_argument("--dref", type=int, default=50)
    b.add_argument("--trials", type=int, default=20)
    b.add_argument("--iterations", type=int, default=100)
    b.add_argument("--out")
    b.set_defaults(func=cmd_calibrate)

    e = common(sub.add_parser("experiment", help="run a benchmark and write its report"))
    e.add_argument("names", nargs="+", metavar="name")
    e.add_argument("--config", help="JSON overrides; keyed by experiment name when running several")
    e.add_argument("--out", default="runs")
    e.add_argument("--large", action="store_true", help="d=10^5 where supported")
    e.add_argument("--jobs", type=int, default=1, help="run independent experiments in parallel")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
        return args.func(args)
    except UsageError as exc:
        print(f"csb: error: {exc}\n{SYNOPSIS}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    except (CsbError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"csb: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
