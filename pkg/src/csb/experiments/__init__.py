"""Experiment runners. Each takes (seed, cfg) and returns an ExperimentReport."""

from .bench1000 import run_benchmark_1000d
from .confounder import run_confounder, run_misspecified
from .fullrank import run_fullrank_audit
from .kl_check import run_kl_additivity
from .manifold import run_manifold_recovery
from .tunneling import run_tunneling

REGISTRY = {
    "confounder": run_confounder,
    "misspecified": run_misspecified,
    "tunneling": run_tunneling,
    "bench1000": run_benchmark_1000d,
    "fullrank": run_fullrank_audit,
    "manifold": run_manifold_recovery,
    "kl-additivity": run_kl_additivity,
}

# runners that accept large=True (d=10^5)
SUPPORTS_LARGE = {"fullrank", "manifold"}


def run(name: str, seed: int = 42, cfg: dict | None = None, large: bool = False):
    if name not in REGISTRY:
        raise KeyError(f"unknown experiment {name!r}; choose from {', '.join(REGISTRY)}")
    fn = REGISTRY[name]
    if name in SUPPORTS_LARGE:
        return fn(seed=seed, cfg=cfg, large=large)
    return fn(seed=seed, cfg=cfg)


__all__ = ["REGISTRY", "SUPPORTS_LARGE", "run", *[f.__name__ for f in REGISTRY.values()]]
