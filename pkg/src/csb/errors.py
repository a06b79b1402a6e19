"""Exception types raised across the package."""


class CsbError(Exception):
    """Base class for all package errors."""


class CycleDetected(CsbError):
    def __init__(self, remaining):
        self.remaining = sorted(remaining)
        super().__init__(f"graph has a cycle among nodes {self.remaining}")


class InvalidGraph(CsbError):
    pass


class InvalidMechanism(CsbError):
    pass


class UnknownNode(CsbError, KeyError):
    def __init__(self, node):
        self.node = node
        super().__init__(f"unknown node {node!r}")

    def __str__(self):
        return self.args[0]


class NonPositiveStd(CsbError, ValueError):
    pass


class DimensionMismatch(CsbError, ValueError):
    pass


class ShapeMismatch(CsbError, ValueError):
    pass


class NonFiniteLoss(CsbError):
    def __init__(self, step, history):
        self.step = step
        self.history = list(history)
        tail = ", ".join(f"{v:.4g}" for v in self.history[-5:])
        super().__init__(f"training diverged at step {step} (recent losses: {tail})")


class NonFiniteState(CsbError):
    def __init__(self, step, t=None):
        self.step = step
        self.t = t
        where = f" (t={t:.4f})" if t is not None else ""
        super().__init__(f"integration produced a non-finite state at step {step}{where}")


class UnfittedModel(CsbError):
    pass


class EmptyProtectedSet(CsbError, ValueError):
    pass


class DegenerateTarget(CsbError, ValueError):
    pass


class SingularMatrix(CsbError, ArithmeticError):
    pass


class NodeError(CsbError):
    """Wraps a solver failure with the id of the node being fitted."""

    def __init__(self, node, cause):
        self.node = node
        self.cause = cause
        super().__init__(f"node {node}: {cause}")
