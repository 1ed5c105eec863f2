"""Exception types raised across the package."""


class HeteroRobustError(Exception):
    """Base class for all package errors."""


class ConfigError(HeteroRobustError, ValueError):
    """Invalid user-supplied configuration (CLI exit code 2)."""


class IsolatedNode(HeteroRobustError, ValueError):
    def __init__(self, node):
        super().__init__(f"node {node} has degree 0; normalization undefined")
        self.node = int(node)


class IsolatedTarget(IsolatedNode):
    pass


class EmptyEdgeSet(HeteroRobustError, ValueError):
    pass


class UnreachableTarget(HeteroRobustError, RuntimeError):
    pass


class InfeasibleSpec(ConfigError):
    pass


class ConstructionFailed(HeteroRobustError, RuntimeError):
    pass


class SingularConfiguration(HeteroRobustError, ZeroDivisionError):
    pass


class NotHeterophilous(HeteroRobustError, ValueError):
    pass


class DimensionMismatch(HeteroRobustError, ValueError):
    pass


class MissingClassInTrain(HeteroRobustError, ValueError):
    pass


class EmptyNodeSet(HeteroRobustError, ValueError):
    pass


class InvalidFlip(HeteroRobustError, ValueError):
    def __init__(self, u, v, reason):
        super().__init__(f"invalid flip ({u}, {v}): {reason}")
        self.u, self.v = int(u), int(v)


class UnsupportedArch(ConfigError):
    pass


class ZeroRowAfterApproximation(HeteroRobustError, ArithmeticError):
    def __init__(self, row, value):
        super().__init__(f"row {row} has nonpositive sum {value:.3g} after low-rank approximation; increase the rank")
        self.row = int(row)


class NoCorrectNodes(HeteroRobustError, ValueError):
    pass


class RankDeficientWarning(UserWarning):
    pass


class ClassTooSmallWarning(UserWarning):
    pass
