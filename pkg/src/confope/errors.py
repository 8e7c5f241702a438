"""Exception types shared across the package."""


class ConfopeError(Exception):
    """Base class for package errors."""


class DimensionError(ConfopeError, ValueError):
    pass


class InfeasibleError(ConfopeError):
    """Uncertainty envelope with no feasible kernel row (sum(hi) < 1 or sum(lo) > 1)."""

    def __init__(self, cells, msg="infeasible uncertainty set"):
        self.cells = [tuple(int(x) for x in c) for c in cells]
        shown = ", ".join(str(c) for c in self.cells[:10])
        more = "" if len(self.cells) <= 10 else f" (+{len(self.cells) - 10} more)"
        super().__init__(f"{msg} at cells {shown}{more}")


class CoverageError(ConfopeError):
    """State-action cells needed by the evaluation policy were never observed."""

    def __init__(self, cells, msg="unvisited cells reachable by the evaluation policy"):
        self.cells = [tuple(int(x) for x in c) for c in cells]
        shown = ", ".join(str(c) for c in self.cells[:10])
        more = "" if len(self.cells) <= 10 else f" (+{len(self.cells) - 10} more)"
        super().__init__(f"{msg}: {shown}{more}")
