"""Exception hierarchy shared by all ibrplace modules."""

from __future__ import annotations


class IbrPlaceError(Exception):
    """Base class for every error raised by the package."""


class CaseSyntaxError(IbrPlaceError):
    """Malformed case text. Carries the 1-based line and column."""

    def __init__(self, message: str, line: int, column: int = 1):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class CaseSemanticError(IbrPlaceError):
    """Well-formed case text that violates a data invariant."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class GraphError(IbrPlaceError):
    """Graph is not usable (disconnected, bad edges, rank deficient)."""


class PlacementError(IbrPlaceError):
    """Invalid placement request (k out of range, budget exceeded)."""


class SimulationError(IbrPlaceError):
    """Numerical failure inside the transient simulator."""

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


class ControlError(IbrPlaceError):
    """Controller synthesis failed (dimensions, convergence, stability)."""
