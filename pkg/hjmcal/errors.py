"""Exception hierarchy. Exit codes separate bad inputs from numerical failures."""

from __future__ import annotations

from typing import Any, Optional


class HjmCalError(Exception):
    exit_code = 1

    def __init__(self, message: str, *, payload: Optional[Any] = None):
        super().__init__(message)
        self.payload = payload


# --- Input / data problems (exit 2) ---

class DataError(HjmCalError):
    exit_code = 2


class EmptyInput(DataError): ...
class InfeasibleQuotes(DataError): ...
class OutOfGrid(DataError): ...
class NonPositivePrice(DataError): ...
class DegenerateWeights(DataError): ...
class PriceOutOfBounds(DataError): ...
class DivergentIntegral(DataError): ...
class NegativeIncrement(DataError): ...
class NoValidGrouping(DataError): ...
class GridMismatch(DataError): ...


# --- Numerical failures (exit 3) ---

class SolverError(HjmCalError):
    exit_code = 3


class InfeasibleConstraint(SolverError): ...
class SolverStall(SolverError): ...
class Infeasible(SolverError): ...
class ExtractionDegenerate(SolverError): ...
class NoPositiveRoot(SolverError): ...
class NoConvergence(SolverError): ...
class QuadratureNoConvergence(SolverError): ...


class PipelineStepError(HjmCalError):
    """Wraps an error raised inside a pipeline step, keeping its exit code."""

    def __init__(self, step: str, cause: Exception):
        super().__init__(f"step '{step}' failed: {cause}")
        self.step = step
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
