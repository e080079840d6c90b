"""Exception and warning types raised across the package."""

from __future__ import annotations


class SeqTransportError(Exception):
    """Base class for all errors raised by seqtransport."""


# --- graph -----------------------------------------------------------------


class InvalidDag(SeqTransportError, ValueError):
    pass


class CycleDetected(InvalidDag):
    def __init__(self, cycle: list[str]):
        self.cycle = list(cycle)
        super().__init__("cycle detected: " + " -> ".join(self.cycle))


class UnknownNode(InvalidDag, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else "unknown node"


class MultipleTreatments(InvalidDag):
    pass


class EdgeIntoTreatment(InvalidDag):
    pass


class EdgeFromOutcome(InvalidDag):
    pass


# --- numerical transport -----------------------------------------------------


class EmptySample(SeqTransportError, ValueError):
    pass


class AllWeightsZero(SeqTransportError, ValueError):
    pass


class DegenerateSource(SeqTransportError, ValueError):
    pass


class DegenerateWeights(SeqTransportError, ValueError):
    def __init__(self, message: str, ess: float = float("nan")):
        self.ess = ess
        super().__init__(message)


class DegenerateCovariance(SeqTransportError, ValueError):
    pass


class NotPositiveDefinite(SeqTransportError, ValueError):
    pass


class DimensionMismatch(SeqTransportError, ValueError):
    pass


class InfeasibleMarginals(SeqTransportError, ValueError):
    pass


class ZeroRowWeight(SeqTransportError, ValueError):
    pass


class SeparationDetected(SeqTransportError, RuntimeError):
    pass


class RankDeficientPredictors(SeqTransportError, ValueError):
    pass


class SinkhornNotConverged(RuntimeWarning):
    """Sinkhorn hit ``max_iter``; the returned plan is flagged ``converged=False``."""


# --- pipeline ----------------------------------------------------------------


class TransportError(SeqTransportError):
    """A sub-module failure annotated with the mediator and unit being processed."""

    def __init__(self, node: str, unit, cause: Exception):
        self.node = node
        self.unit = unit
        self.cause = cause
        where = f"node {node!r}" if unit is None else f"node {node!r}, unit {unit!r}"
        super().__init__(f"{where}: {type(cause).__name__}: {cause}")


class MissingOutcome(SeqTransportError, ValueError):
    pass


class EmptyGroup(SeqTransportError, ValueError):
    pass


class SchemaMismatch(SeqTransportError, ValueError):
    pass


class UnknownUnit(SeqTransportError, KeyError):
    pass


class IndexOutOfRange(SeqTransportError, IndexError):
    pass


# --- ingestion ---------------------------------------------------------------


class MissingColumn(SeqTransportError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing column"


class NonBinaryTreatment(SeqTransportError, ValueError):
    pass


class ParseError(SeqTransportError, ValueError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        super().__init__(message)
