"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class SpnError(Exception):
    """Base class for every error raised by spnlearn."""


class StructureError(SpnError, ValueError):
    """Malformed inputs: bad shapes, dimensions, weights or node ids."""


class SpnValidationError(SpnError, ValueError):
    def __init__(self, report):
        self.report = report
        first = report.violations[0]
        self.node = first.node
        extra = len(report.violations) - 1
        msg = str(first) + (f" (+{extra} more violations)" if extra else "")
        super().__init__(msg)


class CycleError(SpnValidationError):
    pass


class CompletenessError(SpnValidationError):
    pass


class DecomposabilityError(SpnValidationError):
    pass


class ParseError(SpnError, ValueError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        where = ""
        if line is not None:
            where = f"line {line}" + (f", col {col}" if col is not None else "") + ": "
        super().__init__(where + message)


class ZeroProbabilityInstance(SpnError, ArithmeticError):
    """A training instance has probability zero under the model."""

    def __init__(self, index: int):
        self.index = int(index)
        super().__init__(f"instance {self.index} has zero probability under the model")


class TooManyTreesError(SpnError):
    def __init__(self, count: int, limit: int):
        self.count = count
        self.limit = limit
        super().__init__(f"network has {count} induced trees, above the limit {limit}")
