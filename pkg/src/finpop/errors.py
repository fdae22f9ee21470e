"""Exception hierarchy shared across the package."""


class FinpopError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(FinpopError):
    """Declared schema does not match the data (missing column, overlap, ...)."""


class ParseError(FinpopError):
    """Malformed CSV content: non-numeric cell, missing cell, empty file."""


class LinkageError(FinpopError):
    """Sample/population linkage failure: duplicate or unknown ids, covariate
    disagreement on a linked row, or an operation that requires linkage."""


class DomainError(FinpopError):
    """Input outside an operation's mathematical domain (e.g. log1p of y <= -1)."""


class DegenerateCutsError(FinpopError):
    """Quantile discretization produced non-increasing cut points; fewer bins needed."""


class EmptyCellError(FinpopError):
    """A post-stratum has population units but no sample units; estimator undefined."""


class ConvergenceError(FinpopError):
    """Iterative proportional fitting failed to reach tolerance."""

    def __init__(self, msg, discrepancy=None):
        super().__init__(msg)
        self.discrepancy = discrepancy


class EstimationError(FinpopError):
    """Estimation could not proceed (degenerate inclusion, unlinked sample, ...)."""
