"""Exception types shared across the pipeline."""


class EpigrowthError(Exception):
    """Base class for all pipeline errors."""


class EmptyInputError(EpigrowthError):
    """An operation received an empty collection it cannot work with."""


class ContractViolationError(EpigrowthError):
    """Input violated a documented precondition (e.g. non-monotone cumulative series)."""


class FormatError(EpigrowthError):
    """A data file does not match its expected schema."""


class RowError(EpigrowthError):
    """A single malformed row; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class RowErrorGroup(EpigrowthError):
    """All row errors found in one file, raised after the full scan."""

    def __init__(self, path, errors):
        self.path = str(path)
        self.errors = list(errors)
        lines = "\n".join(str(e) for e in self.errors)
        super().__init__(f"{len(self.errors)} bad row(s) in {self.path}:\n{lines}")


class AssemblyError(EpigrowthError):
    """Feature assembly failed, e.g. counties whose state is absent from every state-level source."""


class InsufficientDataError(EpigrowthError):
    """Too few valid observations for a fit (e.g. < 2 cells in an OLS window)."""


class InsufficientHistoryError(EpigrowthError):
    """No training rows exist at or before the requested target day."""


class DegenerateNodeError(EpigrowthError):
    """A tree node holds a single treatment arm or has zero treatment variance."""


class UnfitError(EpigrowthError):
    """The forest cannot be fitted (e.g. single-arm training set)."""


class NoSupportError(EpigrowthError):
    """A query received no forest weight, or the weighted support cannot identify a rate."""


class NoForecastError(EpigrowthError):
    """The forecast anchor cell is invalid."""


class ScenarioError(EpigrowthError):
    """A synthetic scenario is malformed or would overflow."""
