"""Exception types shared across the package."""


class CifcoxError(Exception):
    """Base class for all cifcox-specific errors."""


class TiedEventTimes(CifcoxError):
    """Two or more uncensored subjects share an identical follow-up time."""

    def __init__(self, times):
        self.times = sorted(set(float(t) for t in times))
        shown = ", ".join(f"{t:g}" for t in self.times[:10])
        if len(self.times) > 10:
            shown += ", ..."
        super().__init__(
            f"tied uncensored event times at t = {shown} "
            "(use tie policy 'jitter' to break them deterministically)"
        )


class NoEventsForCause(CifcoxError):
    """A cause-specific fit was requested for a cause with zero events."""

    def __init__(self, cause):
        self.cause = cause
        super().__init__(f"no events of cause {cause} in the dataset")


class EmptyRiskSet(CifcoxError):
    """A risk-weighted sum came out nonpositive where a division is required."""


class MixedMethods(CifcoxError):
    """Per-cause estimates being combined do not share method, z, or grid."""


class NegativePrefix(CifcoxError):
    """A running product prefix went materially negative (violated assumption)."""


class CalibrationFailure(CifcoxError):
    """A bisection target could not be bracketed or reached."""


class RootFindFailure(CifcoxError):
    """Inverting a cumulative hazard failed to converge."""


class BootstrapFitFailure(CifcoxError):
    """More bootstrap refits diverged than the redraw budget allows."""


class CsvFormatError(CifcoxError):
    """Base class for dataset-file parsing errors."""


class MissingColumn(CsvFormatError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"required column '{column}' not found in header")


class NonnumericCell(CsvFormatError):
    def __init__(self, row, column, value):
        self.row = row
        self.column = column
        super().__init__(f"line {row}, column '{column}': cannot parse '{value}' as a number")


class NonpositiveTime(CsvFormatError):
    def __init__(self, row, value):
        self.row = row
        super().__init__(f"line {row}: follow-up time must be positive, got {value!r}")


class UnknownEventCode(CsvFormatError):
    def __init__(self, row, value):
        self.row = row
        super().__init__(f"line {row}: event code must be an integer >= 0, got {value!r}")


class ConfigError(CifcoxError):
    """A simulation config file failed validation."""

    def __init__(self, message, line=None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
