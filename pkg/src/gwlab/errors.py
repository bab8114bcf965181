"""Error hierarchy shared by the core modules, the service and the CLI.

Each error carries a machine-readable ``kind`` that the CLI maps to its
exit-code contract (validation -> 2, truncation -> 3, degenerate -> 4).
"""


class GWError(Exception):
    """Base class for all domain errors."""

    kind = "error"
    exit_code = 1


class ModelValidationError(GWError):
    """Malformed model or out-of-domain argument."""

    kind = "validation"
    exit_code = 2


class SpectralError(GWError):
    """Mean matrix not primitive, or eigen data unavailable."""

    kind = "validation"
    exit_code = 2


class IterationLimitError(GWError):
    """A fixed-point or power iteration failed to converge within its cap."""

    kind = "iteration-limit"
    exit_code = 1


class TruncationError(GWError):
    """Too much probability mass escaped the lattice box."""

    kind = "truncation"
    exit_code = 3


class DegenerateConditionError(GWError):
    """Conditioning event has zero retained probability."""

    kind = "degenerate"
    exit_code = 4


class AssumptionError(GWError):
    """A structural assumption required by the requested operation fails."""

    kind = "validation"
    exit_code = 2
