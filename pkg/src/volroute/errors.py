"""Exception types shared across the pipeline."""


class VolrouteError(Exception):
    """Base class for all package errors."""


class InputError(VolrouteError):
    """Rejected input: malformed file, bad value, violated precondition."""


class AlignmentError(InputError):
    """Date alignment between data sources failed or is degenerate."""


class FitError(VolrouteError):
    """A model estimation failed (short window, rank deficiency, no convergence)."""


class ConfigError(VolrouteError):
    """Invalid configuration: unknown key, type mismatch, constraint violation."""


class ProtocolError(VolrouteError):
    """The walk-forward protocol was violated (should be unreachable in a valid run)."""


class BranchError(VolrouteError):
    """A specialist branch has no usable model; the caller degrades the forecast."""
