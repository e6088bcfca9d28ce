"""Exception types shared across the toolkit."""


class OpfError(Exception):
    """Base class for domain errors (the CLI maps these to exit code 1)."""


class CaseError(OpfError, ValueError):
    """Malformed or invalid case document / network data."""


class NotRadialError(OpfError):
    """Operation requires a tree network."""


class DimensionError(OpfError, ValueError):
    """State vectors do not match the network."""


class PreconditionError(OpfError):
    """An input violates the documented precondition (e.g. a cone gap too large)."""


class BuildError(OpfError):
    """A relaxation cannot be built for the given network / cost."""


class SolveError(OpfError):
    """Extraction requested from a non-optimal solve."""
