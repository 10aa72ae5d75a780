"""Exceptions raised by the hier_resolve package.

Every error derives from HierResolveError so the CLI can map domain failures
to exit code 1 without swallowing programming errors.
"""


class HierResolveError(Exception):
    """Base class for all domain errors."""


class ContextFormatError(HierResolveError, ValueError):
    """Context JSON could not be ingested."""


class CapExceeded(HierResolveError, ValueError):
    """Atomization produced more atoms than HierarchyConfig.max_instructions."""


class HierarchyDepthError(HierResolveError, ValueError):
    """An authority level is deeper than the configured hierarchy depth K."""


class InvalidConflictMatrix(HierResolveError, ValueError):
    """Conflict matrix is not symmetric or has a true diagonal entry."""


class MatrixShapeMismatch(HierResolveError, ValueError):
    """Conflict matrix size differs from the number of atoms."""


class TooLarge(HierResolveError, ValueError):
    """Instance too large for exhaustive enumeration."""


class BaseTooSmall(HierResolveError, ValueError):
    """Weighted-CNF base does not exceed the number of instructions."""


class BackendUnavailable(HierResolveError, RuntimeError):
    """Conflict detector could not be reached after retries."""


class MalformedResponse(HierResolveError, RuntimeError):
    """Detector response carried no relation label."""


class InconsistentResolution(HierResolveError, ValueError):
    """Resolution does not agree with the atoms or the conflict matrix."""


class DegenerateReference(HierResolveError, ValueError):
    """Reference distribution puts all mass on one candidate."""


class InvalidScores(HierResolveError, ValueError):
    """Preference scores or loss parameters are out of range."""


class RecordSchemaError(HierResolveError, ValueError):
    """Training record violates the processed-entry schema."""


class ConfigError(HierResolveError, ValueError):
    """Configuration document is invalid."""
