"""Exception hierarchy for the engine.

Every failure mode that callers are expected to distinguish gets its own
class; everything inherits from EngineError so tools can catch broadly.
"""


class EngineError(Exception):
    """Base class for all engine failures."""


class FormatError(EngineError):
    """A binary file does not conform to its on-disk layout."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionMismatchError(FormatError):
    """File carries a format version this build does not understand."""


class TruncatedFileError(FormatError):
    """File is shorter than its header claims."""


class OffsetMonotonicityError(FormatError):
    """An adjacency offset array is not non-decreasing."""


class InvariantError(EngineError):
    """A structural invariant of an in-memory object was violated."""


class CoverageError(EngineError):
    """A vertex-id range was not fully covered by the rows on disk
    (missing or duplicated rows during chunk assembly)."""


class StateTransitionError(EngineError):
    """A vertex was asked to move between lifecycle states along an
    edge that does not exist in the state machine."""


class ConsistencyError(EngineError):
    """Bookkeeping disagrees with itself (e.g. reloading a vertex that
    was never spilled, or a duplicate row offered to the writer)."""


class BudgetError(EngineError):
    """An operation would exceed a fixed memory budget."""


class ConfigError(EngineError):
    """A configuration value is out of range or inconsistent."""


class PipelineError(EngineError):
    """A pipeline stage failed; carries the originating stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause!r}")
        self.stage = stage
        self.cause = cause


class IncompleteLayerError(EngineError):
    """A layer finished its input stream with vertices still waiting
    for messages. Lists a sample of the starved ids."""

    def __init__(self, missing_ids, total: int):
        sample = ", ".join(str(i) for i in missing_ids)
        super().__init__(
            f"{total} vertices never completed; first ids: [{sample}]"
        )
        self.missing_ids = list(missing_ids)
        self.total = total
