"""Exception types shared across the framepipe package."""


class FramepipeError(Exception):
    """Base class for all framepipe errors."""


# -- context store --------------------------------------------------------

class StaleWrite(FramepipeError):
    """A publish targeted a frame older than the last published frame."""


class NotYetPublished(FramepipeError):
    """No context exists for the requested frame."""


class OffsetOutOfRange(FramepipeError):
    """|offset| reaches or exceeds the store capacity."""


class KindMismatch(FramepipeError):
    """Operation requires the other context kind."""


# -- policies --------------------------------------------------------------

class ShapeMismatch(FramepipeError):
    """Observation dimensions disagree with the model configuration."""


class SequenceComplete(FramepipeError):
    """All action tokens for this request have already been generated."""


class IncompleteGeneration(FramepipeError):
    """finish() called before all generation iterations were applied."""


# -- transformer -----------------------------------------------------------

class LengthExceeded(FramepipeError):
    """Sequence would exceed the configured maximum length."""


# -- partitioner -----------------------------------------------------------

class TooManyStages(FramepipeError):
    """More perception stages requested than layers available."""


class InvalidStageCount(FramepipeError):
    """Generation stage count incompatible with the iteration count."""


# -- executor ---------------------------------------------------------------

class ConfigInvalid(FramepipeError):
    """Pipeline or experiment configuration fails validation."""


class DeadlockDetected(FramepipeError):
    """A stage waits on a context that can never be published."""


# -- environment -------------------------------------------------------------

class EpisodeOver(FramepipeError):
    """Frame index beyond the configured episode length."""


class ActionNormExceeded(FramepipeError):
    """Applied action exceeds the environment step limit."""


# -- tuner / metrics ----------------------------------------------------------

class NoFeasibleConfig(FramepipeError):
    """No grid point meets the throughput requirement.

    Carries the full evaluation log and the best infeasible point for
    diagnostics.
    """

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class BaselineMissing(FramepipeError):
    """Comparison requested against a baseline that is not in the run set."""


class EmptyTrace(FramepipeError):
    """Metrics aggregation requires at least one completed frame."""
