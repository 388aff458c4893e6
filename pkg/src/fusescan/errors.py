"""Exception types shared across the toolkit.

Two families matter to callers: :class:`ValidationError` covers inputs that
are wrong before any work starts (bad manifests, impossible configs,
mismatched shapes), and :class:`DataError` covers failures in the data or
artifacts being processed (undecodable images, corrupt caches, diverging
runs). The CLI maps the former to exit code 1 and the latter to exit code 2.
"""


class FusescanError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(FusescanError):
    """Caller-supplied input violates a documented precondition."""


class DataError(FusescanError):
    """The data or artifact being processed is unusable."""


# --- imaging ---------------------------------------------------------------

class DecodeError(DataError):
    """An image file exists but cannot be decoded."""


class EncodeError(DataError):
    """An image could not be re-encoded (JPEG writer failure)."""


# --- backbones -------------------------------------------------------------

class ShapeMismatch(ValidationError):
    """An array does not have the shape a consumer requires."""


class GraphExecutionError(DataError):
    """A backbone graph file is missing, corrupt, or failed to execute."""


class NonFiniteOutput(DataError):
    """A backbone produced NaN or infinity."""


# --- fusion head -----------------------------------------------------------

class NonFiniteInput(ValidationError):
    """A feature vector handed to the head contains NaN or infinity."""


class NonFiniteLogit(ValidationError):
    """A loss was requested for a NaN or infinite logit."""


class EmptyClass(ValidationError):
    """Training data is missing one of the two classes entirely."""


class DivergenceDetected(DataError):
    """Training loss became NaN or infinite."""


class VersionMismatch(DataError):
    """A serialized artifact declares a version or layout this build cannot read."""


class CorruptCheckpoint(DataError):
    """A head checkpoint file is truncated or structurally invalid."""


# --- metrics ---------------------------------------------------------------

class EmptyInput(ValidationError):
    """A metric was requested over zero records."""


class DegenerateClasses(ValidationError):
    """A ranking metric needs both classes present and got one."""


class SplitViolation(ValidationError):
    """Train and test fakes share a generator or dataset source.

    ``violations`` lists the offending axis:value pairs, e.g.
    ``["generator:sd1.4", "dataset:genimage"]``.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__(
            "train/test split shares fake sources: " + ", ".join(self.violations)
        )


# --- datasets --------------------------------------------------------------

class ParseError(ValidationError):
    """A manifest line is not valid JSON or is missing required fields."""

    def __init__(self, line_number, message):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class InvariantViolation(ValidationError):
    """A manifest record parses but contradicts a dataset invariant."""

    def __init__(self, line_number, message):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class InsufficientImages(ValidationError):
    """A sampling request asks for more images than a pool holds.

    ``deficits`` is a list of ``(generator_id, have, need)`` tuples covering
    every shortfall, not just the first one found.
    """

    def __init__(self, deficits):
        self.deficits = list(deficits)
        detail = "; ".join(f"{g}: have {have}, need {need}" for g, have, need in self.deficits)
        super().__init__(f"not enough images to sample: {detail}")


class HashMismatch(DataError):
    """A feature cache was written against a different backbone set."""


class TruncatedCache(DataError):
    """A feature cache file ends before its declared row count."""


# --- t-SNE -----------------------------------------------------------------

class DegenerateInput(ValidationError):
    """Input rows admit no valid affinity solution even after jitter."""


class NonFiniteGradient(DataError):
    """The embedding optimizer produced a NaN or infinite gradient."""


# --- prompt generation -----------------------------------------------------

class EmptyPool(ValidationError):
    """A template slot has no candidate phrases to draw from."""

    def __init__(self, slot):
        self.slot = slot
        super().__init__(f"pool for slot '{slot}' is empty")
