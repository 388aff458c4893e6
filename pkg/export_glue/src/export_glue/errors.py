"""Failure modes of the one-time encoder export."""


class ExportError(Exception):
    """Base class for everything this tool can raise on purpose."""


class CheckpointUnavailable(ExportError):
    """The reference checkpoint could not be loaded.

    Raised for a missing local directory, unreadable or corrupt weights, and
    hub lookups that fail (offline, unknown name, authentication).
    """


class ExportShapeMismatch(ExportError):
    """The graph's output width contradicts what the role promises."""
