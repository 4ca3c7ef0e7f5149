"""Exception hierarchy for the evaluation harness.

All domain errors derive from :class:`XdetError` so the CLI can map them to
exit code 1, while usage mistakes (:class:`UsageError`) map to exit code 2.
"""


class XdetError(Exception):
    """Base class for all harness errors."""


class InvalidLabel(XdetError):
    """A label string is empty after normalization."""


class ParseError(XdetError):
    """An input file is malformed."""


class VocabularyError(XdetError):
    """A vocabulary violates its invariants (e.g. duplicate canonical names)."""


class ReferentialError(XdetError):
    """A record references an unknown image, category, or label."""


class RangeError(XdetError):
    """A numeric field is outside its allowed range."""


class EmbeddingError(XdetError):
    """An embedding table violates its invariants or lacks a required entry."""


class MappingError(XdetError):
    """An explicit label mapping is not one-to-one."""


class UsageError(XdetError):
    """The harness API or CLI was invoked incorrectly."""
