"""Exception types shared across the package.

Every error raised on a bad input or a corrupt artifact derives from
:class:`NearDupError`, so callers (and the CLI) can distinguish data
problems from programming bugs with a single except clause.
"""


class NearDupError(Exception):
    """Base class for all errors raised by this package."""


class DecodeError(NearDupError):
    """Image bytes could not be decoded (malformed or unsupported format)."""


class InvalidDimension(NearDupError):
    """A requested width or height is zero or negative."""


class InvalidRegion(NearDupError):
    """A crop region is empty, inverted, or outside the image bounds."""


class TooSmall(NearDupError):
    """An operation's output would be smaller than its minimum size."""


class KindMismatch(NearDupError):
    """Feature kind or dimension does not match the index or model."""


class DuplicateImageId(NearDupError):
    """Two images with the same id were offered to an index build."""


class EmptyQuery(NearDupError):
    """A query was issued with no feature vectors."""


class MultiFeatureIndex(NearDupError):
    """Single-vector distance queries need exactly one feature per image."""


class CorruptIndex(NearDupError):
    """A serialized index failed validation on load."""


class CorruptFeatureFile(NearDupError):
    """A serialized feature file failed validation on load."""


class CorruptModel(NearDupError):
    """A serialized model failed validation on load."""


class NoValidRows(NearDupError):
    """A manifest contained no usable rows."""


class InsufficientSample(NearDupError):
    """Too few samples to fit the requested model."""


class DegenerateLabels(NearDupError):
    """A labeled dataset does not contain both classes."""


class ModeMismatch(NearDupError):
    """A model was applied to pairs from a different retrieval mode."""


class EmptyInput(NearDupError):
    """An evaluation was requested over zero queries."""
