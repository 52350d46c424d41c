"""Exception types shared across the toolchain."""

from __future__ import annotations


class SpatialRelError(Exception):
    """Base class for every error raised by this package."""


class NonPositiveDepth(SpatialRelError, ValueError):
    pass


class DegenerateProjection(SpatialRelError, ValueError):
    """A vector has no usable component on the ground plane."""


class ConfigError(SpatialRelError, ValueError):
    pass


class SchemaError(SpatialRelError, ValueError):
    """A scene record does not follow the annotation schema.

    ``code`` is a stable identifier (``MissingField``, ``WrongType`` ...) and
    ``path`` the dotted field path of the offending value.
    """

    def __init__(self, code: str, path: str, message: str):
        self.code = code
        self.path = path
        super().__init__(f"{code} at {path}: {message}")


class FrameError(SchemaError):
    """Unknown coordinate convention tag on an input object."""

    def __init__(self, path: str, tag: object):
        super().__init__("UnknownFrame", path, f"unknown frame tag {tag!r}")


class UnresolvableReferent(SpatialRelError):
    pass


class DuplicatePrediction(SpatialRelError):
    pass


class UnknownQuestion(SpatialRelError):
    pass
