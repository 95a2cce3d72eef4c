"""Exception hierarchy shared by every deltaquant module."""

from __future__ import annotations


class DeltaQuantError(Exception):
    """Base class; the CLI maps any subclass to a nonzero exit."""


class InvalidValue(DeltaQuantError, ValueError):
    """A non-finite number reached the FP8 codec or the quantizer."""


class InvalidConfig(DeltaQuantError, ValueError):
    pass


class ShapeError(DeltaQuantError, ValueError):
    pass


class ManifestError(DeltaQuantError):
    """Duplicate or colliding tensor names."""


class FormatError(DeltaQuantError):
    """Malformed or truncated checkpoint container."""

    def __init__(self, message: str, tensor: str | None = None):
        super().__init__(message if tensor is None else f"{tensor}: {message}")
        self.tensor = tensor


class PairingError(DeltaQuantError):
    def __init__(self, message: str, tensor: str | None = None):
        super().__init__(message if tensor is None else f"{tensor}: {message}")
        self.tensor = tensor


class IoError(DeltaQuantError, OSError):
    pass
