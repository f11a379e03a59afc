"""Exception types shared across the package."""


class DicflowError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(DicflowError, ValueError):
    """Raster shapes, ROI bounds, or stencil margins are inconsistent."""


class LoadError(DicflowError, RuntimeError):
    """A file referenced by a manifest or archive is missing or unreadable."""


class ParseError(DicflowError, ValueError):
    """A config, manifest, or archive file has invalid content."""


class InsufficientDataError(DicflowError, RuntimeError):
    """Too few valid pixels to compute meaningful statistics."""


class ProtocolError(DicflowError, RuntimeError):
    """A wire message violates the streaming protocol grammar."""


class ConfigError(DicflowError, ValueError):
    """A run configuration value is out of range or inconsistent."""
