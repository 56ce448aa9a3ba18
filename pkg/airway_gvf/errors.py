"""
Exception hierarchy for airway-gvf.

Every error raised on purpose by the library derives from AirwayError so the
CLI can map it to an exit code with a one-line diagnostic.
"""


class AirwayError(Exception):
    """Base class for all airway-gvf errors."""


class MetaImageError(AirwayError, ValueError):
    """Malformed or unsupported MetaImage header or payload."""


class GeometryError(AirwayError, ValueError):
    """Lattice geometry mismatch or degenerate VOI."""


class SeedError(AirwayError):
    """Seed point rejected by trachea extraction."""


class PhantomError(AirwayError):
    """Phantom specification cannot be rendered."""


class ConfigError(AirwayError):
    """Invalid configuration key or value."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class FieldError(AirwayError, ValueError):
    """Vector field contains non-finite values."""
