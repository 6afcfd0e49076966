"""Exception types raised across trackforge."""


class TrackforgeError(Exception):
    """Base class for all package errors."""


class SingularState(TrackforgeError):
    pass


class DegenerateGeometry(TrackforgeError):
    pass


class ShapeMismatch(TrackforgeError, ValueError):
    pass


class FormatError(TrackforgeError):
    pass


class CapacityExceeded(TrackforgeError):
    pass


class SingularInnovation(TrackforgeError):
    pass


class CombinatorialLimit(TrackforgeError):
    pass


class ConfigError(TrackforgeError):
    pass


class InvalidParams(TrackforgeError, ValueError):
    pass


class LengthMismatch(TrackforgeError, ValueError):
    pass
