"""Exception hierarchy shared across the toolkit."""


class VitalRadarError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(VitalRadarError):
    """Invalid radar configuration (bad field value or inconsistent derived quantity)."""


class GeometryError(VitalRadarError):
    """Invalid subject geometry (duplicate or non-increasing ranges, negative heights)."""


class SceneError(VitalRadarError):
    """Invalid simulation scene (subject outside detectable range, bad parameter)."""


class ShapeError(VitalRadarError):
    """Array dimensions do not match the pipeline contract."""


class CaptureError(VitalRadarError):
    """Malformed capture file (bad magic, truncated payload, invalid header)."""


class ModelFormatError(VitalRadarError):
    """Malformed or unsupported regression model file."""
