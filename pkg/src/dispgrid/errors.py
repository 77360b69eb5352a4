"""Exception hierarchy shared by every stage of the pipeline."""


class DispgridError(Exception):
    """Base class for all package errors."""


class ExtentError(DispgridError, ValueError):
    """A coordinate falls outside the grid extent."""

    def __init__(self, lon, lat, message=None):
        self.lon = lon
        self.lat = lat
        super().__init__(message or f"point (lon={lon}, lat={lat}) is outside the grid extent")


class GeometryError(DispgridError, ValueError):
    pass


class ConfigurationError(DispgridError, ValueError):
    pass


class InputError(DispgridError, ValueError):
    pass


class IntegrityError(DispgridError):
    pass


class UnsolvableProblemError(DispgridError):
    """Raised when a label-spreading problem has no labeled rows."""


class StageError(DispgridError):
    """Wraps a failure with the pipeline stage and offending entity."""

    def __init__(self, stage: str, entity: str | None, cause: BaseException):
        self.stage = stage
        self.entity = entity
        self.cause = cause
        where = f" [{entity}]" if entity else ""
        super().__init__(f"{stage}{where}: {cause}")
