"""Exception hierarchy shared by all ctproj modules."""


class CtprojError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(CtprojError, ValueError):
    """A parameter violates an operation's precondition."""


class InvalidSpecError(CtprojError, ValueError):
    """A phantom or pipeline spec is internally inconsistent."""


class EmptyMarkerError(CtprojError, ValueError):
    """Marker construction was asked to run on an empty internal mask."""


class MissingMarkerError(CtprojError, ValueError):
    """Watershed needs at least one internal and one external seed."""


class DataIntegrityError(CtprojError, ValueError):
    """Input records contradict each other (e.g. death before scan)."""
