"""Exception types shared across the package."""


class SpeckleLabError(Exception):
    """Base class for package-specific failures."""


class ShapeError(SpeckleLabError, ValueError):
    """Array shapes or image dimensions do not agree."""


class ParseError(SpeckleLabError, ValueError):
    """A file is malformed, truncated or in an unsupported format."""


class VersionError(ParseError):
    """A file declares a format version this build does not read."""


class ConfigMismatchError(SpeckleLabError, ValueError):
    """A stored configuration disagrees with the one requested at load time."""


class CapacityError(SpeckleLabError, ValueError):
    """The source corpus cannot supply the requested number of patches."""


class StateError(SpeckleLabError, RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class TrainingAborted(SpeckleLabError, RuntimeError):
    """Training hit a non-finite loss."""


class HeaderError(ParseError):
    """A file header is missing, malformed or inconsistent."""


class TruncatedError(ParseError):
    """A payload ends before the length its header declares."""


class UnsupportedFormatError(ParseError):
    """The file is not in any format this package reads or writes."""
