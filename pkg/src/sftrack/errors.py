"""Exception hierarchy shared by all sftrack modules."""


class SftError(Exception):
    """Base class for all sftrack errors."""


class DegenerateInput(SftError, ValueError):
    """Input too small or degenerate for the requested operation."""


class IndexOutOfRange(SftError, IndexError):
    """A vertex/point index does not exist in the target structure."""


class DegenerateTriangle(SftError, ValueError):
    """Selected triangle has near-zero area, barycentric weights undefined."""


class SingularSystem(SftError, ValueError):
    """Regularized normal equations are numerically singular."""


class CollapsedEdge(SftError, ValueError):
    """Two particles of a distance constraint coincide, direction undefined."""


class InsufficientMatches(SftError):
    """A mismatch-removal step was left with too few matches to continue.

    ``stage`` identifies the failing step ("select", "purify" or "classify").
    """

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.stage = stage


class NoConvergence(SftError):
    """An iterative solve exhausted its budget without reaching equilibrium."""


class UnderConstrained(SftError, ValueError):
    """Not enough constraints to determine a 3D shape (depth unconstrained)."""


class TopologyMismatch(SftError, ValueError):
    """Paired meshes do not share triangle topology."""


class ParseError(SftError, ValueError):
    """A data file failed to parse; carries the file and location."""

    def __init__(self, message: str, path=None, line: int | None = None):
        loc = str(path) if path is not None else ""
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.path = path
        self.line = line


class InvalidDimensions(SftError, ValueError):
    """Non-positive or otherwise impossible geometric dimensions."""


class ConfigError(SftError, ValueError):
    """Invalid configuration file or option combination."""
