"""Exception hierarchy shared by every pipeline stage."""

from __future__ import annotations


class PairingError(Exception):
    """Base class for all slidepair errors."""


class DegenerateMask(PairingError):
    """A tissue mask contains no tissue pixels."""


class SingularTransform(PairingError):
    """An affine transform is not invertible."""


class MetricUndefined(PairingError):
    """A similarity metric is undefined for the given inputs (zero variance)."""


class NonFiniteCost(PairingError):
    """An assignment cost matrix contains NaN or infinite entries."""


class DimensionMismatch(PairingError):
    """Two arrays that must share a shape do not."""


class MalformedFile(PairingError, ValueError):
    """A binary raster or field file is truncated or has the wrong header."""


class DegenerateInput(PairingError):
    """Input carries no usable structure (e.g. constant images for FSIM)."""


class TooFewPoints(PairingError):
    """Not enough correspondences to fit a transform."""


class DegenerateConfiguration(PairingError):
    """Correspondences are collinear or otherwise rank deficient."""


class NoConsensus(PairingError):
    """RANSAC failed to find a large enough inlier set."""


class ParseError(PairingError):
    """A record could not be parsed; ``line`` is 1-based."""

    def __init__(self, line: int, message: str = ""):
        self.line = line
        super().__init__(f"line {line}: {message}" if message else f"line {line}")


class SchemaError(PairingError):
    """A field failed validation; ``field`` names the offending path."""

    def __init__(self, field: str, message: str = "", line: int | None = None):
        self.field = field
        self.message = message
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{field}: {message}" if message else f"{where}{field}")


class MissingExternalScore(PairingError):
    def __init__(self, origin):
        self.origin = tuple(origin)
        super().__init__(f"no external score for tile origin {self.origin}")


class SummaryMismatch(PairingError):
    """A manifest's summary block disagrees with its body."""


class VersionUnsupported(PairingError):
    pass


class MissingFile(PairingError):
    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"missing file: {self.path}")
