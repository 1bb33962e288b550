"""Exception types shared across the package."""


class ShapeOptError(Exception):
    """Base class for all shapeopt errors."""


class InputShapeError(ShapeOptError):
    """An array argument has the wrong shape or length."""


class ParameterError(ShapeOptError):
    """A scalar parameter is out of its admissible range."""


class MshParseError(ShapeOptError):
    """A Gmsh MSH document could not be ingested."""


class UnsupportedMshVersionError(MshParseError):
    """MSH version other than 2.2 ASCII."""


class UnsupportedElementError(MshParseError):
    """MSH element type other than 2-node line / 3-node triangle."""


class MeshIntegrityError(MshParseError):
    """Element references a node id that does not exist."""


class ConfigurationError(ShapeOptError):
    """A problem/control/metric/CLI configuration is inconsistent."""


class SolverError(ShapeOptError):
    """A linear solve broke down or missed its residual contract."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class MetricError(ShapeOptError):
    """The Gram operator could not be assembled or factorized."""


class ContractError(ShapeOptError):
    """An operation was called in a state its contract forbids."""
