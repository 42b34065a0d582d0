"""Exception hierarchy shared by all navem_lab modules."""


class NavemError(Exception):
    """Base class for every error raised by navem_lab."""


class DerivativeSingular(NavemError):
    """A derivative was requested where a distance-like factor vanishes."""


class DegenerateGeometry(NavemError):
    pass


class InvalidPolygon(NavemError):
    pass


class NotStarShaped(InvalidPolygon):
    pass


class ParseError(NavemError):
    pass


class ValidationError(NavemError):
    pass


class GenerationError(NavemError):
    pass


class UnsupportedOrder(NavemError):
    pass


class InvalidDims(NavemError):
    pass


class DimMismatch(NavemError):
    pass


class NonFinite(NavemError):
    """Loss or gradient contains NaN/Inf, usually a sign of exploding training."""


class SchemaVersionError(ParseError):
    pass


class FitDiverged(NavemError):
    pass


class PoleInsideElement(NavemError):
    pass


class MissingModel(NavemError):
    pass


class SingularMatrix(NavemError):
    pass


class NewtonDiverged(NavemError):
    pass
