"""Exception hierarchy for the simulator."""


class ThzrayError(Exception):
    """Base class for all errors raised by this package."""


class SceneFormatError(ThzrayError):
    """Scene file could not be parsed (bad JSON/STL syntax, truncation)."""


class SceneValidationError(ThzrayError):
    """Scene parsed but violates a structural invariant."""


class FrequencyRangeError(ThzrayError):
    """Frequency outside the validity range of the gas-line model."""


class DegenerateGeometryError(ThzrayError):
    """Geometry degenerate for the requested operation (e.g. zero distance)."""


class UndefinedValueError(ThzrayError):
    """Requested statistic is undefined for the given input (e.g. zero power)."""
