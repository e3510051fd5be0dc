"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An input is non-finite, out of range, or otherwise malformed."""


class AdmissibilityError(ParameterError):
    """Exponents or parameters violate a structural condition of the problem."""


class GridMismatchError(ValueError):
    """Fields living on different grids were combined."""


class ProjectionError(ArithmeticError):
    """No point of the Nehari set lies on the requested ray (or ray pair)."""


class ResolutionError(ParameterError):
    """A concentrated profile is too narrow for the grid it is sampled on."""
