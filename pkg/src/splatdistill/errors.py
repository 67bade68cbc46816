"""Exception types shared across the package."""


class SplatDistillError(Exception):
    """Base class for all package errors."""


class InitError(SplatDistillError):
    pass


class StateError(SplatDistillError):
    """An operation was called without the state it depends on."""


class DegenerateCloud(SplatDistillError):
    """Refusing to remove every Gaussian from a cloud."""


class ParamError(SplatDistillError, ValueError):
    pass


class RangeError(SplatDistillError, ValueError):
    """Diffusion timestep outside the supported range."""


class NumericsError(SplatDistillError, FloatingPointError):
    pass


class SchemaError(SplatDistillError, KeyError):
    pass


class ShapeError(SplatDistillError, ValueError):
    pass


class TopologyError(SplatDistillError, ValueError):
    """A view ring violates its ordering or role constraints."""


class EmptySubject(SplatDistillError, ValueError):
    """Image has no pixel with non-negligible alpha."""


class FitWarning(UserWarning):
    """Schedule fit converged to a poor objective value."""
