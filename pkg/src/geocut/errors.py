"""Exception hierarchy shared by all geocut modules."""


class GeocutError(Exception):
    """Base class for all geocut failures."""


class NewtonDiverged(GeocutError):
    """A Newton iteration did not reach the residual tolerance.

    ``step`` carries the 1-based time-step index when the failure occurred
    inside an integration loop, else None.
    """

    def __init__(self, message, step=None, residual=None):
        super().__init__(message)
        self.step = step
        self.residual = residual


class RankDeficient(GeocutError):
    """A constraint Jacobian (or Newton matrix) lost full rank."""


class ChartInvalid(GeocutError):
    """A coordinate-deletion chart was used outside its validity region."""


class ConstraintViolated(GeocutError):
    """A point that must lie on the constraint manifold does not."""


class EvaluationFailed(GeocutError):
    """A composite map (endpoint map, user function) failed to evaluate.

    ``step`` carries the integrator step index when applicable.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class InvalidDimension(GeocutError):
    """An operation was called with an unsupported dimension."""
