"""Exception hierarchy shared by the library and the CLI."""


class ValidationError(ValueError):
    """Invalid user input: manifold specs, parameters, shapes."""


class NumericalError(ArithmeticError):
    """Base class for numerical failures (exit code 2 in the CLI)."""


class IsolatedPointError(ValidationError):
    """A point has no neighbors in an h-ball graph."""

    def __init__(self, index, h, min_viable_h):
        self.index = index
        self.h = h
        self.min_viable_h = min_viable_h
        super().__init__(
            f"point {index} has no neighbors within h={h:.6g}; "
            f"minimum viable h is {min_viable_h:.6g}"
        )


class DegenerateFrameError(NumericalError):
    """Local SVD or local regression design is rank deficient."""


class SingularWeightsError(NumericalError):
    """Reconstruction weights cannot be computed or normalized."""


class SolverError(NumericalError):
    """Eigensolver failed to converge or returned inaccurate pairs."""


class InconclusiveError(NumericalError):
    """A diagnostic has nothing measurable to report."""


class EstimationError(NumericalError):
    """A local polynomial fit has too few points or a singular design."""
