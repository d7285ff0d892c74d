"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class TermBudgetError(ValueError):
    """A brute-force enumeration would exceed its term budget."""


class SeriesOverflowError(OverflowError):
    """Intermediate series terms exceeded the representable range."""


class AccuracyError(ArithmeticError):
    """A numerical result could not be produced at the promised accuracy."""


class BracketError(RuntimeError):
    """A monotone root-find could not bracket its target."""


class OutOfTableRange(ValueError):
    """An evaluation fell outside a precomputed table; no extrapolation is done."""


class ConvergenceError(RuntimeError):
    """An iterative procedure did not converge."""


class NotGreyError(ValueError):
    """The mechanism does not (demonstrably) satisfy Grey's condition."""
