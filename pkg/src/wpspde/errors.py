"""Exception hierarchy shared by all modules."""


class WPSPDEError(Exception):
    pass


class DomainError(WPSPDEError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigurationError(WPSPDEError, ValueError):
    """Inconsistent sizes or settings (grid too small, wrong mode count, ...)."""


class CommutativityError(WPSPDEError):
    """A closed-form step was requested for coefficients whose noise is not
    known to commute."""


class NumericalOverflowError(WPSPDEError, ArithmeticError):
    """A step produced non-finite values.

    Attributes:
      term: name of the first offending term of the update.
      rows: indices (along the flattened batch axis) of the affected paths.
    """

    def __init__(self, term, rows=()):
        self.term = term
        self.rows = tuple(int(r) for r in rows)
        super().__init__('non-finite value in term %r (rows %s)'
                         % (term, list(self.rows)))


class StudyError(WPSPDEError, RuntimeError):
    pass


class ConstraintViolation(ConfigurationError):
    """Declared regularity exponents break one of the admissible ranges."""
