"""Exception hierarchy shared by the pipeline stages.

The CLI maps :class:`ValidationError` to exit code 1 and
:class:`NumericalError` to exit code 2.
"""


class LongiradError(Exception):
    pass


class ValidationError(LongiradError, ValueError):
    """Bad input: malformed files, inconsistent references, bad arguments."""


class NumericalError(LongiradError, ArithmeticError):
    """A computation failed: divergence, singular systems, degenerate geometry."""


class CohortLoadError(ValidationError):
    pass


class ReferentialIntegrityError(ValidationError):
    pass


class SchemaError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class GeometryError(ValidationError):
    """Infeasible synthetic layout, e.g. lesions that cannot fit the phantom."""


class DegenerateGeometryError(NumericalError):
    pass


class RegistrationError(NumericalError):
    pass


class NoEventsError(NumericalError):
    pass


class CoxDivergenceError(NumericalError):
    pass


class SingularInformationError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass


class StratificationError(NumericalError):
    pass


class UndefinedConcordanceError(NumericalError):
    pass


class SamplerDivergenceError(NumericalError):
    pass
