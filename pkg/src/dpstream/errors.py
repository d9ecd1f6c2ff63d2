"""Exception hierarchy shared by all dpstream modules."""


class DPStreamError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(DPStreamError, ValueError):
    pass


class InvalidInputError(DPStreamError, ValueError):
    pass


class BudgetViolationError(DPStreamError):
    """A privacy-accounting invariant would be broken.

    Seeing this outside of a test that provokes it means the calling code
    spends budget the history guarantee does not cover.
    """


class ConfigurationError(DPStreamError, ValueError):
    pass


class SchemaError(DPStreamError, ValueError):
    pass


class TypeMismatchError(DPStreamError, TypeError):
    pass


class UndefinedMetricError(DPStreamError, ValueError):
    pass
