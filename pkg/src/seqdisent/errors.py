class SeqDisentError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SeqDisentError, ValueError):
    pass


class PreconditionError(SeqDisentError, ValueError):
    pass


class FormatError(SeqDisentError):
    """A container file is corrupt, truncated or missing an entry."""


class MetricInvalidError(SeqDisentError):
    """Raised when a judge classifier does not pass its accuracy gate."""


class NonFiniteLossError(SeqDisentError, FloatingPointError):
    def __init__(self, term: str, step: int):
        super().__init__(f"non-finite value in loss term '{term}' at step {step}")
        self.term = term
        self.step = step
