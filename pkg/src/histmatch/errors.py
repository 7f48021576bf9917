"""Exception hierarchy shared by all histmatch modules."""


class HistMatchError(Exception):
    """Base class for every error raised by the package."""


class FactorizationError(HistMatchError):
    """Covariance matrix could not be Cholesky-factorized even after jitter."""


class InitializationError(HistMatchError):
    """Hyperparameter chain could not start from a finite log-posterior."""


class DegenerateVarianceError(HistMatchError, ZeroDivisionError):
    """A standardization was requested with zero total variance."""


class ArityError(HistMatchError, ValueError):
    """Too few outputs for an order-statistic implausibility."""


class ObjectiveError(HistMatchError):
    """Sampler objective returned a value outside its contract."""


class FlatObjectiveError(HistMatchError):
    """Every initial sample has zero objective: the NROY space looks empty."""


class InsufficientCandidatesError(HistMatchError, ValueError):
    """Batch larger than the candidate set."""


class DomainError(HistMatchError, ValueError):
    """Point lies outside the domain of a reference simulator."""


class ParseError(HistMatchError, ValueError):
    """Malformed input file."""


class ConfigError(HistMatchError, ValueError):
    """Invalid experiment configuration; message starts with the field path."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class SimulatorError(HistMatchError):
    """Simulator failed on a batch; ``state`` is the last completed wave."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state
