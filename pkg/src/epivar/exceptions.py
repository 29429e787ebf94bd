"""Exception hierarchy shared across the package."""


class EpivarError(Exception):
    """Base class for all package errors."""


class InputError(EpivarError, ValueError):
    """Malformed or inconsistent user input (shapes, ranges, tags)."""


class IllConditionedError(EpivarError, ArithmeticError):
    """A kernel system could not be factorized even after jitter escalation."""


class TrainingDivergedError(EpivarError, ArithmeticError):
    """Gradient descent produced a non-finite or exploding loss."""

    def __init__(self, epoch, loss, context=None):
        self.epoch = epoch
        self.loss = loss
        self.context = dict(context or {})
        super().__init__(epoch, loss)

    def __str__(self):
        # context is filled in by callers (trial, member, batch) as the error propagates
        where = "".join(f", {k}={v}" for k, v in self.context.items())
        return f"training diverged at epoch {self.epoch} (loss={self.loss!r}{where})"


class InsufficientReplicationsError(EpivarError, ValueError):
    """Too few replications/trials to form a sample variance."""


class UnsupportedLambdaError(EpivarError, ValueError):
    """The requested quantity is undefined for the model's regularization."""


class BatchTooSmallError(EpivarError, ValueError):
    """Not enough data points to form the requested number of batches."""


class ParseError(EpivarError, ValueError):
    """A CSV or config file could not be parsed."""


class UnsupportedSourceError(EpivarError, ValueError):
    """The operation does not apply to the configured data source."""


class ConfigError(InputError):
    """A run configuration is missing fields or contradicts itself."""


class RunError(EpivarError):
    """An estimator or oracle failed inside an experiment run.

    Wraps the underlying error (``cause``) together with the method name and
    the configuration that produced it.
    """

    def __init__(self, method, config_echo, cause):
        self.method = method
        self.config_echo = config_echo
        self.cause = cause
        super().__init__(method, cause)

    def __str__(self):
        return f"{self.method} failed: {type(self.cause).__name__}: {self.cause}\n  config: {self.config_echo}"
