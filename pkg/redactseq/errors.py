"""Exception hierarchy shared by every redactseq module.

Each family carries the exit code the command line reports for it.
"""


class RedactSeqError(Exception):
    """Base of every error raised on purpose by redactseq."""

    exit_code = 1


# Configuration (exit 2)


class ConfigError(RedactSeqError, ValueError):
    """Invalid or inconsistent configuration value."""

    exit_code = 2


class EmptyCorpusError(ConfigError):
    """A corpus with no tokens was given where one is required."""


class EmptySplitError(ConfigError):
    """A requested corpus split came out empty."""


# I/O and corrupt artifacts (exit 3)


class ArtifactIOError(RedactSeqError, OSError):
    """An input artifact could not be read or written."""

    exit_code = 3


class CheckpointCorruptError(ArtifactIOError):
    """Checkpoint is truncated or its content does not match its header."""


class I2b2FormatError(ArtifactIOError):
    """An i2b2 XML record could not be parsed."""

    def __init__(self, filename, message):
        super().__init__(f"{filename}: {message}")
        self.filename = filename


# Numerical aborts (exit 4)


class NumericalError(RedactSeqError, ArithmeticError):
    """Computation produced values training can not continue from."""

    exit_code = 4


class DegenerateBatchError(NumericalError):
    """Loss requested over positions whose weights are all zero."""


class OptimizerError(NumericalError):
    """The optimizer received a non-finite gradient."""

    def __init__(self, parameter, message=None):
        super().__init__(message or f"non-finite gradient for parameter '{parameter}'")
        self.parameter = parameter


class NonFiniteLossError(NumericalError):
    """Training loss became NaN or infinite."""

    def __init__(self, step_index, batch_id, loss):
        super().__init__(f"non-finite loss {loss!r} at step {step_index} (batch {batch_id})")
        self.step_index = step_index
        self.batch_id = batch_id
        self.loss = loss


# Artifact mismatch (exit 5)


class ArtifactMismatchError(RedactSeqError):
    """Checkpoint and vocabulary do not belong together."""

    exit_code = 5


# Contract violations


class DimensionError(RedactSeqError, ValueError):
    """Tensor shapes do not agree."""


class SequenceLengthError(DimensionError):
    """A sequence exceeds the model's maximum length."""


class TracingError(RedactSeqError, RuntimeError):
    """Backward was requested for a value that was not traced."""


class InvalidIdError(RedactSeqError, ValueError):
    """A token id is not assigned in the vocabulary."""


class AlignmentError(RedactSeqError, ValueError):
    """Predicted and gold token sequences have different lengths."""


# vim: et ts=4 sw=4
