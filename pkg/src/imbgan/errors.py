"""Exception types shared across the package."""


class IdxFormatError(ValueError):
    """IDX file has a wrong magic number or otherwise malformed header."""


class IdxLengthError(ValueError):
    """IDX payload is shorter or longer than its header promises."""


class DataConsistencyError(ValueError):
    """Paired image/label data disagree (e.g. different sample counts)."""


class CapacityError(ValueError):
    """A subsampling request asks for more samples than a class holds."""


class ShapeError(ValueError):
    """An input or parameter tensor has an incompatible shape."""


class TransferError(ValueError):
    """Weight transfer between networks hit a name/shape mismatch."""


class ContractError(ValueError):
    """A training-loop data contract was violated (e.g. forbidden label)."""


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given confusion matrix."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss.

    Carries the epoch index at which divergence was detected and, when
    raised from a training loop, the history recorded up to that point.
    """

    def __init__(self, message, epoch=None, history=None):
        super().__init__(message)
        self.epoch = epoch
        self.history = history


class CheckpointError(ValueError):
    """A checkpoint file is malformed or does not match the architecture."""


class ConfigError(ValueError):
    """Experiment configuration is syntactically or semantically invalid."""
