"""Exception hierarchy shared by every module.

The CLI maps the three top-level families to exit codes: ``ConfigError`` -> 2,
``DataError`` -> 3, ``NumericError`` -> 4.
"""


class InceptionCapsuleError(Exception):
    pass


class ConfigError(InceptionCapsuleError):
    pass


class DimensionError(ConfigError, ValueError):
    pass


class ContractError(InceptionCapsuleError, ValueError):
    pass


class NumericError(InceptionCapsuleError, ArithmeticError):
    pass


class DivergenceError(NumericError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class DataError(InceptionCapsuleError):
    pass


class PnmMagicError(DataError):
    pass


class PnmMaxvalError(DataError):
    pass


class PnmTruncatedError(DataError):
    pass


class CheckpointError(DataError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointLayoutError(CheckpointError):
    """Shape table and payload disagree (zero dims, trailing bytes, bad names)."""
