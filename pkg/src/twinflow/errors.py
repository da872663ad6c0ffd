"""Exception hierarchy shared across the package."""


class TwinflowError(Exception):
    """Base class for all package errors."""


class ShapeError(TwinflowError):
    """Operand extents do not line up."""


class ContractError(TwinflowError):
    """A documented precondition was violated."""


class NumericError(TwinflowError):
    """Non-finite values where finite ones are required."""


class ScheduleError(TwinflowError):
    """Sampler time sequence is not strictly decreasing from 1 to 0."""


class ConfigError(TwinflowError):
    """Invalid or inconsistent configuration."""


class CheckpointError(TwinflowError):
    """Checkpoint container is corrupt or does not match the config."""


class TrainingDiverged(TwinflowError):
    """Loss became non-finite during a training step."""
