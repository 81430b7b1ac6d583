class HintError(Exception):
    """Base class for every error raised by the hint package"""


class DimensionError(HintError, ValueError):
    """Input shape does not match the operator it is fed to"""


class SingularityError(HintError):
    """Evaluation point sits on a singularity of a Möbius block"""


class CacheMismatchError(HintError):
    """Backward pass received a cache produced by another object"""


class ConfigError(HintError):
    """Invalid run configuration"""


class ProblemError(HintError, ValueError):
    """Inference problem lacks what the requested operation needs"""


class NumericalError(HintError):
    """Loss or state became non-finite"""


class IntegrationError(NumericalError):
    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (t={time:.6g})")
        self.time = time


class CheckpointError(HintError):
    """Checkpoint file is missing, truncated, corrupt or of another version"""


class OracleError(HintError):
    """Reference computation received singular, non-SPD or too little input"""


class FilterStepError(HintError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"Filtering failed at step {step}: {cause}")
        self.step = step
        self.cause = cause


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def exit_code_for(error: BaseException) -> int:
    """Map an exception raised by a CLI command to its process exit code"""
    if isinstance(error, (ConfigError, DimensionError, ProblemError)):
        return EXIT_CONFIG
    if isinstance(error, FilterStepError):
        return exit_code_for(error.cause)
    if isinstance(error, NumericalError):
        return EXIT_NUMERIC
    if isinstance(error, (CheckpointError, OSError)):
        return EXIT_IO
    return EXIT_NUMERIC
