class AscError(Exception):
    """Base class for every error raised by the package."""


class InputError(AscError):
    """Malformed or inconsistent input files / arrays."""


class ConfigError(AscError):
    """Invalid parameter combination."""


class NumericalError(AscError):
    """A numerical stage could not produce a valid result."""


class DegenerateError(NumericalError):
    """The data make a quantity undefined (zero covariance, coincident centers, ...)."""


class PipelineError(AscError):
    """Failure inside run_asc, tagged with the pipeline step that raised it."""

    def __init__(self, step: int, stage: str, cause: Exception):
        self.step = step
        self.stage = stage
        self.cause = cause
        super().__init__(f"step {step} ({stage}): {cause}")
