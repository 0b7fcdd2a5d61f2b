"""Exception types shared across the package."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class ConfigurationError(ValueError):
    """A required registration (chain, binding, keypoint) is missing."""


class ScheduleCorruptionError(ArithmeticError):
    """The noise schedule produced an unusable cumulative product."""


class NumericError(ArithmeticError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step k={step}: {message}")
        self.step = step


class GuidedStepError(RuntimeError):
    def __init__(self, step: int, cause: BaseException):
        super().__init__(f"cost evaluation failed at denoising step k={step}: {cause}")
        self.step = step


class SamplingError(RuntimeError):
    """Raised by the guided sampler with partial diagnostics attached."""

    def __init__(self, step_reached: int, last_cost: float | None, cause: BaseException):
        super().__init__(
            f"sampling aborted at k={step_reached} (last cost={last_cost}): {cause}"
        )
        self.step_reached = step_reached
        self.last_cost = last_cost


class SchedulingContractError(ValueError):
    """An active cost term lacks the bindings it needs."""

    def __init__(self, term: str, message: str):
        super().__init__(f"{term}: {message}")
        self.term = term


class PlanValidationError(ValueError):
    """A stage plan refers to undeclared entities or is malformed."""


class TrackingError(LookupError):
    def __init__(self, keypoint_id: int, message: str = "object-frame offset not initialized"):
        super().__init__(f"keypoint {keypoint_id}: {message}")
        self.keypoint_id = keypoint_id


class SchemaError(ValueError):
    """A remote scheduler response does not follow the guidance document schema."""
