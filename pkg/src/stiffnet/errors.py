"""Exception hierarchy shared by all stiffnet modules."""


class StiffnetError(Exception):
    """Base class for every error raised by this package."""


class DomainError(StiffnetError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ShapeError(StiffnetError, ValueError):
    """Array dimensions do not agree."""


class ConfigurationError(StiffnetError, ValueError):
    """A mechanism, config file or option set is inconsistent."""


class MechanismParseError(StiffnetError, ValueError):
    def __init__(self, message, line_number=None, line=None):
        self.line_number = line_number
        self.line = line
        if line_number is not None:
            message = f"line {line_number}: {message}: {line!r}"
        super().__init__(message)


class StepFailure(StiffnetError):
    """Newton iteration of an implicit step did not converge."""


class IntegrationError(StiffnetError):
    def __init__(self, message, time=None):
        self.time = time
        if time is not None:
            message = f"{message} (t = {time:.17g} s)"
        super().__init__(message)


class EmptyDatasetError(StiffnetError, ValueError):
    pass


class NumericError(StiffnetError, FloatingPointError):
    def __init__(self, message, layer=None):
        self.layer = layer
        if layer is not None:
            message = f"{message} (layer {layer})"
        super().__init__(message)


class OptimizationError(StiffnetError):
    pass


class TrainingError(StiffnetError):
    """One or more parallel channel trainings failed."""

    def __init__(self, failures):
        self.failures = dict(failures)
        names = ", ".join(str(c) for c in sorted(self.failures))
        super().__init__(f"training failed for channel(s) {names}")


class RolloutError(StiffnetError):
    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class EnforcementError(StiffnetError, ValueError):
    pass
