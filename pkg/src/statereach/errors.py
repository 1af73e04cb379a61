class ConfigError(ValueError):
    """Unknown identifiers or inconsistent configuration values."""


class UsageError(ValueError):
    """An API was called with arguments violating its precondition."""


class SimulationDiverged(RuntimeError):
    def __init__(self, state, message="simulation produced a non-finite state"):
        super().__init__(message)
        self.state = state


class TrainingError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
