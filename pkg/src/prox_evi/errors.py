class StateError(RuntimeError):
    """Operation called on an object in the wrong state (empty tape, missing field)."""


class TrainingError(RuntimeError):
    """Non-finite values encountered during optimisation."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
