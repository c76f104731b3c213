class FactorRangeError(ValueError):
    """A generative factor lies outside its configured range."""


class TaskDefinitionError(ValueError):
    """A task string or definition cannot be interpreted."""


class UnsatisfiableTaskError(ValueError):
    """Rejection sampling could not balance the task labels within its draw budget."""
