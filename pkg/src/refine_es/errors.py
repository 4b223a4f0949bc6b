"""Package exception types."""


class ContractError(ValueError):
    """A precondition or dimension contract was violated."""


class RolloutError(RuntimeError):
    """An environment produced a non-finite value mid-episode."""


class PlanError(ValueError):
    """An experiment plan file failed validation."""
