"""Exception types mapped to CLI exit codes."""


class ValidationError(ValueError):
    """Bad input: schema, IDs, levels, manifest keys or violated preconditions."""


class ConvergenceError(RuntimeError):
    """An iterative solver or integrator did not reach its tolerance."""


class ReplicaError(RuntimeError):
    def __init__(self, replica: int, cause: BaseException):
        super().__init__(f"replica {replica} failed: {cause}")
        self.replica = replica
        self.cause = cause
