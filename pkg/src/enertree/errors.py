"""Exception types shared across the package."""


class DomainError(ValueError):
    """An operation was called outside its stated domain (bad id, incomplete
    network, root where a non-root is required, ...)."""


class InvariantError(RuntimeError):
    """An internal structural invariant would be violated (cycle, second
    parent, arity overflow). Raised before the mutation is applied."""


class ConfigError(ValueError):
    """Invalid experiment configuration or CLI arguments."""


class ReplayMismatch(RuntimeError):
    """Replaying a trace did not reproduce the recorded end-state digest."""
