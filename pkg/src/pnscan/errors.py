"""Exception hierarchy shared by the simulator, protocol and harness."""


class PnSError(Exception):
    """Base class for all errors raised by :mod:`pnscan`."""


class InvalidInputError(PnSError, ValueError):
    pass


class DegenerateNetworkError(PnSError):
    """The resistive network has no conductance path at the observer."""


class FramingError(PnSError):
    pass


class ExhaustionError(PnSError):
    """A key-agreement session hit its frame cap before harvesting enough bits."""


class InsufficientHeaderError(PnSError):
    pass


class EstimationError(PnSError):
    pass


class PolicyViolationError(PnSError):
    pass


class BudgetError(PnSError):
    """Requested jitter exceeds the permissible jitter budget."""


class AuthorizationError(PnSError):
    pass


class IncompleteMapError(PnSError):
    pass


class NoSpanningTreeError(PnSError):
    pass


class ScenarioError(PnSError):
    """Scenario file failed validation; ``path`` locates the offending field."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class DependencyError(PnSError):
    pass
