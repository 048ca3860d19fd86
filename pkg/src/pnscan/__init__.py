"""PnS-CAN simulator: key agreement over a wired-AND bus, the probe-side timing
attack against it, countermeasures and leakage-aware group ordering."""

__version__ = "0.1.0"

from .errors import PnSError, ScenarioError
from .network import CanBus, NodeConfig
from .scenario import Scenario

__all__ = ["CanBus", "NodeConfig", "PnSError", "Scenario", "ScenarioError", "__version__"]
