"""Drift-plus-penalty scheduling for mobile peer-to-peer wireless networks."""

from .config import ConfigError, ExperimentConfig, load_config
from .scheduler import (InvariantViolation, Network, SlotDecision, UserConfig,
                        VirtualQueueState, decide, step)
from .topology import GridSpec, MobileGrid, TopologyState
from .utility import LogOnePlus, PiecewiseLinear, PureLog

__all__ = [
    "ConfigError", "ExperimentConfig", "GridSpec", "InvariantViolation", "LogOnePlus",
    "MobileGrid", "Network", "PiecewiseLinear", "PureLog", "SlotDecision", "TopologyState",
    "UserConfig", "VirtualQueueState", "decide", "load_config", "step",
]
