"""Discrete-event simulator for clustered sensor-network routing under sinkhole attack."""
from .core import (BS_ID, ClusterTable, LevelBand, NodeState, Packet, PacketKind, Position,
                   Role, ThresholdParams, ch_threshold, distance, joules_to_mwh, pdr)
from .adversary import AttackConfig
from .scenario import Scenario, load_scenario, parse_scenario
from .runner import SweepSpec, run_once, run_sweep, summarize

__version__ = "0.1.0"
