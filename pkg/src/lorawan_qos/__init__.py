"""Position-aware PLR model, capacity-driven MCS allocation and a class A
LoRaWAN simulator for a single-gateway cell."""

from __future__ import annotations

__version__ = "0.1.0"

from .allocator import Allocation, CapacityTable, Criterion, allocate, capacity, capacity_table, verify_allocation
from .geometry import PathLossParams, ack_capture_prob, capture_kernels, capture_outcome
from .model import GroupSpec, LoadVector, PlrProfile, Scenario, plr_at, plr_profile
from .phy import PhyConfig, RadioTiming, airtime, build_mcs_table
from .scenario_io import load_experiment, load_scenario
from .sim import SimConfig, SimStats, replicate, run

__all__ = [
    "Allocation",
    "CapacityTable",
    "Criterion",
    "GroupSpec",
    "LoadVector",
    "PathLossParams",
    "PhyConfig",
    "PlrProfile",
    "RadioTiming",
    "Scenario",
    "SimConfig",
    "SimStats",
    "ack_capture_prob",
    "airtime",
    "allocate",
    "build_mcs_table",
    "capacity",
    "capacity_table",
    "capture_kernels",
    "capture_outcome",
    "load_experiment",
    "load_scenario",
    "plr_at",
    "plr_profile",
    "replicate",
    "run",
    "verify_allocation",
]
