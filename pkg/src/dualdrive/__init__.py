"""Dual-process driving interaction stack.

A fast system retrieves experienced actions from a style-partitioned episodic
memory while a slow system infers the opponent's intention, driving style and
an outward-facing eHMI message; both run concurrently against a shared
snapshot board inside a multi-scenario longitudinal traffic simulator.
"""

from dualdrive.core import (
    DrivingStyle,
    EpisodeOutcome,
    ExperienceDescription,
    Instruction,
    Intention,
    MemoryUnit,
    MetaAction,
    ScenarioDescription,
    SharedSnapshot,
    SnapshotBoard,
    action_to_accel,
    memory_to_record,
    parse_action,
    parse_intention,
    parse_style,
    record_to_memory,
)

__all__ = [
    "DrivingStyle",
    "EpisodeOutcome",
    "ExperienceDescription",
    "Instruction",
    "Intention",
    "MemoryUnit",
    "MetaAction",
    "ScenarioDescription",
    "SharedSnapshot",
    "SnapshotBoard",
    "action_to_accel",
    "memory_to_record",
    "parse_action",
    "parse_intention",
    "parse_style",
    "record_to_memory",
]

__version__ = "0.1.0"
