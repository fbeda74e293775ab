"""Shared vocabulary for the dual-process driving stack.

Everything here is an immutable value except :class:`SnapshotBoard`, which is
the single cross-task mutation point of the live runtime.  All other modules
build on these types, so this module must stay dependency-free apart from the
standard library.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, Optional

SPEED_MAX = 5.0          # m/s, ceiling for every vehicle
CONFLICT_TIME_CAP = 10.0  # s, cap for the conflict feature
EHMI_MAX_LEN = 64

EHMI_FASTER = "I will be Faster"
EHMI_SLOWER = "I will be Slower"
EHMI_MAINTAIN = "Maintaining"

ACCEL_ACCELERATE = 2.0   # m/s^2
ACCEL_DECELERATE = -3.0  # m/s^2, stops from 5 m/s within ~4.2 m


class DrivingStyle(Enum):
    GENERAL = "general"
    AGGRESSIVE = "aggressive"
    CONSERVATIVE = "conservative"


class Intention(Enum):
    YIELD = "yield"
    RUSH = "rush"


class MetaAction(Enum):
    ACCELERATE = "ACCELERATE"
    DECELERATE = "DECELERATE"
    MAINTAIN = "MAINTAIN"


class EpisodeOutcome(Enum):
    SUCCESS = "success"
    COLLISION = "collision"
    DEADLOCK = "deadlock"
    TIMEOUT = "timeout"


class VocabularyError(ValueError):
    """A label fell outside one of the closed vocabularies."""


class RecordError(ValueError):
    """A serialized memory record could not be decoded."""

    def __init__(self, message: str, line_no: int = 1):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


# "normal" is the population label used by the simulated-driver tables; it is
# the same bucket as the default "general" style.
_STYLE_LABELS = {
    "general": DrivingStyle.GENERAL,
    "normal": DrivingStyle.GENERAL,
    "aggressive": DrivingStyle.AGGRESSIVE,
    "conservative": DrivingStyle.CONSERVATIVE,
}

_INTENTION_LABELS = {"yield": Intention.YIELD, "rush": Intention.RUSH}

_ACTION_LABELS = {
    "accelerate": MetaAction.ACCELERATE,
    "decelerate": MetaAction.DECELERATE,
    "maintain": MetaAction.MAINTAIN,
}


def parse_style(label: str) -> DrivingStyle:
    try:
        return _STYLE_LABELS[label.strip().lower()]
    except (KeyError, AttributeError):
        raise VocabularyError(f"unknown driving style: {label!r}") from None


def parse_intention(label: str) -> Intention:
    try:
        return _INTENTION_LABELS[label.strip().lower()]
    except (KeyError, AttributeError):
        raise VocabularyError(f"unknown intention: {label!r}") from None


def parse_action(label: str) -> MetaAction:
    try:
        return _ACTION_LABELS[label.strip().lower()]
    except (KeyError, AttributeError):
        raise VocabularyError(f"unknown action: {label!r}") from None


_ACCEL_BY_ACTION = {
    MetaAction.ACCELERATE: ACCEL_ACCELERATE,
    MetaAction.DECELERATE: ACCEL_DECELERATE,
    MetaAction.MAINTAIN: 0.0,
}


def action_to_accel(action: MetaAction) -> float:
    """Longitudinal acceleration command for a meta action, in m/s^2."""
    return _ACCEL_BY_ACTION[action]


def clamp_ehmi(text: str) -> str:
    """eHMI payloads are free text but capped at 64 characters."""
    return text[:EHMI_MAX_LEN]


@dataclass(frozen=True)
class Instruction:
    """A human instruction relayed to the ego vehicle. Empty text = none."""

    text: str = ""
    issued_at: float = 0.0
    source: str = ""

    def is_empty(self) -> bool:
        return self.text == ""


EMPTY_INSTRUCTION = Instruction()


@dataclass(frozen=True)
class ScenarioDescription:
    """Standardized 9-value numeric state of the ego/opponent pair.

    Order: [x_av, y_av, vx_av, vy_av, x_hv, y_hv, vx_hv, vy_hv, c] with
    positions in m, velocity components in m/s, and c the conflict feature in
    seconds (capped to [0, 10]).
    """

    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) != 9:
            raise ValueError(f"scenario length != 9 (got {len(vals)})")
        for i in (2, 3, 6, 7):
            if abs(vals[i]) > SPEED_MAX + 1e-9:
                raise ValueError(f"speed component {i} out of range: {vals[i]}")
        c = min(max(vals[8], 0.0), CONFLICT_TIME_CAP)
        object.__setattr__(self, "values", vals[:8] + (c,))

    @property
    def av_speed(self) -> float:
        return (self.values[2] ** 2 + self.values[3] ** 2) ** 0.5

    @property
    def hv_speed(self) -> float:
        return (self.values[6] ** 2 + self.values[7] ** 2) ** 0.5

    @property
    def conflict_time(self) -> float:
        return self.values[8]


@dataclass(frozen=True)
class ExperienceDescription:
    """Textual half of a memory unit: what the slow system concluded.

    ``intention`` may be None on the query side before the first inference
    lands; stored units always carry a concrete value.
    """

    intention: Optional[Intention]
    style: DrivingStyle
    instruction: str = ""
    ehmi: str = ""


@dataclass(frozen=True)
class MemoryUnit:
    """One stored interaction frame: numeric scenario, textual experience,
    and the action that was taken."""

    scenario: ScenarioDescription
    experience: ExperienceDescription
    action: MetaAction
    episode_id: int
    frame_index: int

    def __post_init__(self):
        if self.episode_id < 0 or self.frame_index < 0:
            raise ValueError("episode_id and frame_index must be >= 0")
        if self.experience.intention is None:
            raise ValueError("stored memory units require a concrete intention")

    @property
    def key(self) -> tuple:
        return (self.episode_id, self.frame_index)


def memory_to_record(m: MemoryUnit) -> str:
    """Encode a memory unit as one JSONL record with a fixed key order."""
    payload = {
        "episode": m.episode_id,
        "frame": m.frame_index,
        "style": m.experience.style.value,
        "scenario": list(m.scenario.values),
        "experience": {
            "intention": m.experience.intention.value,
            "style": m.experience.style.value,
            "instruction": m.experience.instruction,
            "ehmi": m.experience.ehmi,
        },
        "action": m.action.value,
    }
    return json.dumps(payload, separators=(", ", ": "))


def record_to_memory(line: str, line_no: int = 1) -> MemoryUnit:
    """Decode one JSONL record. Raises :class:`RecordError` on any defect."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RecordError(f"invalid JSON ({exc.msg})", line_no) from None
    if not isinstance(obj, dict):
        raise RecordError("record is not an object", line_no)
    try:
        episode = obj["episode"]
        frame = obj["frame"]
        style_label = obj["style"]
        scenario = obj["scenario"]
        experience = obj["experience"]
        action_label = obj["action"]
    except KeyError as exc:
        raise RecordError(f"missing field {exc.args[0]!r}", line_no) from None
    if not isinstance(episode, int) or not isinstance(frame, int):
        raise RecordError("episode/frame must be integers", line_no)
    if not isinstance(scenario, list) or len(scenario) != 9:
        raise RecordError("scenario length != 9", line_no)
    if not isinstance(experience, dict):
        raise RecordError("experience must be an object", line_no)
    try:
        exp = ExperienceDescription(
            intention=parse_intention(experience["intention"]),
            style=parse_style(experience["style"]),
            instruction=str(experience.get("instruction", "")),
            ehmi=str(experience.get("ehmi", "")),
        )
        block_style = parse_style(style_label)
        unit = MemoryUnit(
            scenario=ScenarioDescription(tuple(scenario)),
            experience=exp,
            action=parse_action(action_label),
            episode_id=episode,
            frame_index=frame,
        )
    except KeyError as exc:
        raise RecordError(f"missing experience field {exc.args[0]!r}", line_no) from None
    except (VocabularyError, ValueError) as exc:
        raise RecordError(str(exc), line_no) from None
    if block_style is not exp.style:
        raise RecordError(
            f"style mismatch: block {block_style.value!r} vs experience {exp.style.value!r}",
            line_no,
        )
    return unit


@dataclass(frozen=True)
class SharedSnapshot:
    """The cross-task state board: one consistent tuple per version.

    ``intention`` is None until the slow system publishes its first estimate;
    ``instruction`` is the empty instruction until a human speaks up.
    """

    state: ScenarioDescription
    action: MetaAction = MetaAction.MAINTAIN
    intention: Optional[Intention] = None
    style: DrivingStyle = DrivingStyle.GENERAL
    instruction: Instruction = EMPTY_INSTRUCTION
    ehmi: str = ""
    version: int = 0


_SNAPSHOT_FIELDS = ("state", "action", "intention", "style", "instruction", "ehmi")


class SnapshotBoard:
    """Tear-free shared snapshot with monotone versions.

    Writers replace whole fields under a lock; readers always get the frozen
    snapshot object of a single version.  Every write appends one log line per
    changed field: ``t,writer,field,version``.
    """

    def __init__(self, initial_state: ScenarioDescription):
        self._lock = threading.Lock()
        self._current = SharedSnapshot(state=initial_state, version=1)
        self.log: list[str] = []

    def read(self) -> SharedSnapshot:
        with self._lock:
            return self._current

    def update(self, writer: str, t: float, **fields) -> SharedSnapshot:
        unknown = set(fields) - set(_SNAPSHOT_FIELDS)
        if unknown:
            raise ValueError(f"unknown snapshot fields: {sorted(unknown)}")
        if "ehmi" in fields:
            fields["ehmi"] = clamp_ehmi(fields["ehmi"])
        with self._lock:
            version = self._current.version + 1
            self._current = replace(self._current, version=version, **fields)
            for name in fields:
                self.log.append(f"{t:.1f},{writer},{name},{version}")
            return self._current


STYLE_ORDER = (DrivingStyle.GENERAL, DrivingStyle.AGGRESSIVE, DrivingStyle.CONSERVATIVE)


def iter_styles() -> Iterator[DrivingStyle]:
    return iter(STYLE_ORDER)
