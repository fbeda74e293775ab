"""Scene geometry, longitudinal kinematics and conflict metrics.

Scenes are fixed paths with a single conflict point per path pair.  Control is
longitudinal only: vehicles move along their polyline at a clamped speed and
halt when they reach the end of it.  The world is owned by exactly one task;
other tasks see read-only snapshots.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from dualdrive.core import (
    ACCEL_DECELERATE as ACCEL_BRAKE,
    CONFLICT_TIME_CAP,
    SPEED_MAX,
    DrivingStyle,
    EpisodeOutcome,
    Intention,
    ScenarioDescription,
    STYLE_ORDER,
)

DT = 0.1                   # s, simulation tick
VEHICLE_LENGTH = 4.0       # m
VEHICLE_WIDTH = 1.8        # m
ZONE_RADIUS = 3.0          # m, conflict zone extent
COLLISION_DIST = 2.0       # m, center distance declaring a collision
DEADLOCK_WINDOW = 5.0      # s of mutual standstill before the conflict
STANDSTILL_SPEED = 0.1     # m/s
EPISODE_TIMEOUT = 60.0     # s
PATH_SAMPLE_STEP = 0.5     # m, max polyline spacing

PASSED = math.inf          # marker returned once a vehicle is beyond its conflict point


class SimulationError(RuntimeError):
    """Raised on contract violations inside the environment."""


class ScenarioKind(Enum):
    INTERSECTION = "intersection"
    ROUNDABOUT = "roundabout"
    MERGING = "merging"


def parse_scenario_kind(label: str) -> ScenarioKind:
    try:
        return ScenarioKind(label.strip().lower())
    except ValueError:
        raise SimulationError(f"unknown scenario kind: {label!r}") from None


class PathGeometry:
    """A fixed route: polyline sampled at <= 0.5 m plus conflict arclengths.

    ``lane_group`` marks paths sharing one physical lane (ring arcs, merge
    ramps): vehicles in the same group are same-lane traffic for following.
    """

    def __init__(self, pid: int, polyline: np.ndarray, conflict_arclength: dict[int, float],
                 lane_group: Optional[int] = None):
        if len(polyline) < 2:
            raise SimulationError("polyline needs at least 2 points")
        self.id = pid
        self.lane_group = lane_group if lane_group is not None else pid
        self.polyline = np.asarray(polyline, dtype=float)
        seg = np.diff(self.polyline, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0):
            raise SimulationError("polyline arclength must be strictly increasing")
        self.cum_s = np.concatenate(([0.0], np.cumsum(seg_len)))
        self.length = float(self.cum_s[-1])
        self.conflict_arclength = dict(conflict_arclength)
        for other, s_star in self.conflict_arclength.items():
            if not 0.0 <= s_star <= self.length:
                raise SimulationError(
                    f"conflict point {s_star} for path {other} outside [0, {self.length}]"
                )

    def _locate(self, s: float) -> tuple[int, float]:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cum_s, s, side="right")) - 1
        i = min(max(i, 0), len(self.cum_s) - 2)
        span = self.cum_s[i + 1] - self.cum_s[i]
        frac = (s - self.cum_s[i]) / span if span > 0 else 0.0
        return i, frac

    def point_at(self, s: float) -> tuple[float, float]:
        i, frac = self._locate(s)
        p = self.polyline[i] + frac * (self.polyline[i + 1] - self.polyline[i])
        return float(p[0]), float(p[1])

    def tangent_at(self, s: float) -> tuple[float, float]:
        i, _ = self._locate(s)
        d = self.polyline[i + 1] - self.polyline[i]
        n = math.hypot(d[0], d[1])
        return float(d[0] / n), float(d[1] / n)

    def heading_at(self, s: float) -> float:
        tx, ty = self.tangent_at(s)
        return math.atan2(ty, tx)


def _straight_path(pid: int, p0, p1, conflicts: dict[int, float],
                   lane_group: Optional[int] = None) -> PathGeometry:
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    length = float(np.hypot(*(p1 - p0)))
    n = max(2, int(math.ceil(length / PATH_SAMPLE_STEP)) + 1)
    ts = np.linspace(0.0, 1.0, n)[:, None]
    return PathGeometry(pid, p0[None, :] * (1 - ts) + p1[None, :] * ts, conflicts, lane_group)


def _arc_path(pid: int, center, radius: float, phi0: float, phi1: float,
              conflicts: dict[int, float], lane_group: Optional[int] = None) -> PathGeometry:
    length = abs(phi1 - phi0) * radius
    n = max(2, int(math.ceil(length / PATH_SAMPLE_STEP)) + 1)
    phis = np.linspace(phi0, phi1, n)
    pts = np.stack([center[0] + radius * np.cos(phis), center[1] + radius * np.sin(phis)], axis=1)
    return PathGeometry(pid, pts, conflicts, lane_group)


@dataclass
class VehicleBody:
    id: int
    role: str                      # "AV" | "HV"
    path_id: int
    s: float
    v: float
    style: Optional[DrivingStyle] = None
    intention: Optional[Intention] = None
    length: float = VEHICLE_LENGTH
    width: float = VEHICLE_WIDTH
    arrived: bool = False


@dataclass(frozen=True)
class ConflictZone:
    center: tuple[float, float]
    radius: float = ZONE_RADIUS


@dataclass(frozen=True)
class ZoneEvent:
    t: float
    vehicle_id: int
    zone: tuple[int, int]          # (path_id_a, path_id_b), sorted
    kind: str                      # "enter" | "exit"
    pos: tuple[float, float]
    gaps: dict                     # other vehicle id -> center distance at this instant


@dataclass
class World:
    kind: ScenarioKind
    paths: dict[int, PathGeometry]
    vehicles: dict[int, VehicleBody]
    zones: dict[tuple[int, int], ConflictZone]
    rng_seed: int
    tick: int = 0
    events: list = field(default_factory=list)
    standstill_s: float = 0.0

    @property
    def t(self) -> float:
        return self.tick * DT

    @property
    def av(self) -> VehicleBody:
        return self.vehicles[0]

    def hv_ids(self) -> list[int]:
        return sorted(vid for vid, v in self.vehicles.items() if v.role == "HV")

    def position_of(self, vid: int) -> tuple[float, float]:
        veh = self.vehicles[vid]
        return self.paths[veh.path_id].point_at(veh.s)

    def heading_of(self, vid: int) -> float:
        veh = self.vehicles[vid]
        return self.paths[veh.path_id].heading_at(veh.s)

    def zone_for_pair(self, vid_a: int, vid_b: int) -> Optional[tuple[int, int]]:
        pa = self.vehicles[vid_a].path_id
        pb = self.vehicles[vid_b].path_id
        key = (min(pa, pb), max(pa, pb))
        return key if key in self.zones else None


# --- scene construction -----------------------------------------------------

CONFLICT_LEG = 45.0    # m of approach before the conflict point
PATH_LENGTH = 60.0     # m total path length
_HV_OFFSETS = (0.0, 2.5, -2.5)   # lateral spacing between parallel approaches


def _intersection_paths(n_hv: int) -> dict[int, PathGeometry]:
    av_conflicts = {k + 1: CONFLICT_LEG + _HV_OFFSETS[k] for k in range(n_hv)}
    paths = {0: _straight_path(0, (-CONFLICT_LEG, 0.0), (PATH_LENGTH - CONFLICT_LEG, 0.0), av_conflicts)}
    for k in range(n_hv):
        x = _HV_OFFSETS[k]
        paths[k + 1] = _straight_path(
            k + 1, (x, -CONFLICT_LEG), (x, PATH_LENGTH - CONFLICT_LEG), {0: CONFLICT_LEG}
        )
    return paths


def _roundabout_paths(n_hv: int) -> dict[int, PathGeometry]:
    # Ring of radius 12 m; the entry lane crosses it once at the origin with a
    # 50 degree incidence.  The chord's second circle crossing lies ~21 m of
    # arc past the conflict, beyond the 15 m circulating arc that the ring
    # vehicles actually travel, so each path pair has exactly one conflict
    # point and the lanes separate fast enough that a vehicle stopped a few
    # meters short is clear of through traffic.
    radius = 12.0
    center = (0.0, radius)
    incidence = math.radians(50.0)
    d = (math.cos(incidence), math.sin(incidence))
    av_conflicts = {k + 1: CONFLICT_LEG for k in range(n_hv)}
    paths = {0: _straight_path(
        0, (-CONFLICT_LEG * d[0], -CONFLICT_LEG * d[1]),
        ((PATH_LENGTH - CONFLICT_LEG) * d[0], (PATH_LENGTH - CONFLICT_LEG) * d[1]),
        av_conflicts,
    )}
    phi_t = -math.pi / 2.0   # ring point at the origin
    for k in range(n_hv):
        phi0 = phi_t - CONFLICT_LEG / radius
        phi1 = phi_t + (PATH_LENGTH - CONFLICT_LEG) / radius
        paths[k + 1] = _arc_path(k + 1, center, radius, phi0, phi1, {0: CONFLICT_LEG},
                                 lane_group=1)
    return paths


def _merging_paths(n_hv: int) -> dict[int, PathGeometry]:
    # 35 degree convergence keeps the approach lanes more than a car width
    # apart outside a ~3.5 m neighborhood of the merge point.
    angle = math.radians(35.0)
    d = (math.cos(angle), math.sin(angle))
    av_conflicts = {k + 1: CONFLICT_LEG for k in range(n_hv)}
    paths = {0: _straight_path(0, (-CONFLICT_LEG, 0.0), (PATH_LENGTH - CONFLICT_LEG, 0.0), av_conflicts)}
    for k in range(n_hv):
        start = (-CONFLICT_LEG * d[0], -CONFLICT_LEG * d[1])
        end = ((PATH_LENGTH - CONFLICT_LEG) * d[0], (PATH_LENGTH - CONFLICT_LEG) * d[1])
        paths[k + 1] = _straight_path(k + 1, start, end, {0: CONFLICT_LEG}, lane_group=1)
    return paths


_SCENE_BUILDERS = {
    ScenarioKind.INTERSECTION: _intersection_paths,
    ScenarioKind.ROUNDABOUT: _roundabout_paths,
    ScenarioKind.MERGING: _merging_paths,
}

_MIN_SPAWN_GAP = 8.0   # m between vehicles sharing a path at t=0


def build_scenario(kind: ScenarioKind, seed: int, n_hv: int = 1) -> World:
    """Deterministically build a world: AV plus 1..3 styled HVs, each placed
    25-40 m before its conflict point at 2-4 m/s."""
    if n_hv not in (1, 2, 3):
        raise SimulationError(f"n_hv must be 1..3, got {n_hv}")
    rng = random.Random(seed)
    paths = _SCENE_BUILDERS[kind](n_hv)

    zones: dict[tuple[int, int], ConflictZone] = {}
    av_path = paths[0]
    for hv_pid, s_star in av_path.conflict_arclength.items():
        key = (0, hv_pid)
        zones[key] = ConflictZone(center=av_path.point_at(s_star))

    vehicles: dict[int, VehicleBody] = {}
    av_s = CONFLICT_LEG - rng.uniform(25.0, 40.0)
    av_v = rng.uniform(2.0, 4.0)
    vehicles[0] = VehicleBody(id=0, role="AV", path_id=0, s=av_s, v=av_v)

    # roundabout/merging HV paths share one geometry, so spawn gaps must be
    # enforced across them; intersection approaches are laterally offset.
    shared_geometry = kind in (ScenarioKind.ROUNDABOUT, ScenarioKind.MERGING)
    placed: list[float] = []
    for k in range(1, n_hv + 1):
        hv_path = paths[k]
        s_star = hv_path.conflict_arclength[0]
        s0 = s_star - rng.uniform(25.0, 40.0)
        if shared_geometry:
            for _ in range(64):
                if all(abs(s0 - s) >= _MIN_SPAWN_GAP for s in placed):
                    break
                s0 = s_star - rng.uniform(25.0, 40.0)
        placed.append(s0)
        v0 = rng.uniform(2.0, 4.0)
        style = rng.choice(STYLE_ORDER)
        intention = rng.choice((Intention.YIELD, Intention.RUSH))
        vehicles[k] = VehicleBody(
            id=k, role="HV", path_id=k, s=s0, v=v0, style=style, intention=intention
        )

    return World(kind=kind, paths=paths, vehicles=vehicles, zones=zones, rng_seed=seed)


def leader_of(w: World, vid: int) -> Optional[int]:
    """Nearest vehicle ahead in the same lane group, if any."""
    veh = w.vehicles[vid]
    group = w.paths[veh.path_id].lane_group
    best = None
    for other_id, other in w.vehicles.items():
        if other_id == vid or w.paths[other.path_id].lane_group != group:
            continue
        if other.s > veh.s and (best is None or other.s < w.vehicles[best].s):
            best = other_id
    return best


FOLLOW_HEADWAY = 1.5   # s, minimum same-lane time headway
FOLLOW_STANDOFF = 2.0  # m of bumper gap kept at standstill


def following_guard(w: World, vid: int, proposed_accel: float) -> float:
    """Clamp a same-lane follower's acceleration so it never drives into its
    leader; crossing-path conflicts stay the game's business."""
    leader_id = leader_of(w, vid)
    if leader_id is None:
        return proposed_accel
    veh = w.vehicles[vid]
    leader = w.vehicles[leader_id]
    gap = leader.s - veh.s - VEHICLE_LENGTH
    if gap < FOLLOW_STANDOFF + veh.v * FOLLOW_HEADWAY:
        return min(proposed_accel, ACCEL_BRAKE)
    return proposed_accel


# --- kinematics ---------------------------------------------------------------


def step_world(w: World, accel_by_vehicle: dict[int, float], dt: float = DT) -> World:
    """Advance every vehicle one tick (semi-implicit Euler, clamped speeds) and
    append conflict-zone entry/exit events.  Vehicles halt at their path end."""
    unknown = set(accel_by_vehicle) - set(w.vehicles)
    if unknown:
        raise SimulationError(f"unknown vehicle ids in accel map: {sorted(unknown)}")

    prev_pos = {vid: w.position_of(vid) for vid in w.vehicles}
    for vid in sorted(w.vehicles):
        veh = w.vehicles[vid]
        if veh.arrived:
            veh.v = 0.0
            continue
        a = accel_by_vehicle.get(vid, 0.0)
        veh.v = min(max(veh.v + a * dt, 0.0), SPEED_MAX)
        path = w.paths[veh.path_id]
        veh.s = min(veh.s + veh.v * dt, path.length)
        if veh.s >= path.length - 1e-9:
            # destination reached: the vehicle leaves the interaction
            veh.arrived = True
            veh.v = 0.0

    w.tick += 1
    t_now = w.tick * dt
    new_pos = {vid: w.position_of(vid) for vid in w.vehicles}
    for key in sorted(w.zones):
        zone = w.zones[key]
        for vid in sorted(w.vehicles):
            if w.vehicles[vid].path_id not in key:
                continue
            was_in = math.dist(prev_pos[vid], zone.center) < zone.radius
            is_in = math.dist(new_pos[vid], zone.center) < zone.radius
            if was_in == is_in:
                continue
            gaps = {
                other: math.dist(new_pos[vid], new_pos[other])
                for other in w.vehicles if other != vid
            }
            w.events.append(ZoneEvent(
                t=t_now, vehicle_id=vid, zone=key,
                kind="enter" if is_in else "exit",
                pos=new_pos[vid], gaps=gaps,
            ))
    return w


def time_to_conflict(w: World, vehicle_id: int, opposing_path_id: int) -> float:
    """Seconds until the vehicle reaches its conflict point with the opposing
    path, capped at 10; 10.0 when stopped; PASSED (inf) once beyond it."""
    veh = w.vehicles[vehicle_id]
    path = w.paths[veh.path_id]
    s_star = path.conflict_arclength.get(opposing_path_id)
    if s_star is None:
        raise SimulationError(
            f"no conflict point between path {veh.path_id} and path {opposing_path_id}"
        )
    if veh.s > s_star:
        return PASSED
    if veh.v < 1e-9:
        return CONFLICT_TIME_CAP
    return min((s_star - veh.s) / max(veh.v, 0.1), CONFLICT_TIME_CAP)


def _conflict_value(t: float) -> float:
    return CONFLICT_TIME_CAP if t == PASSED else t


def pair_times(w: World, hv_id: int) -> tuple[float, float]:
    """(t_av, t_hv) toward the AV-HV pair's conflict point; PASSED possible."""
    hv = w.vehicles[hv_id]
    t_av = time_to_conflict(w, 0, hv.path_id)
    t_hv = time_to_conflict(w, hv_id, w.av.path_id)
    return t_av, t_hv


def observe(w: World, ego_id: int = 0) -> tuple[ScenarioDescription, int]:
    """Standardized 9-tuple of the ego/opponent pair plus the opponent id.

    The opponent is the not-yet-passed HV with the closest conflict timing
    (highest interaction risk); once every HV has passed, the nearest HV by
    distance.  Ties break to the lower vehicle id.
    """
    ego = w.vehicles[ego_id]
    hv_ids = w.hv_ids()
    if not hv_ids:
        raise SimulationError("no HV present")

    def risk(hv_id: int) -> float:
        t_av, t_hv = pair_times(w, hv_id)
        if t_av == PASSED or t_hv == PASSED:
            return math.inf
        return abs(t_av - t_hv)

    live = [hv_id for hv_id in hv_ids
            if time_to_conflict(w, hv_id, ego.path_id) != PASSED]
    if live:
        opponent_id = min(live, key=lambda h: (risk(h), h))
    else:
        ego_pos = w.position_of(ego_id)
        opponent_id = min(hv_ids, key=lambda h: (math.dist(ego_pos, w.position_of(h)), h))

    t_av, t_hv = pair_times(w, opponent_id)
    c = min(_conflict_value(t_av), _conflict_value(t_hv))

    opp = w.vehicles[opponent_id]
    ex, ey = w.position_of(ego_id)
    etx, ety = w.paths[ego.path_id].tangent_at(ego.s)
    ox, oy = w.position_of(opponent_id)
    otx, oty = w.paths[opp.path_id].tangent_at(opp.s)
    values = (
        ex, ey, ego.v * etx, ego.v * ety,
        ox, oy, opp.v * otx, opp.v * oty,
        c,
    )
    return ScenarioDescription(values), opponent_id


# --- conflict metrics ---------------------------------------------------------


def _pair_zone_events(event_log: Sequence[ZoneEvent], pair: tuple[int, int]):
    a, b = pair
    zones_a = {e.zone for e in event_log if e.vehicle_id == a}
    zones_b = {e.zone for e in event_log if e.vehicle_id == b}
    shared = sorted(zones_a & zones_b)
    if not shared:
        return None
    zone = shared[0]
    return [e for e in event_log if e.zone == zone and e.vehicle_id in pair]


def compute_pet(event_log: Sequence[ZoneEvent], pair: tuple[int, int]) -> Optional[float]:
    """Post-encroachment time: second vehicle's zone entry minus first
    vehicle's zone exit.  None unless both vehicles enter (and the first one
    also exits); <= 0 means simultaneous occupancy."""
    events = _pair_zone_events(event_log, pair)
    if events is None:
        return None
    first_enter: dict[int, float] = {}
    for e in events:
        if e.kind == "enter" and e.vehicle_id not in first_enter:
            first_enter[e.vehicle_id] = e.t
    if len(first_enter) < 2:
        return None
    first = min(pair, key=lambda vid: (first_enter[vid], vid))
    second = pair[1] if first == pair[0] else pair[0]
    exits = [e.t for e in events
             if e.vehicle_id == first and e.kind == "exit" and e.t >= first_enter[first]]
    if not exits:
        return None
    return first_enter[second] - exits[0]


def is_dangerous(event_log: Sequence[ZoneEvent], pair: tuple[int, int], w: World) -> bool:
    """True iff at the instant the first vehicle exits the shared zone, the
    center gap minus one vehicle length is negative."""
    events = _pair_zone_events(event_log, pair)
    if events is None:
        return False
    entered = {e.vehicle_id for e in events if e.kind == "enter"}
    if set(pair) - entered:
        return False
    exits = sorted((e for e in events if e.kind == "exit"), key=lambda e: (e.t, e.vehicle_id))
    if not exits:
        return False
    first_exit = exits[0]
    other = pair[1] if first_exit.vehicle_id == pair[0] else pair[0]
    gap = first_exit.gaps.get(other)
    if gap is None:
        return False
    return gap - VEHICLE_LENGTH < 0.0


def update_standstill(w: World, opponent_id: int, dt: float = DT) -> None:
    """Track the mutual-standstill clock used by deadlock detection."""
    av = w.av
    opp = w.vehicles[opponent_id]
    t_av, t_hv = pair_times(w, opponent_id)
    both_stopped = av.v < STANDSTILL_SPEED and opp.v < STANDSTILL_SPEED
    both_before = t_av != PASSED and t_hv != PASSED
    if both_stopped and both_before:
        w.standstill_s += dt
    else:
        w.standstill_s = 0.0


def check_termination(w: World) -> Optional[EpisodeOutcome]:
    positions = {vid: w.position_of(vid) for vid in w.vehicles}
    ids = sorted(positions)
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            if math.dist(positions[a], positions[b]) < COLLISION_DIST:
                return EpisodeOutcome.COLLISION
    if w.standstill_s >= DEADLOCK_WINDOW - 1e-9:
        return EpisodeOutcome.DEADLOCK
    if w.av.arrived:
        return EpisodeOutcome.SUCCESS
    if w.t >= EPISODE_TIMEOUT:
        return EpisodeOutcome.TIMEOUT
    return None


# --- trajectory export ---------------------------------------------------------

TRAJECTORY_HEADER = "t,vehicle_id,role,x,y,v,action"


def trajectory_row(t: float, vid: int, role: str, x: float, y: float, v: float, action: str) -> str:
    return f"{t:.1f},{vid},{role},{x:.4f},{y:.4f},{v:.4f},{action}"


def write_trajectory_csv(rows: Sequence[str], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TRAJECTORY_HEADER + "\n")
        for row in rows:
            fh.write(row + "\n")
