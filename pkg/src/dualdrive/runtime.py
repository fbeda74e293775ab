"""Orchestration: training, the three-loop episode runtime, evaluation and the
retrieval benchmark.

A live episode runs three loops against one shared board: the slow loop
publishes style/intention/eHMI, the fast loop publishes the action it
retrieved for the current snapshot, and the environment loop advances physics
and publishes fresh state.  Two schedulers exist:

* lockstep (default): the loops run in three threads serialized by a turn
  ring over a virtual clock, so batch runs are deterministic, reproducible
  and much faster than wall time.  Injected slow-system latency is modeled in
  virtual rounds.
* realtime: free-running threads paced by the wall clock, used for live
  play sessions where a human and a websocket client are in the loop.

No loop ever blocks on another loop's cycle: a slow reasoner simply spans
more environment ticks while the fast loop keeps acting on the last published
style.
"""

from __future__ import annotations

import math
import random
import statistics
import threading
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

from dualdrive.actor import (
    MemoryStore,
    Provenance,
    RetrievalConfig,
    curate_episode,
    insert,
    retrieve,
)
from dualdrive.core import (
    EMPTY_INSTRUCTION,
    STYLE_ORDER,
    DrivingStyle,
    EpisodeOutcome,
    ExperienceDescription,
    Instruction,
    Intention,
    MemoryUnit,
    MetaAction,
    ScenarioDescription,
    SnapshotBoard,
    action_to_accel,
)
from dualdrive.environment import (
    DT,
    EPISODE_TIMEOUT,
    PASSED,
    CONFLICT_TIME_CAP,
    ScenarioKind,
    SimulationError,
    World,
    build_scenario,
    check_termination,
    compute_pet,
    following_guard,
    is_dangerous,
    observe,
    pair_times,
    step_world,
    trajectory_row,
    update_standstill,
)
from dualdrive.hv_driver import (
    BeliefState,
    StyleParams,
    best_response,
    default_style_params,
    hv_decide,
    update_belief,
    update_intent,
)
from dualdrive.reasoner import BackendConfig, build_prompt, reason


class DecisionMode(Enum):
    ACTOR_REASONER = "actor_reasoner"
    REASONER_ONLY = "reasoner_only"
    BASELINE_PIDM = "baseline_pidm"
    BASELINE_GAME = "baseline_game"


@dataclass(frozen=True)
class AblationSwitches:
    use_partition: bool = True
    use_two_layer: bool = True
    use_instructions: bool = True


@dataclass
class RunConfig:
    scenario: ScenarioKind = ScenarioKind.INTERSECTION
    n_hv: int = 1
    episodes: int = 1
    seed: int = 0
    backend: BackendConfig = field(default_factory=BackendConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    mode: DecisionMode = DecisionMode.ACTOR_REASONER
    ablations: AblationSwitches = field(default_factory=AblationSwitches)
    dt: float = DT
    actor_period: float = DT
    reasoner_latency: float = 0.0       # injected, virtual seconds
    realtime: bool = False
    style_pool: Optional[tuple] = None  # restrict the HV style draw
    hv_script: Optional[str] = None     # "stop_and_wait"
    style_params: Optional[dict] = None  # DrivingStyle -> StyleParams overrides

    @staticmethod
    def from_dict(data: dict) -> "RunConfig":
        """Build a config from plain JSON-style keys (the config-file format)."""
        from dualdrive.environment import parse_scenario_kind

        cfg = RunConfig()
        if "scenario" in data:
            cfg.scenario = parse_scenario_kind(data["scenario"])
        for key in ("n_hv", "episodes", "seed", "reasoner_latency", "realtime", "hv_script"):
            if key in data:
                setattr(cfg, key, data[key])
        if "mode" in data:
            cfg.mode = DecisionMode(data["mode"])
        backend_keys = {k: data[k] for k in ("endpoint", "model", "timeout") if k in data}
        if data.get("backend") == "remote" or ("backend" not in data and backend_keys.get("endpoint")):
            cfg.backend = BackendConfig(kind="remote", **backend_keys)
        retrieval_keys = {k: data[k] for k in
                          ("epsilon", "weights", "widen_factor", "max_widenings", "embedding_dim")
                          if k in data}
        if retrieval_keys:
            if "weights" in retrieval_keys:
                retrieval_keys["weights"] = tuple(retrieval_keys["weights"])
            cfg.retrieval = RetrievalConfig(**retrieval_keys)
        cfg.ablations = AblationSwitches(
            use_partition=data.get("use_partition", True),
            use_two_layer=data.get("use_two_layer", True),
            use_instructions=data.get("use_instructions", True),
        )
        if "style_params" in data:
            cfg.style_params = {
                DrivingStyle(style): StyleParams(**params)
                for style, params in data["style_params"].items()
            }
        return cfg


class SessionBoard:
    """Shared snapshot plus the session-level bits: a monotone stop flag, a
    latest-wins instruction slot and an optional control override."""

    def __init__(self, initial_state: ScenarioDescription):
        self.snapshots = SnapshotBoard(initial_state)
        self._stop = threading.Event()
        self._lock = threading.Lock()
        self._instruction: Optional[Instruction] = None
        self._control: Optional[float] = None

    def read(self):
        return self.snapshots.read()

    def update(self, writer: str, t: float, **fields):
        return self.snapshots.update(writer, t, **fields)

    @property
    def log(self):
        return self.snapshots.log

    def push_instruction(self, instruction: Instruction) -> None:
        with self._lock:
            self._instruction = instruction

    def pop_instruction(self) -> Optional[Instruction]:
        with self._lock:
            instruction, self._instruction = self._instruction, None
            return instruction

    def set_control(self, accel: Optional[float]) -> None:
        with self._lock:
            self._control = accel

    def control(self) -> Optional[float]:
        with self._lock:
            return self._control

    def request_stop(self) -> None:
        self._stop.set()

    @property
    def stopped(self) -> bool:
        return self._stop.is_set()


@dataclass
class _HvState:
    params: StyleParams
    belief: BeliefState
    intent: Intention
    waiting: float = 0.0
    consec_decel: int = 0


@dataclass
class ReasonerRecord:
    t: float
    state: ScenarioDescription
    prompt_text: str
    instruction: str
    output: object


@dataclass
class EpisodeResult:
    outcome: EpisodeOutcome
    seed: int
    duration: float
    pet: Optional[float]
    dangerous: bool
    mean_v: float
    min_v: float
    max_v: float
    av_passed_first: bool
    trajectory: list
    board_log: list
    reasoner_records: list
    retrievals: list


def _accel_to_action_name(accel: float) -> str:
    if accel > 0.5:
        return MetaAction.ACCELERATE.value
    if accel < -0.5:
        return MetaAction.DECELERATE.value
    return MetaAction.MAINTAIN.value


def _scripted_stop_accel(world: World, hv_id: int) -> float:
    """Scripted conservative opponent: brakes to a stop a few meters before
    the conflict point (where yielding drivers naturally halt) and proceeds
    only after the ego has cleared its own."""
    hv = world.vehicles[hv_id]
    s_star_hv = world.paths[hv.path_id].conflict_arclength[world.av.path_id]
    s_star_av = world.paths[world.av.path_id].conflict_arclength[hv.path_id]
    if hv.s > s_star_hv or world.av.s > s_star_av:
        return action_to_accel(MetaAction.ACCELERATE)
    if s_star_hv - hv.s < 10.0:
        return action_to_accel(MetaAction.DECELERATE)
    return 0.0


def baseline_decide(kind: str, world: World) -> MetaAction:
    """Reference deciders: a conflict-projected following rule and a one-shot
    game from the ego's side with neutral weights and a fixed 0.5 belief."""
    if kind == "pidm":
        _, opponent_id = observe(world)
        t_av, t_hv = pair_times(world, opponent_id)
        if t_av == PASSED or t_hv == PASSED:
            return MetaAction.ACCELERATE
        if t_hv < t_av or abs(t_av - t_hv) < 1.5:
            return MetaAction.DECELERATE
        return MetaAction.ACCELERATE
    if kind == "game":
        _, opponent_id = observe(world)
        return best_response(world, 0, opponent_id, default_style_params(DrivingStyle.GENERAL), 0.5)
    raise ValueError(f"unsupported baseline kind: {kind!r}")


def _pair_conflict_gap(world: World, opponent_id: int) -> float:
    """|arrival gap| for curation; infinite unless both vehicles are live and
    below the cap (a stopped or passed vehicle is no longer converging)."""
    t_av, t_hv = pair_times(world, opponent_id)
    if t_av == PASSED or t_hv == PASSED:
        return math.inf
    if t_av >= CONFLICT_TIME_CAP or t_hv >= CONFLICT_TIME_CAP:
        return math.inf
    return abs(t_av - t_hv)


class _EpisodeCore:
    """State and the three loop bodies shared by every scheduler."""

    def __init__(self, cfg: RunConfig, store: Optional[MemoryStore], seed: int,
                 frame_sink: Optional[Callable[[dict], None]] = None):
        self.cfg = cfg
        self.store = store if store is not None else MemoryStore()
        self.seed = seed
        self.world = build_scenario(cfg.scenario, seed, cfg.n_hv)
        self._apply_overrides()
        state0, opponent0 = observe(self.world)
        self.board = SessionBoard(state0)
        self.opponent_id = opponent0
        self.hv_states = {
            hv_id: _HvState(
                params=self._params_for(self.world.vehicles[hv_id].style),
                belief=BeliefState(0.5),
                intent=self.world.vehicles[hv_id].intention,
            )
            for hv_id in self.world.hv_ids()
        }
        self.frame_sink = frame_sink
        self.controlled_hv = min(self.world.hv_ids())
        self.trajectory: list[str] = []
        self.ttc_gaps: list[float] = []
        self.reasoner_records: list[ReasonerRecord] = []
        self.retrievals: list[tuple[float, MetaAction, Provenance]] = []
        self.av_v_samples: list[float] = []
        self.outcome: Optional[EpisodeOutcome] = None
        # slow-loop latency modeling (virtual rounds)
        self._pending_output = None
        self._pending_rounds = 0

    def _params_for(self, style: DrivingStyle) -> StyleParams:
        if self.cfg.style_params and style in self.cfg.style_params:
            return self.cfg.style_params[style]
        return default_style_params(style)

    def _apply_overrides(self) -> None:
        cfg = self.cfg
        if cfg.style_pool:
            rng = random.Random(self.seed * 1_000_003 + 17)
            for hv_id in self.world.hv_ids():
                self.world.vehicles[hv_id].style = rng.choice(tuple(cfg.style_pool))
        if cfg.hv_script == "stop_and_wait":
            for hv_id in self.world.hv_ids():
                self.world.vehicles[hv_id].style = DrivingStyle.CONSERVATIVE
                self.world.vehicles[hv_id].intention = Intention.YIELD

    # --- slow loop -----------------------------------------------------------

    def reasoner_cycle(self) -> None:
        """One lockstep round of the slow loop. A call started at round k with
        injected latency L lands its write L/dt rounds later; inputs freeze at
        call time, exactly like a slow blocking backend."""
        if self._pending_output is None:
            snap = self.board.read()
            prompt = build_prompt(snap.state, snap.instruction, last_ehmi=snap.ehmi,
                                  version=snap.version)
            output = reason(snap.state, snap.instruction, self.cfg.backend,
                            last_ehmi=snap.ehmi, version=snap.version)
            self.reasoner_records.append(ReasonerRecord(
                t=self.world.t, state=snap.state, prompt_text=prompt.text,
                instruction=snap.instruction.text, output=output,
            ))
            self._pending_output = output
            self._pending_rounds = int(round(self.cfg.reasoner_latency / self.cfg.dt))
        if self._pending_rounds <= 0:
            self._publish_reasoner(self._pending_output)
            self._pending_output = None
        else:
            self._pending_rounds -= 1

    def reasoner_cycle_realtime(self) -> None:
        snap = self.board.read()
        prompt = build_prompt(snap.state, snap.instruction, last_ehmi=snap.ehmi,
                              version=snap.version)
        output = reason(snap.state, snap.instruction, self.cfg.backend,
                        last_ehmi=snap.ehmi, version=snap.version)
        if self.cfg.reasoner_latency > 0:
            time.sleep(self.cfg.reasoner_latency)
        self.reasoner_records.append(ReasonerRecord(
            t=self.world.t, state=snap.state, prompt_text=prompt.text,
            instruction=snap.instruction.text, output=output,
        ))
        self._publish_reasoner(output)

    def _publish_reasoner(self, output) -> None:
        fields = dict(intention=output.intention, style=output.style, ehmi=output.ehmi)
        if self.cfg.mode is DecisionMode.REASONER_ONLY:
            fields["action"] = output.action
        self.board.update("reasoner", t=self.world.t, **fields)

    # --- fast loop -------------------------------------------------------------

    def actor_cycle(self) -> None:
        if self.cfg.mode is not DecisionMode.ACTOR_REASONER:
            return
        snap = self.board.read()
        query = ExperienceDescription(
            intention=snap.intention, style=snap.style,
            instruction=snap.instruction.text, ehmi=snap.ehmi,
        )
        action, provenance = retrieve(
            self.store, snap.style, snap.state, query, self.cfg.retrieval,
            partitioned=self.cfg.ablations.use_partition,
            two_layer=self.cfg.ablations.use_two_layer,
        )
        self.board.update("actor", t=self.world.t, action=action)
        self.retrievals.append((self.world.t, action, provenance))

    # --- environment loop --------------------------------------------------------

    def env_cycle(self) -> None:
        cfg = self.cfg
        world = self.world
        snap = self.board.read()

        if cfg.mode is DecisionMode.BASELINE_PIDM:
            av_action_name = baseline_decide("pidm", world).value
            av_accel = action_to_accel(MetaAction(av_action_name))
        elif cfg.mode is DecisionMode.BASELINE_GAME:
            av_action_name = baseline_decide("game", world).value
            av_accel = action_to_accel(MetaAction(av_action_name))
        else:
            av_action_name = snap.action.value
            av_accel = action_to_accel(snap.action)

        accel = {0: av_accel}
        action_names = {0: av_action_name}
        control = self.board.control()
        for hv_id in world.hv_ids():
            hv = world.vehicles[hv_id]
            state = self.hv_states[hv_id]
            if control is not None and hv_id == self.controlled_hv:
                accel[hv_id] = control
                action_names[hv_id] = _accel_to_action_name(control)
                continue
            if cfg.hv_script == "stop_and_wait":
                a = _scripted_stop_accel(world, hv_id)
                accel[hv_id] = a
                action_names[hv_id] = _accel_to_action_name(a)
                continue
            state.belief = update_belief(state.belief, av_accel, snap.ehmi)
            s_star = world.paths[hv.path_id].conflict_arclength[world.av.path_id]
            if hv.v < 0.1 and hv.s <= s_star:
                state.waiting += cfg.dt
            else:
                state.waiting = 0.0
            state.intent = update_intent(state.intent, state.waiting, state.params)
            action = hv_decide(world, hv_id, state.params, state.belief, state.intent)
            if action is MetaAction.DECELERATE:
                state.consec_decel += 1
                if state.consec_decel >= 2:
                    state.intent = Intention.YIELD
            else:
                state.consec_decel = 0
            hv.intention = state.intent
            a = following_guard(world, hv_id, action_to_accel(action))
            accel[hv_id] = a
            action_names[hv_id] = _accel_to_action_name(a)

        self.ttc_gaps.append(_pair_conflict_gap(world, self.opponent_id))
        for vid in sorted(world.vehicles):
            veh = world.vehicles[vid]
            x, y = world.position_of(vid)
            self.trajectory.append(trajectory_row(
                world.t, vid, veh.role, x, y, veh.v, action_names[vid]))
        self.av_v_samples.append(world.av.v)

        step_world(world, accel, cfg.dt)
        state_desc, opponent = observe(world)
        self.opponent_id = opponent
        update_standstill(world, opponent)

        fields: dict = {"state": state_desc}
        if cfg.ablations.use_instructions:
            instruction = self.board.pop_instruction()
            if instruction is not None:
                fields["instruction"] = instruction
        self.board.update("env", t=world.t, **fields)

        self.outcome = check_termination(world)
        if self.outcome is not None:
            self.board.request_stop()
        if self.frame_sink is not None:
            self.frame_sink(self.make_frame())

    def make_frame(self) -> dict:
        snap = self.board.read()
        frame = {
            "t": round(self.world.t, 3),
            "vehicles": [
                {
                    "id": vid,
                    "role": veh.role,
                    "x": round(self.world.position_of(vid)[0], 3),
                    "y": round(self.world.position_of(vid)[1], 3),
                    "heading": round(self.world.heading_of(vid), 4),
                    "v": round(veh.v, 3),
                }
                for vid, veh in sorted(self.world.vehicles.items())
            ],
            "ehmi": snap.ehmi,
            "style": snap.style.value,
            "intention": snap.intention.value if snap.intention else None,
            "metrics": {"c": round(snap.state.conflict_time, 3)},
        }
        if self.outcome is not None:
            frame["outcome"] = self.outcome.value
        return frame

    def finish(self) -> EpisodeResult:
        world = self.world
        pets = []
        dangerous = False
        for hv_id in world.hv_ids():
            pet = compute_pet(world.events, (0, hv_id))
            if pet is not None:
                pets.append(pet)
            dangerous = dangerous or is_dangerous(world.events, (0, hv_id), world)
        primary = min(world.hv_ids())
        zone = world.zone_for_pair(0, primary)
        av_enter = next((e.t for e in world.events
                         if e.zone == zone and e.vehicle_id == 0 and e.kind == "enter"), None)
        hv_enter = next((e.t for e in world.events
                         if e.zone == zone and e.vehicle_id == primary and e.kind == "enter"), None)
        av_first = av_enter is not None and (hv_enter is None or av_enter < hv_enter)
        samples = self.av_v_samples or [0.0]
        return EpisodeResult(
            outcome=self.outcome if self.outcome is not None else EpisodeOutcome.TIMEOUT,
            seed=self.seed,
            duration=world.t,
            pet=min(pets) if pets else None,
            dangerous=dangerous,
            mean_v=statistics.fmean(samples),
            min_v=min(samples),
            max_v=max(samples),
            av_passed_first=av_first,
            trajectory=self.trajectory,
            board_log=list(self.board.log),
            reasoner_records=self.reasoner_records,
            retrievals=self.retrievals,
        )


# --- schedulers ------------------------------------------------------------------

_RING_ORDER = ("reasoner", "actor", "env")


class _TurnRing:
    """Serializes the three loops into a fixed round order; every loop runs in
    its own thread but only one holds the turn token at a time."""

    def __init__(self):
        self.turns = {role: threading.Event() for role in _RING_ORDER}
        self.turns[_RING_ORDER[0]].set()

    def acquire(self, role: str) -> None:
        self.turns[role].wait()
        self.turns[role].clear()

    def release_next(self, role: str) -> None:
        nxt = _RING_ORDER[(_RING_ORDER.index(role) + 1) % len(_RING_ORDER)]
        self.turns[nxt].set()


def _run_lockstep(core: _EpisodeCore) -> None:
    ring = _TurnRing()
    max_rounds = int(EPISODE_TIMEOUT / core.cfg.dt) + 10
    bodies = {
        "reasoner": core.reasoner_cycle,
        "actor": core.actor_cycle,
        "env": core.env_cycle,
    }

    def loop(role: str):
        rounds = 0
        while True:
            ring.acquire(role)
            if core.board.stopped or rounds >= max_rounds:
                ring.release_next(role)
                break
            bodies[role]()
            rounds += 1
            ring.release_next(role)

    threads = [threading.Thread(target=loop, args=(role,), name=f"dualdrive-{role}")
               for role in _RING_ORDER]
    for th in threads:
        th.start()
    for th in threads:
        th.join()


def _run_realtime(core: _EpisodeCore) -> None:
    cfg = core.cfg

    def reasoner_loop():
        while not core.board.stopped:
            core.reasoner_cycle_realtime()
            # an instant backend would otherwise busy-spin on stale snapshots;
            # fresh state only lands once per environment tick anyway
            time.sleep(cfg.dt)

    def paced_loop(body, period):
        next_t = time.monotonic()
        while not core.board.stopped:
            body()
            next_t += period
            delay = next_t - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            else:
                next_t = time.monotonic()

    threads = [
        threading.Thread(target=reasoner_loop, name="dualdrive-reasoner", daemon=True),
        threading.Thread(target=paced_loop, args=(core.actor_cycle, cfg.actor_period),
                         name="dualdrive-actor", daemon=True),
        threading.Thread(target=paced_loop, args=(core.env_cycle, cfg.dt),
                         name="dualdrive-env", daemon=True),
    ]
    for th in threads:
        th.start()
    for th in threads:
        th.join(timeout=EPISODE_TIMEOUT + 10.0)


def run_episode(cfg: RunConfig, store: Optional[MemoryStore], seed: Optional[int] = None,
                frame_sink: Optional[Callable[[dict], None]] = None) -> EpisodeResult:
    """Run one episode with the three-loop runtime and return its result."""
    core = _EpisodeCore(cfg, store, cfg.seed if seed is None else seed, frame_sink)
    if cfg.realtime:
        _run_realtime(core)
    else:
        _run_lockstep(core)
    return core.finish()


def _run_sync_core(cfg: RunConfig, store: Optional[MemoryStore], seed: int) -> _EpisodeCore:
    """Fully synchronous single-loop reference, one slow/fast/env pass per tick."""
    core = _EpisodeCore(cfg, store, seed)
    max_rounds = int(EPISODE_TIMEOUT / cfg.dt) + 10
    for _ in range(max_rounds):
        if core.board.stopped:
            break
        core.reasoner_cycle()
        core.actor_cycle()
        core.env_cycle()
    return core


def run_episode_sync(cfg: RunConfig, store: Optional[MemoryStore],
                     seed: Optional[int] = None) -> EpisodeResult:
    return _run_sync_core(cfg, store, cfg.seed if seed is None else seed).finish()


class LiveSession:
    """A realtime episode plus its board, for the session server."""

    def __init__(self, cfg: RunConfig, store: Optional[MemoryStore], seed: int,
                 frame_sink: Optional[Callable[[dict], None]] = None):
        cfg = replace_realtime(cfg)
        self.core = _EpisodeCore(cfg, store, seed, frame_sink)
        self._thread = threading.Thread(target=_run_realtime, args=(self.core,),
                                        name="dualdrive-session", daemon=True)

    @property
    def board(self) -> SessionBoard:
        return self.core.board

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self.core.board.request_stop()

    def join(self, timeout: Optional[float] = None) -> None:
        self._thread.join(timeout)

    @property
    def finished(self) -> bool:
        return not self._thread.is_alive()

    def result(self) -> EpisodeResult:
        return self.core.finish()


def replace_realtime(cfg: RunConfig) -> RunConfig:
    if cfg.realtime:
        return cfg
    return replace(cfg, realtime=True)


# --- training ----------------------------------------------------------------------


def train(cfg: RunConfig, store: Optional[MemoryStore] = None) -> MemoryStore:
    """Build a memory store by letting the slow system drive episodes
    synchronously; only curated frames from clean episodes are kept."""
    store = store if store is not None else MemoryStore()
    train_cfg = replace(cfg, mode=DecisionMode.REASONER_ONLY)
    base_episode = store.next_episode_id()
    for k in range(cfg.episodes):
        core = _run_sync_core(train_cfg, None, cfg.seed + k)
        outcome = core.outcome if core.outcome is not None else EpisodeOutcome.TIMEOUT
        frames = [
            MemoryUnit(
                scenario=record.state,
                experience=ExperienceDescription(
                    intention=record.output.intention,
                    style=record.output.style,
                    instruction=record.instruction,
                    ehmi=record.output.ehmi,
                ),
                action=record.output.action,
                episode_id=base_episode + k,
                frame_index=i,
            )
            for i, record in enumerate(core.reasoner_records)
        ]
        gaps = core.ttc_gaps[: len(frames)]
        for unit in curate_episode(frames, outcome, gaps):
            insert(store, unit)
    return store


# --- evaluation --------------------------------------------------------------------


@dataclass
class MetricsReport:
    episodes: int
    success_rate: float
    collision_rate: float
    dangerous_rate: float
    pets: list
    mean_v: float
    min_v: float
    max_v: float
    outcomes: list
    results: list

    def summary(self) -> str:
        pets = [p for p in self.pets if p is not None]
        pet_part = f"median PET {statistics.median(pets):.2f} s" if pets else "no PET data"
        return (
            f"{self.episodes} episodes: success {self.success_rate:.1%}, "
            f"collisions {self.collision_rate:.1%}, dangerous {self.dangerous_rate:.1%}, "
            f"{pet_part}, v mean/min/max {self.mean_v:.2f}/{self.min_v:.2f}/{self.max_v:.2f} m/s"
        )


EVAL_HEADER = "episode,seed,outcome,pet,dangerous,mean_v,min_v,max_v"


def evaluate(cfg: RunConfig, store: Optional[MemoryStore]) -> MetricsReport:
    """Run ``cfg.episodes`` seeded episodes and aggregate the safety and
    efficiency metrics."""
    if cfg.episodes < 1:
        raise ValueError("evaluate needs episodes >= 1")
    results = [run_episode(cfg, store, seed=cfg.seed + k) for k in range(cfg.episodes)]
    return summarize(results)


def summarize(results: list) -> MetricsReport:
    outcomes = [r.outcome for r in results]
    n = len(results)
    all_v: list[float] = []
    for r in results:
        all_v.extend((r.mean_v, r.min_v, r.max_v))
    return MetricsReport(
        episodes=n,
        success_rate=sum(o is EpisodeOutcome.SUCCESS for o in outcomes) / n,
        collision_rate=sum(o is EpisodeOutcome.COLLISION for o in outcomes) / n,
        dangerous_rate=sum(r.dangerous for r in results) / n,
        pets=[r.pet for r in results],
        mean_v=statistics.fmean(r.mean_v for r in results),
        min_v=min(r.min_v for r in results),
        max_v=max(r.max_v for r in results),
        outcomes=outcomes,
        results=results,
    )


def report_to_csv(report: MetricsReport) -> str:
    lines = [EVAL_HEADER]
    for idx, r in enumerate(report.results):
        pet = f"{r.pet:.1f}" if r.pet is not None else ""
        lines.append(
            f"{idx},{r.seed},{r.outcome.value},{pet},{int(r.dangerous)},"
            f"{r.mean_v:.4f},{r.min_v:.4f},{r.max_v:.4f}"
        )
    return "\n".join(lines) + "\n"


# --- retrieval benchmark --------------------------------------------------------------


@dataclass(frozen=True)
class BenchRow:
    n_units: int
    mode: str
    mean_us: float
    p95_us: float
    mean_scanned: float
    max_scanned: int


BENCH_HEADER = "n_units,mode,mean_us,p95_us,mean_scanned,max_scanned"


def synthetic_store(n_units: int, rng: random.Random) -> MemoryStore:
    """Uniform random store for benchmarking: positions, speeds and conflict
    values across the live ranges, styles uniform."""
    store = MemoryStore()
    intentions = (Intention.YIELD, Intention.RUSH)
    instructions = ("", "go ahead", "I will be slower", "wait")
    ehmis = ("", "I will be Faster", "I will be Slower", "Maintaining")
    actions = tuple(MetaAction)
    for i in range(n_units):
        style = STYLE_ORDER[rng.randrange(3)]
        values = (
            rng.uniform(-45.0, 15.0), rng.uniform(-15.0, 15.0),
            rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0),
            rng.uniform(-45.0, 15.0), rng.uniform(-15.0, 15.0),
            rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0),
            rng.uniform(0.0, 10.0),
        )
        insert(store, MemoryUnit(
            scenario=ScenarioDescription(values),
            experience=ExperienceDescription(
                intention=rng.choice(intentions), style=style,
                instruction=rng.choice(instructions), ehmi=rng.choice(ehmis)),
            action=rng.choice(actions),
            episode_id=i // 50, frame_index=i,
        ))
    return store


def bench_retrieval(sizes: list, queries: int, seed: int = 0,
                    cfg: Optional[RetrievalConfig] = None) -> list:
    """Time partitioned vs pooled retrieval on synthetic stores.

    Queries are stored scenarios plus noise, so both retrieval layers engage.
    Scan counts are deterministic for a fixed seed; latencies are whatever the
    host delivers.
    """
    cfg = cfg if cfg is not None else RetrievalConfig()
    rows: list[BenchRow] = []
    for n_units in sizes:
        if n_units < 1000:
            raise ValueError("benchmark sizes must be >= 1000")
        rng = random.Random((seed << 20) ^ n_units)
        store = synthetic_store(n_units, rng)
        probes = []
        all_units = list(store.iter_units())
        for _ in range(queries):
            base = rng.choice(all_units)
            noisy = tuple(
                min(max(v + rng.gauss(0.0, 0.4), -45.0), 45.0) if i in (0, 1, 4, 5)
                else (min(max(v + rng.gauss(0.0, 0.2), -5.0), 5.0) if i in (2, 3, 6, 7)
                      else min(max(v + rng.gauss(0.0, 0.3), 0.0), 10.0))
                for i, v in enumerate(base.scenario.values)
            )
            probes.append((
                STYLE_ORDER[rng.randrange(3)],
                ScenarioDescription(noisy),
                base.experience,
            ))
        for mode in ("partitioned", "pooled"):
            partitioned = mode == "partitioned"
            # warm every matrix cache so timings measure scans, not cache builds
            for style in STYLE_ORDER:
                retrieve(store, style, probes[0][1], probes[0][2], cfg,
                         partitioned=partitioned)
            times_us: list[float] = []
            scans: list[int] = []
            for style, s_c, e_c in probes:
                t0 = time.perf_counter_ns()
                _, provenance = retrieve(store, style, s_c, e_c, cfg,
                                         partitioned=partitioned)
                times_us.append((time.perf_counter_ns() - t0) / 1000.0)
                scans.append(provenance.scanned)
            times_sorted = sorted(times_us)
            p95 = times_sorted[min(len(times_sorted) - 1, int(0.95 * (len(times_sorted) - 1)))]
            rows.append(BenchRow(
                n_units=n_units, mode=mode,
                mean_us=statistics.fmean(times_us), p95_us=p95,
                mean_scanned=statistics.fmean(scans), max_scanned=max(scans),
            ))
    return rows


def bench_to_csv(rows: list) -> str:
    lines = [BENCH_HEADER]
    for r in rows:
        lines.append(f"{r.n_units},{r.mode},{r.mean_us:.2f},{r.p95_us:.2f},"
                     f"{r.mean_scanned:.1f},{r.max_scanned}")
    return "\n".join(lines) + "\n"
