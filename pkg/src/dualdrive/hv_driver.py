"""Heterogeneous simulated human drivers.

Each driver carries a style parameter set, a scalar belief about whether the
ego vehicle will yield, and a switchable yield/rush intent.  Decisions come
from a one-shot payoff comparison: candidate actions are rolled out for two
seconds against two opponent hypotheses (yield = opponent brakes, rush =
opponent accelerates) and scored by an efficiency/safety trade-off.

All functions are pure over value snapshots; the environment task calls them
once per tick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from dualdrive.core import (
    ACCEL_ACCELERATE,
    ACCEL_DECELERATE,
    SPEED_MAX,
    DrivingStyle,
    Intention,
    MetaAction,
)
from dualdrive.environment import STANDSTILL_SPEED, World

ROLLOUT_HORIZON = 2.0   # s of constant-action prediction
ROLLOUT_DT = 0.1
YIELD_ACCEL_PENALTY = 0.5
STALL_BLOCK_RADIUS = 5.0   # m: a vehicle halted this close to the point blocks it


@dataclass(frozen=True)
class StyleParams:
    """Payoff weights and thresholds for one driving style."""

    w_safety: float
    w_eff: float
    patience: float    # s of waiting before a yielding driver turns pushy
    risk_gap: float    # s, minimum acceptable arrival-time gap at the conflict

    def __post_init__(self):
        if not math.isclose(self.w_safety + self.w_eff, 1.0, abs_tol=1e-9):
            raise ValueError("w_safety + w_eff must equal 1")
        if self.w_safety < 0 or self.w_eff < 0:
            raise ValueError("weights must be non-negative")
        if self.patience <= 0 or self.risk_gap <= 0:
            raise ValueError("patience and risk_gap must be positive")


_DEFAULT_PARAMS = {
    DrivingStyle.AGGRESSIVE: StyleParams(w_safety=0.3, w_eff=0.7, patience=2.0, risk_gap=1.0),
    DrivingStyle.GENERAL: StyleParams(w_safety=0.5, w_eff=0.5, patience=4.0, risk_gap=1.5),
    DrivingStyle.CONSERVATIVE: StyleParams(w_safety=0.7, w_eff=0.3, patience=8.0, risk_gap=2.5),
}


def default_style_params(style: DrivingStyle) -> StyleParams:
    return _DEFAULT_PARAMS[style]


@dataclass(frozen=True)
class BeliefState:
    """Probability that the ego vehicle will yield, clamped to [0, 1]."""

    p_yield: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "p_yield", min(max(self.p_yield, 0.0), 1.0))


def update_belief(b: BeliefState, observed_av_accel: float, ehmi: str) -> BeliefState:
    """Nudge the yield belief from the ego's motion and eHMI text.

    Explicit eHMI dominates the implicit motion signal whenever the two
    conflict; an eHMI mentioning both directions is treated as noise.
    """
    text = ehmi.lower()
    has_slower = "slower" in text
    has_faster = "faster" in text
    if has_slower and has_faster:
        ehmi_signal = 0
    elif has_slower:
        ehmi_signal = 1
    elif has_faster:
        ehmi_signal = -1
    else:
        ehmi_signal = 0

    if observed_av_accel <= -0.5:
        motion_signal = 1
    elif observed_av_accel >= 0.5:
        motion_signal = -1
    else:
        motion_signal = 0

    signal = ehmi_signal if ehmi_signal != 0 else motion_signal
    return BeliefState(b.p_yield + 0.2 * signal)


def _rollout_arrival(s: float, v: float, accel: float, s_star: float,
                     horizon: float = ROLLOUT_HORIZON, dt: float = ROLLOUT_DT):
    """Constant-action prediction toward an arclength target.

    Returns (arrival_time | None, v_end, s_end).  After the horizon the
    vehicle is extrapolated at its end speed; a vehicle that ends slower than
    standstill never arrives.
    """
    if s >= s_star:
        return 0.0, v, s
    t = 0.0
    while t < horizon - 1e-9:
        v_next = min(max(v + accel * dt, 0.0), SPEED_MAX)
        s_next = s + v_next * dt
        t += dt
        if s_next >= s_star:
            overshoot = (s_next - s_star) / v_next if v_next > 0 else 0.0
            return t - overshoot, v_next, s_next
        v, s = v_next, s_next
    if v < STANDSTILL_SPEED:
        return None, v, s
    return horizon + (s_star - s) / v, v, s


def _predicted_gap(w: World, ego_id: int, opp_id: int,
                   ego_accel: float, opp_accel: float) -> tuple[float, float]:
    """(|arrival gap| at the pair's conflict point, ego end speed).

    A vehicle predicted to halt inside the conflict zone blocks it: the gap is
    zero.  A vehicle that halts clear of the zone, or an opponent that has
    already cleared the point without blocking it, removes the conflict
    (infinite gap).
    """
    ego = w.vehicles[ego_id]
    opp = w.vehicles[opp_id]
    s_star_ego = w.paths[ego.path_id].conflict_arclength[opp.path_id]
    s_star_opp = w.paths[opp.path_id].conflict_arclength[ego.path_id]

    ego_arrival, ego_v_end, ego_s_end = _rollout_arrival(ego.s, ego.v, ego_accel, s_star_ego)

    def stalls_near(s_end, s_star):
        return abs(s_star - s_end) < STALL_BLOCK_RADIUS

    if opp.s > s_star_opp:
        # opponent is beyond the point; it only matters if it is parked on it
        # and the ego actually drives through -- in which case the passage is
        # physically obstructed, so the predicted end speed is zero too
        blocking = (opp.v < STANDSTILL_SPEED and stalls_near(opp.s, s_star_opp)
                    and ego_arrival is not None)
        return (0.0, 0.0) if blocking else (math.inf, ego_v_end)

    opp_arrival, opp_v_end, opp_s_end = _rollout_arrival(opp.s, opp.v, opp_accel, s_star_opp)

    # a zero gap needs one party stalled on the point and the other passing
    # through it; a mutual standstill has no passage and is not a conflict
    if ego_arrival is None and opp_arrival is None:
        return math.inf, ego_v_end
    if ego_arrival is None:
        return (0.0, ego_v_end) if stalls_near(ego_s_end, s_star_ego) else (math.inf, ego_v_end)
    if opp_arrival is None:
        # driving into a stalled blocker ends at the obstacle, not beyond it
        return (0.0, 0.0) if stalls_near(opp_s_end, s_star_opp) else (math.inf, ego_v_end)
    return abs(ego_arrival - opp_arrival), ego_v_end


# tie order favours the safer choice
_TIE_ORDER = (MetaAction.DECELERATE, MetaAction.MAINTAIN, MetaAction.ACCELERATE)

_ACTION_ACCEL = {
    MetaAction.ACCELERATE: ACCEL_ACCELERATE,
    MetaAction.DECELERATE: ACCEL_DECELERATE,
    MetaAction.MAINTAIN: 0.0,
}


def best_response(w: World, ego_id: int, opponent_id: int, params: StyleParams,
                  p_yield: float, intent: Intention | None = None) -> MetaAction:
    """Expected-payoff argmax for any vehicle gaming any opponent.

    The two opponent hypotheses are yield (opponent brakes) and rush (opponent
    accelerates), mixed by ``p_yield``; a yielding intent penalizes the
    accelerate option while the ego is still short of the conflict point.
    Past the conflict point there is no game left: maintain.
    """
    ego = w.vehicles[ego_id]
    opp = w.vehicles[opponent_id]
    s_star_ego = w.paths[ego.path_id].conflict_arclength.get(opp.path_id)
    if s_star_ego is None or ego.s > s_star_ego or ego.arrived:
        return MetaAction.MAINTAIN

    best_action = None
    best_value = -math.inf
    for action in _TIE_ORDER:
        ego_accel = _ACTION_ACCEL[action]
        value = 0.0
        for hypothesis_accel, weight in ((ACCEL_DECELERATE, p_yield),
                                         (ACCEL_ACCELERATE, 1.0 - p_yield)):
            gap, v_end = _predicted_gap(w, ego_id, opponent_id, ego_accel, hypothesis_accel)
            unsafe = 1.0 if gap < params.risk_gap else 0.0
            value += weight * (params.w_eff * (v_end / SPEED_MAX) - params.w_safety * unsafe)
        if action is MetaAction.ACCELERATE and intent is Intention.YIELD and ego.s < s_star_ego:
            value -= YIELD_ACCEL_PENALTY
        if value > best_value:
            best_value = value
            best_action = action
    return best_action


def hv_decide(w: World, hv_id: int, params: StyleParams, b: BeliefState,
              intent: Intention) -> MetaAction:
    """Pick the HV action against the AV."""
    return best_response(w, hv_id, 0, params, b.p_yield, intent)


def update_intent(intent: Intention, waiting_time: float, params: StyleParams) -> Intention:
    """Patience-based switching: a yielding driver turns pushy once waiting
    (stopped before the conflict) exceeds their patience.  Rushing persists
    here; the caller flips rush back to yield after two consecutive braking
    decisions."""
    if intent is Intention.YIELD and waiting_time > params.patience:
        return Intention.RUSH
    return intent
