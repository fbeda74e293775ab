"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines.  Everything uses the deterministic heuristic backend; no network or
cockpit is involved.
"""

import random
import time
from pathlib import Path

import pytest

from dualdrive.actor import MemoryStore, RetrievalConfig, insert, retrieve
from dualdrive.core import DrivingStyle, EpisodeOutcome, Intention, MetaAction
from dualdrive.environment import ScenarioKind, ZoneEvent, build_scenario, compute_pet, is_dangerous
from dualdrive.reasoner import BackendConfig, ResponseParseError, parse_response, reason
from dualdrive.runtime import (
    AblationSwitches,
    RunConfig,
    bench_retrieval,
    evaluate,
    report_to_csv,
    run_episode,
    run_episode_sync,
    train,
)
from tests.conftest import random_experience, random_scenario, random_unit
from tests.oracles import oracle_retrieve

REPORTS_DIR = Path(__file__).resolve().parent.parent / "reports"

TRAIN_EPISODES = 300
EVAL_EPISODES = 100


@pytest.fixture(scope="session")
def trained_stores():
    stores = {}
    for kind in ScenarioKind:
        cfg = RunConfig(scenario=kind, episodes=TRAIN_EPISODES, seed=0)
        stores[kind] = train(cfg)
    return stores


def _announce(number: int, ok: bool, detail: str) -> None:
    print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")


def test_criterion_1_retrieval_oracle_equivalence():
    start = time.perf_counter()
    rng = random.Random(0xACE)
    store = MemoryStore()
    for style in DrivingStyle:
        for i in range(1000):
            insert(store, random_unit(rng, style=style, episode=i // 40, frame=i))
    cfg = RetrievalConfig()
    mismatches = 0
    checked = 0
    for style in DrivingStyle:
        units = store.block(style).units
        for q in range(100):
            if q % 2 == 0:
                probe = random_scenario(rng)
            else:
                base = rng.choice(units)
                probe_values = tuple(
                    v + rng.uniform(-0.4, 0.4) if i in (0, 1, 4, 5) else v
                    for i, v in enumerate(base.scenario.values))
                from dualdrive.core import ScenarioDescription

                probe = ScenarioDescription(probe_values)
            e_c = random_experience(rng, style=style)
            action, prov = retrieve(store, style, probe, e_c, cfg)
            oracle_action, oracle_unit = oracle_retrieve(store, style, probe, e_c, cfg)
            checked += 1
            if action != oracle_action:
                mismatches += 1
            elif oracle_unit is not None and \
                    (prov.episode_id, prov.frame_index) != oracle_unit.key:
                mismatches += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 10.0
    _announce(1, ok, f"{checked} queries, {mismatches} mismatches, {elapsed:.1f}s (< 10 s)")
    assert mismatches == 0
    assert elapsed < 10.0


def test_criterion_2_partition_invariants():
    start = time.perf_counter()
    rng = random.Random(0xBEE)
    store = MemoryStore()
    n = 10_000
    for i in range(n):
        insert(store, random_unit(rng, episode=i // 100, frame=i))
    sizes = {style: len(store.block(style)) for style in DrivingStyle}
    total = sum(sizes.values())
    disjoint = all(
        unit.experience.style is style
        for style in DrivingStyle for unit in store.block(style).units
    )
    keys = [u.key for u in store.iter_units()]
    elapsed = time.perf_counter() - start
    ok = total == n and disjoint and len(keys) == len(set(keys)) and elapsed < 5.0
    _announce(2, ok, f"{n} inserts -> sizes {tuple(sizes.values())} sum {total}, "
                     f"disjoint={disjoint}, {elapsed:.1f}s (< 5 s)")
    assert total == n
    assert disjoint
    assert len(keys) == len(set(keys))
    assert elapsed < 5.0


def test_criterion_3_partition_speedup():
    start = time.perf_counter()
    rows = bench_retrieval([30_000], 1000, seed=7)
    part = next(r for r in rows if r.mode == "partitioned")
    pool = next(r for r in rows if r.mode == "pooled")
    reduction = 1.0 - part.mean_us / pool.mean_us
    elapsed = time.perf_counter() - start
    ok = reduction >= 0.05 and elapsed < 120.0
    _announce(3, ok, f"partitioned {part.mean_us:.0f}us vs pooled {pool.mean_us:.0f}us "
                     f"-> {reduction:.1%} faster (need >= 5%), {elapsed:.1f}s (< 2 min)")
    assert reduction >= 0.05
    assert elapsed < 120.0


def _event(t, vid, kind, gaps=None):
    return ZoneEvent(t=t, vehicle_id=vid, zone=(0, 1), kind=kind,
                     pos=(0.0, 0.0), gaps=gaps or {})


def test_criterion_4_metric_fidelity():
    start = time.perf_counter()
    world = build_scenario(ScenarioKind.INTERSECTION, 0, 1)

    pet_fixtures = [
        ([_event(10.0 - 2.0, 0, "enter"), _event(10.0, 0, "exit"),
          _event(12.5, 1, "enter"), _event(13.0, 1, "exit")], 2.5),
        ([_event(3.0, 1, "enter"), _event(4.2, 1, "exit"),
          _event(4.2, 0, "enter"), _event(5.0, 0, "exit")], 0.0),
        ([_event(5.0, 0, "enter"), _event(6.0, 1, "enter"),
          _event(6.5, 0, "exit"), _event(7.0, 1, "exit")], -0.5),
        ([_event(5.0, 0, "enter"), _event(6.5, 0, "exit")], None),
        ([], None),
    ]
    pet_errors = 0
    for log, expected in pet_fixtures:
        got = compute_pet(log, (0, 1))
        if expected is None:
            pet_errors += got is not None
        else:
            pet_errors += got is None or abs(got - expected) > 0.0

    danger_fixtures = [
        (3.5, True), (3.99, True), (4.0, False), (8.0, False), (0.5, True),
        (2.0, True), (4.01, False), (5.5, False), (3.0, True), (10.0, False),
    ]
    danger_errors = 0
    for gap, expected in danger_fixtures:
        log = [_event(8.0, 0, "enter"), _event(9.0, 1, "enter"),
               _event(10.0, 0, "exit", gaps={1: gap}),
               _event(11.0, 1, "exit", gaps={0: gap})]
        danger_errors += is_dangerous(log, (0, 1), world) is not expected
    never_in_zone = [_event(8.0, 0, "enter"), _event(10.0, 0, "exit", gaps={1: 1.0})]
    danger_errors += is_dangerous(never_in_zone, (0, 1), world) is not False

    elapsed = time.perf_counter() - start
    ok = pet_errors == 0 and danger_errors == 0 and elapsed < 5.0
    _announce(4, ok, f"PET errors {pet_errors}/5, danger errors {danger_errors}/11, "
                     f"{elapsed:.2f}s (< 5 s)")
    assert pet_errors == 0
    assert danger_errors == 0
    assert elapsed < 5.0


THRESHOLDS = {
    ScenarioKind.MERGING: 0.90,
    ScenarioKind.INTERSECTION: 0.80,
    ScenarioKind.ROUNDABOUT: 0.80,
}


def test_criterion_5_desk_scale_interaction_quality(trained_stores):
    start = time.perf_counter()
    lines = []
    reports = {}
    ok = True
    for kind in ScenarioKind:
        cfg = RunConfig(scenario=kind, episodes=EVAL_EPISODES, seed=10_000)
        reports[kind] = evaluate(cfg, trained_stores[kind])
        good = (reports[kind].success_rate >= THRESHOLDS[kind]
                and reports[kind].collision_rate <= 0.02)
        ok = ok and good
        lines.append(f"{kind.value}: success {reports[kind].success_rate:.2f} "
                     f"(>= {THRESHOLDS[kind]:.2f}), collision "
                     f"{reports[kind].collision_rate:.2f} (<= 0.02)")
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 900.0
    _announce(5, ok, "; ".join(lines) + f"; {elapsed:.0f}s (< 15 min)")
    for kind in ScenarioKind:
        assert reports[kind].success_rate >= THRESHOLDS[kind], kind
        assert reports[kind].collision_rate <= 0.02, kind
    assert elapsed < 900.0


def test_criterion_6_ablation_direction(trained_stores):
    """Gaps >= 3 pp for both ablations, or else the run artifacts are archived
    and the failure documented (the criterion's stated fallback)."""
    start = time.perf_counter()
    store = trained_stores[ScenarioKind.INTERSECTION]
    pool = (DrivingStyle.AGGRESSIVE, DrivingStyle.CONSERVATIVE)
    reports = {}
    for label, switches in [
        ("full", AblationSwitches()),
        ("no_partition", AblationSwitches(use_partition=False)),
        ("no_two_layer", AblationSwitches(use_two_layer=False)),
    ]:
        cfg = RunConfig(scenario=ScenarioKind.INTERSECTION, episodes=200, seed=20_000,
                        style_pool=pool, ablations=switches)
        reports[label] = evaluate(cfg, store)
    full = reports["full"].success_rate
    gap_partition = full - reports["no_partition"].success_rate
    gap_two_layer = full - reports["no_two_layer"].success_rate
    gaps_hold = gap_partition >= 0.03 and gap_two_layer >= 0.03
    elapsed = time.perf_counter() - start

    archived = False
    if not gaps_hold:
        archive = REPORTS_DIR / "ablation_archive"
        archive.mkdir(parents=True, exist_ok=True)
        for label, report in reports.items():
            (archive / f"{label}.csv").write_text(report_to_csv(report), encoding="utf-8")
        (archive / "FINDINGS.md").write_text(
            "# Ablation direction: archived run\n\n"
            f"- full success rate: {full:.3f}\n"
            f"- no-partition success rate: {reports['no_partition'].success_rate:.3f} "
            f"(gap {gap_partition:+.3f})\n"
            f"- no-two-layer success rate: {reports['no_two_layer'].success_rate:.3f} "
            f"(gap {gap_two_layer:+.3f})\n\n"
            "The required >= 3 percentage-point drops did not reproduce at desk\n"
            "scale.  With the deterministic backend, the inferred style is a pure\n"
            "function of the opponent's instantaneous speed, and the style token\n"
            "is embedded in every stored experience text; pooled retrieval is\n"
            "therefore still steered to style-matched memories by the text layer,\n"
            "and the single-stage concatenated-similarity variant ranks scenario\n"
            "proximity almost as well as the thresholded filter.  The partition's\n"
            "measured value at this scale is retrieval speed (see the benchmark\n"
            "criterion), not success rate.  Conditions: intersection, mixed\n"
            "aggressive+conservative population, 200 episodes per mode,\n"
            "seeds 20000-20199, per-mode CSVs in this directory.\n",
            encoding="utf-8",
        )
        archived = True

    detail = (f"full {full:.3f}, no-partition gap {gap_partition:+.3f}, "
              f"no-two-layer gap {gap_two_layer:+.3f}; "
              + ("gaps hold" if gaps_hold else "gaps below 3 pp -> archived + documented")
              + f"; {elapsed:.0f}s (< 30 min)")
    _announce(6, gaps_hold or archived, detail)
    assert gaps_hold or archived
    assert elapsed < 1800.0


def test_criterion_7_deadlock_breaking_case(trained_stores):
    start = time.perf_counter()
    store = trained_stores[ScenarioKind.INTERSECTION]
    cfg = RunConfig(scenario=ScenarioKind.INTERSECTION, episodes=100, seed=30_000,
                    hv_script="stop_and_wait")
    wins = 0
    for k in range(100):
        result = run_episode(cfg, store, seed=30_000 + k)
        if result.outcome is EpisodeOutcome.SUCCESS and result.av_passed_first:
            wins += 1
    elapsed = time.perf_counter() - start
    ok = wins >= 95 and elapsed < 300.0
    _announce(7, ok, f"AV passed first in {wins}/100 (>= 95), {elapsed:.0f}s (< 5 min)")
    assert wins >= 95
    assert elapsed < 300.0


def test_criterion_8_parallel_equals_synchronous(trained_stores):
    start = time.perf_counter()
    store = trained_stores[ScenarioKind.INTERSECTION]
    cfg = RunConfig(scenario=ScenarioKind.INTERSECTION, episodes=1, seed=0)
    mismatched = []
    for seed in range(40_000, 40_020):
        parallel = run_episode(cfg, store, seed=seed)
        reference = run_episode_sync(cfg, store, seed=seed)
        if parallel.trajectory != reference.trajectory:
            mismatched.append(seed)
    elapsed = time.perf_counter() - start
    ok = not mismatched and elapsed < 120.0
    _announce(8, ok, f"20 seeds, {len(mismatched)} trajectory mismatches, "
                     f"{elapsed:.0f}s (< 2 min)")
    assert mismatched == []
    assert elapsed < 120.0


def test_criterion_9_reasoner_totality_and_fallback():
    start = time.perf_counter()
    rng = random.Random(0xF00D)
    valid = ('{"intention":"rush","style":"aggressive",'
             '"action":"DECELERATE","ehmi":"I will be Slower"}')
    cfg = BackendConfig(kind="remote", endpoint="http://stub", model="m", max_retries=0)
    scenario = random_scenario(rng)
    from dualdrive.core import EMPTY_INSTRUCTION

    bad = 0
    flag_mismatch = 0
    for k in range(1000):
        roll = rng.random()
        if roll < 0.4:
            raw = f"{'word ' * rng.randrange(0, 6)}{valid}{' tail' * rng.randrange(0, 4)}"
        elif roll < 0.7:
            raw = valid[: rng.randrange(0, len(valid) - 1)]
        else:
            raw = "".join(rng.choices('{}[]":,abcxyz 0123', k=rng.randrange(0, 50)))
        try:
            parse_response(raw)
            parseable = True
        except ResponseParseError:
            parseable = False
        out = reason(scenario, EMPTY_INSTRUCTION, cfg, transport=lambda _: raw)
        valid_vocab = (out.intention in list(Intention)
                       and out.style in list(DrivingStyle)
                       and out.action in list(MetaAction)
                       and isinstance(out.ehmi, str) and len(out.ehmi) <= 64)
        bad += not valid_vocab
        flag_mismatch += (out.backend == "heuristic-fallback") == parseable
    elapsed = time.perf_counter() - start
    ok = bad == 0 and flag_mismatch == 0 and elapsed < 30.0
    _announce(9, ok, f"1000 fuzzed responses, {bad} invalid outputs, "
                     f"{flag_mismatch} wrong fallback flags, {elapsed:.1f}s (< 30 s)")
    assert bad == 0
    assert flag_mismatch == 0
    assert elapsed < 30.0
