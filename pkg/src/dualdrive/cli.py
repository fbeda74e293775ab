"""Command-line entry points: train, eval, bench, play, replay.

A JSON config file can prefill any run option; explicit flags override it.
Evaluation and benchmark runs write their delimited reports and render the
matching figures next to them.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

from dualdrive.actor import load_store, save_store
from dualdrive.environment import parse_scenario_kind, write_trajectory_csv
from dualdrive.reasoner import BackendConfig
from dualdrive.runtime import (
    AblationSwitches,
    DecisionMode,
    RunConfig,
    bench_retrieval,
    bench_to_csv,
    evaluate,
    report_to_csv,
    train,
)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file (flags override it)")
    p.add_argument("--scenario", choices=["intersection", "roundabout", "merging"])
    p.add_argument("--episodes", type=int)
    p.add_argument("--n-hv", type=int, choices=[1, 2, 3], dest="n_hv")
    p.add_argument("--seed", type=int)
    p.add_argument("--backend", choices=["heuristic", "remote"])
    p.add_argument("--endpoint", help="remote backend base URL")
    p.add_argument("--model", help="remote backend model name")
    p.add_argument("--no-partition", action="store_true")
    p.add_argument("--no-two-layer", action="store_true")
    p.add_argument("--no-instructions", action="store_true")
    p.add_argument("--mode", choices=[m.value for m in DecisionMode])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualdrive",
        description="Dual-process driving interaction simulator and decision stack",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="build a memory store from seeded episodes")
    _add_run_flags(p_train)
    p_train.add_argument("--out", type=Path, required=True, help="memory JSONL output path")

    p_eval = sub.add_parser("eval", help="evaluate a store over seeded episodes")
    _add_run_flags(p_eval)
    p_eval.add_argument("--memories", type=Path, help="memory JSONL to load")
    p_eval.add_argument("--out", type=Path, help="evaluation CSV path (figures rendered beside it)")
    p_eval.add_argument("--no-figures", action="store_true")
    p_eval.add_argument("--trajectories", type=Path,
                        help="directory for per-episode trajectory CSVs")

    p_bench = sub.add_parser("bench", help="retrieval latency benchmark")
    p_bench.add_argument("--sizes", default="1000,10000,30000",
                         help="comma-separated store sizes")
    p_bench.add_argument("--queries", type=int, default=100)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", type=Path, help="CSV path (default: stdout)")
    p_bench.add_argument("--no-figures", action="store_true")

    p_play = sub.add_parser("play", help="serve a live keyboard-driven session")
    _add_run_flags(p_play)
    p_play.add_argument("--memories", type=Path)
    p_play.add_argument("--port", type=int, default=8765)
    p_play.add_argument("--log", type=Path, help="session event log (JSONL)")

    p_replay = sub.add_parser("replay", help="stream a recorded trajectory CSV")
    p_replay.add_argument("file", type=Path)
    p_replay.add_argument("--port", type=int, default=8765)
    p_replay.add_argument("--speed", type=float, default=1.0)
    return parser


def _config_from_args(args) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    cfg = RunConfig.from_dict(data)
    if getattr(args, "scenario", None):
        cfg.scenario = parse_scenario_kind(args.scenario)
    for key in ("episodes", "seed", "n_hv"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "mode", None):
        cfg.mode = DecisionMode(args.mode)
    if getattr(args, "backend", None) == "remote" or getattr(args, "endpoint", None):
        cfg.backend = BackendConfig(
            kind="remote",
            endpoint=args.endpoint or data.get("endpoint", ""),
            model=args.model or data.get("model", ""),
        )
    elif getattr(args, "backend", None) == "heuristic":
        cfg.backend = BackendConfig()
    cfg.ablations = AblationSwitches(
        use_partition=cfg.ablations.use_partition and not getattr(args, "no_partition", False),
        use_two_layer=cfg.ablations.use_two_layer and not getattr(args, "no_two_layer", False),
        use_instructions=cfg.ablations.use_instructions
        and not getattr(args, "no_instructions", False),
    )
    return cfg


def _cmd_train(args) -> int:
    cfg = _config_from_args(args)
    store = train(cfg)
    save_store(store, args.out)
    print(f"trained {cfg.episodes} episodes on {cfg.scenario.value}: "
          f"{len(store)} memories -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    store = load_store(args.memories) if args.memories else None
    report = evaluate(cfg, store)
    print(report.summary())
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(report_to_csv(report), encoding="utf-8")
        print(f"wrote {args.out}")
        if not args.no_figures:
            from dualdrive.report import render_eval_figures

            for path in render_eval_figures(report, args.out):
                print(f"wrote {path}")
    if args.trajectories:
        args.trajectories.mkdir(parents=True, exist_ok=True)
        for idx, result in enumerate(report.results):
            path = args.trajectories / f"episode_{idx:04d}.csv"
            write_trajectory_csv(result.trajectory, path)
        print(f"wrote {len(report.results)} trajectories to {args.trajectories}")
    return 0


def _cmd_bench(args) -> int:
    sizes = [int(s) for s in str(args.sizes).split(",") if s]
    rows = bench_retrieval(sizes, args.queries, seed=args.seed)
    csv_text = bench_to_csv(rows)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(csv_text, encoding="utf-8")
        print(f"wrote {args.out}")
        if not args.no_figures:
            from dualdrive.report import render_bench_figure

            print(f"wrote {render_bench_figure(rows, args.out)}")
    else:
        sys.stdout.write(csv_text)
    return 0


def _cmd_play(args) -> int:
    from dualdrive.server import serve_session

    cfg = _config_from_args(args)
    store = load_store(args.memories) if args.memories else None

    def announce(port):
        print(f"session listening on ws://127.0.0.1:{port}", flush=True)

    result = asyncio.run(serve_session(cfg, store, args.port, seed=cfg.seed,
                                       log_path=args.log, on_listening=announce))
    if result is not None:
        print(f"episode finished: {result.outcome.value} after {result.duration:.1f} s")
    return 0


def _cmd_replay(args) -> int:
    from dualdrive.server import replay

    def announce(port):
        print(f"replay listening on ws://127.0.0.1:{port}", flush=True)

    sent = asyncio.run(replay(args.file, args.port, speed=args.speed,
                              on_listening=announce))
    print(f"streamed {sent} frames")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "play": _cmd_play,
    "replay": _cmd_replay,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
