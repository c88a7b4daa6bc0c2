"""Command-line entry point: ``submap-frontier <command> [options]``.

Exit codes: 0 success, 1 verification failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import LATENCY_FIELDS, latency_report, scaling_report, skip_comparison
from .config import ConfigError, RunConfig
from .eventlog import EventLogError, EventLogWriter, iter_event_log, read_event_log
from .events import MalformedEventError
from .frontier import (
    DetectorConfig,
    FrontierDetector,
    FrontierUpdate,
    MissingPoseError,
    event_kind,
    run_detector,
    run_detector_threaded,
)
from .harness import (
    EnvironmentSpec,
    InfeasibleEnvironmentError,
    PoseInObstacleError,
    build_simulation,
)
from .oracle import ReferenceState
from .render import render_png, render_svg

log = logging.getLogger("submap_frontier")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- config handling ------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration; flags override it")
    p.add_argument("--seed", type=int, help="environment seed")
    p.add_argument("--drift-seed", type=int, help="odometry noise seed")
    p.add_argument("--epsilon", type=float, help="classification margin around 0.5")
    p.add_argument("--n-scans", type=int, help="scans per submap")
    p.add_argument("--resolution", type=float, help="cell size in meters")
    p.add_argument("--skip", action=argparse.BooleanOptionalAction, default=None,
                   help="drop non-final submap updates when newer ones are queued")
    p.add_argument("--skip-policy", choices=("none", "adaptive", "forced"),
                   help="explicit skip policy (overrides --skip/--no-skip)")
    p.add_argument("--baking", type=int, metavar="N", help="bake against N earlier submaps")
    p.add_argument("--smoothing", action="store_true", default=None,
                   help="require two free and two unobserved neighbours")
    p.add_argument("--oracle-every", type=int, metavar="N", help="run the oracle every N events")
    p.add_argument("--steps", type=int, help="limit the number of scans")
    p.add_argument("--environment", choices=("room", "ring"), help="environment kind")
    p.add_argument("--verification", action="store_true", default=None,
                   help="epsilon 0, no smoothing, no baking")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {
        "seed": args.seed,
        "drift_seed": args.drift_seed,
        "epsilon": args.epsilon,
        "n_scans": args.n_scans,
        "resolution": args.resolution,
        "baking": args.baking,
        "smoothing": args.smoothing,
        "oracle_every": args.oracle_every,
        "steps": args.steps,
        "verification": args.verification,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.skip is not None:
        cfg.skip = "adaptive" if args.skip else "none"
    if args.skip_policy is not None:
        cfg.skip = args.skip_policy
    if args.environment is not None:
        cfg.environment = EnvironmentSpec(**{**cfg.environment.__dict__, "kind": args.environment})
    return cfg.validate()


def _verify_detector_config(args: argparse.Namespace) -> DetectorConfig:
    """Replays default to verification settings; flags may loosen them."""
    return DetectorConfig(
        epsilon=args.epsilon if args.epsilon is not None else 0.0,
        smoothing=bool(args.smoothing),
        baking=args.baking or 0,
    )


def _stream_line(index: int, kind: str, updates: list[FrontierUpdate]) -> str:
    return json.dumps({"event": index, "kind": kind, "updates": [u.to_record() for u in updates]},
                      separators=(",", ":"))


# -- commands -------------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    sim = build_simulation(cfg.scenario())
    detector = FrontierDetector(cfg.detector_config())

    with EventLogWriter(out / "events.jsonl", cfg.resolution, cfg.n_scans) as writer, \
            open(out / "frontier.jsonl", "w", encoding="utf-8") as stream:

        def on_event(i, event, det, updates):
            stream.write(_stream_line(i, event_kind(event), updates) + "\n")

        if cfg.skip == "forced":
            events = list(sim.events())
            for event in events:
                writer.write(event)
            run = run_detector(events, detector, skip="forced", on_event=on_event)
        else:
            run = run_detector_threaded(
                sim.events(), detector, skip=cfg.skip == "adaptive",
                on_event=on_event, on_produced=lambda i, e: writer.write(e),
            )
    metrics = {
        "config": cfg.to_dict(),
        **latency_report(run),
        "submaps": len(detector.submap_ids),
        "final_frontier_points": len(detector.global_points()),
        "per_event": [{"event": p.index, "kind": p.kind, "latency_s": p.latency,
                       "updates": len(p.updates)} for p in run.processed],
    }
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2)
    print(f"simulated {run.scan_events} scans, {len(detector.submap_ids)} submaps, "
          f"{run.skipped} updates skipped; outputs in {out}")
    return EXIT_OK


def _read_stream(path: str) -> dict[int, list[FrontierUpdate]]:
    recorded: dict[int, list[FrontierUpdate]] = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh):
            try:
                record = json.loads(line)
                recorded[int(record["event"])] = [FrontierUpdate.from_record(u) for u in record["updates"]]
            except (ValueError, KeyError, TypeError) as exc:
                raise UsageError(f"{path}: line {n}: {exc}") from None
    return recorded


def cmd_verify(args: argparse.Namespace) -> int:
    header, events = iter_event_log(args.log)
    every = args.oracle_every or 1
    recorded = _read_stream(args.frontier) if args.frontier else None
    detector = None if recorded is not None else FrontierDetector(_verify_detector_config(args))
    reference = ReferenceState()
    state: dict[int, np.ndarray] = {}
    totals = {"checked": 0, "missing": 0, "hard_extras": 0, "merge_conflict_extras": 0,
              "detector_points": 0}
    reports = []
    last_index = -1
    failed = False

    def check(index: int) -> None:
        nonlocal failed
        if detector is not None:
            points = detector.global_points()
        else:
            parts = [state[k] for k in sorted(state)]
            points = np.concatenate(parts) if parts else np.zeros((0, 2))
        report = reference.check(points, header.resolution)
        counts = report.counts()
        totals["checked"] += 1
        for key in ("missing", "hard_extras", "merge_conflict_extras", "detector_points"):
            totals[key] += counts[key]
        reports.append({"event": index, **counts})
        if not report.ok:
            failed = True
            print(f"event {index}: {report.summary()}")
        elif args.verbose:
            print(f"event {index}: {report.summary()}")

    for index, event in enumerate(events):
        reference.apply(event)
        last_index = index
        if detector is not None:
            detector.process(event)
            due = (index + 1) % every == 0
        else:
            if index not in recorded:
                continue
            for update in recorded[index]:
                state[update.submap_id] = update.points
            due = True
        if due:
            check(index)
    if last_index >= 0 and (not reports or reports[-1]["event"] != last_index):
        if detector is not None or last_index in recorded:
            check(last_index)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump({"totals": totals, "events": reports}, fh, indent=2)
    rate = totals["merge_conflict_extras"] / max(1, totals["detector_points"])
    print(f"{'FAIL' if failed else 'OK'}: {totals['checked']} checks, {totals['missing']} missing, "
          f"{totals['hard_extras']} hard extras, {totals['merge_conflict_extras']} merge-conflict "
          f"extras ({rate:.4%} of frontier points)")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    _, events = read_event_log(args.log)
    detector = FrontierDetector(cfg.detector_config())
    sink = open(args.out, "w", encoding="utf-8") if args.out else None
    try:
        def on_event(i, event, det, updates):
            if sink is not None:
                sink.write(_stream_line(i, event_kind(event), updates) + "\n")

        run = run_detector(events, detector, skip=cfg.skip, on_event=on_event)
    finally:
        if sink is not None:
            sink.close()
    report = latency_report(run)
    print(json.dumps({**report, "final_frontier_points": len(detector.global_points())}, indent=2))
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    header, events = read_event_log(args.log)
    if args.at is not None:
        events = events[: args.at + 1]
    detector = FrontierDetector(_verify_detector_config(args))
    run_detector(events, detector)
    writer = render_svg if str(args.out).lower().endswith(".svg") else render_png
    width, height = writer(detector.submaps(), detector.poses(), detector.global_points(),
                           header.resolution, args.out, scale=args.scale)
    print(f"wrote {args.out} ({width}x{height})")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if args.quick:
        cfg.resolution, cfg.n_scans = 0.1, 20
        cfg.steps = cfg.steps if cfg.steps is not None else 80
    sim = build_simulation(cfg.scenario())
    events = list(sim.events())
    det_cfg = cfg.detector_config()
    plain = run_detector(events, FrontierDetector(det_cfg), skip="none")
    skipping = run_detector_threaded(iter(events), FrontierDetector(det_cfg), skip=True)
    report = {
        "config": cfg.to_dict(),
        "fields": list(LATENCY_FIELDS),
        "without_skip": latency_report(plain),
        "with_skip": latency_report(skipping),
        "skip_equivalence": skip_comparison(events, det_cfg, "forced"),
        "scaling": scaling_report(
            sides=(4.0, 8.0) if args.quick else (8.0, 16.0),
            repeats=5 if args.quick else 15,
        ),
    }
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="submap-frontier",
        description="Incremental frontier detection for submap-based 2D SLAM.",
    )
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run harness and detector, write logs and metrics")
    _add_config_flags(p)
    p.add_argument("--out", default="run", help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="replay a log and check every event against the oracle")
    p.add_argument("log")
    p.add_argument("--frontier", help="recorded frontier stream to check instead of a live replay")
    p.add_argument("--report", help="write per-event comparison counts as JSON")
    p.add_argument("-v", "--verbose", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("replay", help="run the detector over a log without verification")
    p.add_argument("log")
    p.add_argument("--out", help="frontier stream output file")
    _add_config_flags(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("render", help="draw the merged map and frontier")
    p.add_argument("log")
    p.add_argument("--out", required=True, help="output .png or .svg")
    p.add_argument("--at", type=int, help="render the state after this event index")
    p.add_argument("--scale", type=int, default=4, help="pixels per cell")
    _add_config_flags(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("bench", help="latency, skip and scaling report")
    p.add_argument("--out", help="write the JSON report here as well")
    p.add_argument("--quick", action="store_true", help="small sizes for a fast smoke run")
    _add_config_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, EventLogError, InfeasibleEnvironmentError,
            PoseInObstacleError, MalformedEventError, MissingPoseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
