"""Command-line interface.

Exit codes: 0 on success / verified, 1 when a trial ran but failed, 2 on
any error. Errors go to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .errors import HcmError
from .harness import Scenario, replay, run_batch, run_trial, summarize, write_trace
from .platform import (
    PulseParameters,
    ScmProgram,
    Trajectory,
    calibrate_pulse,
    classify,
    compile_scm,
    pulse_to_json,
    validate,
)

log = logging.getLogger("hcmsim")


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def cmd_run(args) -> int:
    scenario = Scenario.load(args.scenario)
    result = run_trial(scenario, record=not args.no_poses)
    if args.trace:
        write_trace(result, args.trace)
        log.info("trace written to %s (%d events)", args.trace, len(result.trace))
    _print(result.to_json())
    return 0 if result.success else 1


def cmd_batch(args) -> int:
    scenario = Scenario.load(args.scenario)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    summary = run_batch(scenario, args.attempts, seeds, workers=args.workers)
    text = summarize(summary.results)
    if args.summary:
        Path(args.summary).write_text(text)
    else:
        sys.stdout.write(text)
    log.info("success rate %.2f", summary.success_rate)
    return 0


def cmd_calibrate(args) -> int:
    pulse = calibrate_pulse(max_amplitude=args.max_amplitude)
    data = pulse_to_json(pulse)
    if args.out:
        Path(args.out).write_text(json.dumps(data, indent=2) + "\n")
    _print(data)
    return 0


def cmd_compile(args) -> int:
    program = ScmProgram.load(args.program)
    calibration = None
    if args.calibration:
        calibration = PulseParameters(**json.loads(Path(args.calibration).read_text()))
    elif args.calibrate:
        calibration = calibrate_pulse()
    traj = validate(compile_scm(program, calibration))
    traj.save(args.out)
    _print({"out": args.out, "waypoints": len(traj.t_ms), "duration_s": traj.duration})
    return 0


def cmd_validate(args) -> int:
    traj = validate(Trajectory.load(args.trajectory))
    _print({"valid": True, "waypoints": len(traj.t_ms), "duration_s": traj.duration})
    return 0


def cmd_classify(args) -> int:
    traj = Trajectory.load(args.trajectory)
    _print({"class": classify(traj).value})
    return 0


def cmd_replay(args) -> int:
    _print(replay(args.trace, Scenario.load(args.scenario)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hcmsim", description="Hybrid Cube Model simulator")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", help="run one trial")
    s.add_argument("--scenario", required=True)
    s.add_argument("--trace", help="write the JSON-lines trace here")
    s.add_argument("--no-poses", action="store_true", help="omit pose samples from the trace")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("batch", help="run seeded trials and summarize")
    s.add_argument("--scenario", required=True)
    s.add_argument("--attempts", type=int, required=True)
    s.add_argument("--seeds", help="comma-separated seeds (default: scenario seed + k)")
    s.add_argument("--summary", help="CSV output path (default: stdout)")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_batch)

    s = sub.add_parser("calibrate", help="calibrate the one-cell slide pulse")
    s.add_argument("--max-amplitude", type=float, default=45.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("compile-scm", help="compile a move program into a trajectory")
    s.add_argument("--program", required=True)
    s.add_argument("--out", required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--calibration", help="pulse parameters JSON")
    g.add_argument("--calibrate", action="store_true", help="calibrate before compiling")
    s.set_defaults(func=cmd_compile)

    s = sub.add_parser("validate", help="check a trajectory against platform limits")
    s.add_argument("--trajectory", required=True)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("classify", help="movement class of a trajectory")
    s.add_argument("--trajectory", required=True)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("replay", help="re-run a scenario and compare with a trace")
    s.add_argument("--trace", required=True)
    s.add_argument("--scenario", required=True)
    s.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("HCM_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HcmError as exc:
        err = {"error": exc.code, "message": str(exc), **getattr(exc, "details", {})}
        print(json.dumps(err, default=str), file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
