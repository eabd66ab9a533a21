"""Command-line entry point.

    irrigsim run --scenario nominal.json --out runs/nominal [--seed 7]
    irrigsim calibrate --pairs pairs.csv [--unit mca]
    irrigsim decode-frame --hex "7E 11 00 00 .."

Exit codes: 0 clean run, 2 validation error, 3 runtime fault.
Set ``IRRIGSIM_LOG_LEVEL`` (e.g. ``DEBUG``) for more output on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

from . import netlink
from .runner import run_scenario
from .scenario import ScenarioError, load_scenario
from .sense import CalibrationFitError, fit_calibration

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

log = logging.getLogger("irrigsim")


def _read_pairs(path):
    pairs = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                raw, ref = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if lineno == 1:  # header
                    continue
                raise CalibrationFitError(f"{path}:{lineno}: expected 'raw,reference', got {row!r}")
            pairs.append((raw, ref))
    return pairs


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ScenarioError(f"--seed {args.seed} is not an unsigned 64-bit integer")
            scenario = scenario.with_seed(args.seed)
    except ScenarioError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        summary = run_scenario(scenario, args.out)
    except Exception as exc:  # noqa: BLE001 - any simulation failure maps to exit 3
        log.debug("run failed", exc_info=True)
        print(f"runtime fault: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    try:
        curve = fit_calibration(_read_pairs(args.pairs), unit_label=args.unit)
    except OSError as exc:
        print(f"cannot read {args.pairs}: {exc.strerror}", file=sys.stderr)
        return EXIT_VALIDATION
    except CalibrationFitError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"intercept: {curve.intercept:.6f}")
    print(f"slope: {curve.slope:.6f}")
    print(f"unit: {curve.unit_label}")
    print(f"y = {curve.intercept:.6f} + {curve.slope:.6f} * raw  [{curve.unit_label}]")
    return EXIT_OK


def format_frame(frame: netlink.Frame) -> str:
    lines = [
        f"version: {frame.version}",
        f"node_id: {frame.node_id}",
        f"seq: {frame.seq}",
        f"entries: {len(frame.entries)}",
    ]
    for sensor_id, raw in frame.entries:
        name = netlink.SENSOR_NAMES.get(sensor_id, "unknown")
        lines.append(f"  {sensor_id:#04x} {name:<14} raw={raw}")
    return "\n".join(lines)


def cmd_decode(args) -> int:
    text = "".join(args.hex.split()).replace("0x", "")
    try:
        data = bytes.fromhex(text)
    except ValueError:
        print(f"invalid hex string: {args.hex!r}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        frame = netlink.decode_frame(data, resync=True)
    except netlink.DecodeError as exc:
        print(exc.name)
        log.info("%s", exc)
        return EXIT_VALIDATION
    print(format_frame(frame))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irrigsim", description="Drip-irrigation closed-loop simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario file")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("calibrate", help="fit a linear calibration from raw,reference pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--unit", default="mca")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("decode-frame", help="decode one hex-encoded telemetry frame")
    p.add_argument("--hex", required=True)
    p.set_defaults(func=cmd_decode)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("IRRIGSIM_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
