"""Command line entry point: ``radarvitals {simulate,localize,monitor,evaluate,pipeline}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. Failures print one JSON object on stderr, for example::

    {"error": "config", "exit_code": 2, "type": "ConfigError", "message": "..."}
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError
from .evaluation import MetricError
from .localization import LocalizationError, SolverDivergence
from .pipeline import (DataError, PipelineConfig, run_evaluate, run_localize, run_monitor,
                       run_pipeline, run_simulate)
from .simulator import SceneError
from .vitals import DemodulationError, MonitorError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("radarvitals")


class _Parser(argparse.ArgumentParser):
    """Usage errors follow the same one-line JSON contract as runtime failures."""

    def error(self, message):
        record = {"error": "config", "exit_code": EXIT_CONFIG, "type": "UsageError",
                  "message": f"{self.prog}: {message}"}
        print(json.dumps(record), file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    p.add_argument("--threads", type=int, help="worker threads for rendering and monitoring")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="radarvitals",
        description="Multi-person radar localization and vital-sign monitoring.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a scene into a frame cube")
    _add_common(p)
    p.add_argument("--scene", type=Path, help="scene JSON file (overrides the preset)")
    p.add_argument("--preset", choices=("c3", "c4"), help="built-in scene")
    p.add_argument("--duration", type=float, help="preset duration [s]")

    p = sub.add_parser("localize", help="detect subjects in the first T_loc seconds")
    _add_common(p)
    p.add_argument("--cube", type=Path, required=True, help="cube path without suffix")
    p.add_argument("--truth", type=Path, help="truth.json to mark planted positions")
    p.add_argument("--baseline", action="store_true", help="also write the Angle-FFT map")

    p = sub.add_parser("monitor", help="estimate RR/HR tracks for detected subjects")
    _add_common(p)
    p.add_argument("--cube", type=Path, required=True, help="cube path without suffix")
    p.add_argument("--support", type=Path, required=True, help="support CSV")
    p.add_argument("--baseline", action="store_true", help="also run the FFT estimator")

    p = sub.add_parser("evaluate", help="score rate tracks against references")
    _add_common(p)
    p.add_argument("--rates", type=Path, required=True, help="directory of rate-track CSVs")
    p.add_argument("--truth", type=Path, required=True, help="truth.json from simulate")
    p.add_argument("--support", type=Path, help="support CSV (default: RATES/support.csv)")
    p.add_argument("--baseline", action="store_true", help="also score the FFT tracks")

    p = sub.add_parser("pipeline", help="simulate, localize, monitor and evaluate")
    _add_common(p)
    p.add_argument("--scene", type=Path, help="scene JSON file (overrides the preset)")
    p.add_argument("--preset", choices=("c3", "c4"), help="built-in scene")
    p.add_argument("--duration", type=float, help="preset duration [s]")
    p.add_argument("--baseline", action="store_true", help="run the baselines alongside")
    return parser


def resolve_config(args) -> PipelineConfig:
    """Configuration file values, then command-line flags on top."""
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    scene = getattr(args, "scene", None)
    preset = getattr(args, "preset", None)
    if preset is not None and scene is None:
        cfg = replace(cfg, scene=None, preset=preset)
    return cfg.with_overrides(
        seed=args.seed, threads=args.threads,
        output_dir=str(args.out) if args.out else None,
        scene=str(scene) if scene is not None else None,
        duration=getattr(args, "duration", None))


def _dispatch(args) -> list[Path]:
    cfg = resolve_config(args)
    out = Path(cfg.output_dir)
    if args.command == "simulate":
        return run_simulate(cfg, out)
    if args.command == "localize":
        return run_localize(cfg, args.cube, out, args.baseline, args.truth)
    if args.command == "monitor":
        return run_monitor(cfg, args.cube, args.support, out, args.baseline)
    if args.command == "evaluate":
        return run_evaluate(cfg, args.rates, args.truth, out, args.support, args.baseline)
    return run_pipeline(cfg, out, args.baseline)


def _classify(exc: BaseException) -> tuple[str, int] | None:
    if isinstance(exc, ConfigError):
        return "config", EXIT_CONFIG
    if isinstance(exc, (SolverDivergence, FloatingPointError, ArithmeticError,
                        DemodulationError)):
        return "numerical", EXIT_NUMERIC
    if isinstance(exc, (DataError, SceneError, LocalizationError, MonitorError, MetricError,
                        OSError, ValueError)):
        return "data", EXIT_DATA
    return None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        written = _dispatch(args)
    except Exception as exc:
        kind = _classify(exc)
        if kind is None:
            raise
        name, code = kind
        record = {"error": name, "exit_code": code, "type": type(exc).__name__,
                  "message": " ".join(str(exc).split())}
        print(json.dumps(record), file=sys.stderr)
        return code
    for path in written:
        log.info("wrote %s", path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
