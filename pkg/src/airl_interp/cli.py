"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 pipeline-order or
artifact error, 4 numeric or training failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import PipelineConfig, load_config, validate
from .errors import ConfigError, ContractError, DataError, NumericError, PipelineError, TrainingError
from .pipeline import STAGES, Manifest, plan, run_stages

EXIT_OK, EXIT_USAGE, EXIT_PIPELINE, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("airl_interp")


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="YAML configuration file (defaults to built-in settings)")
    parser.add_argument("--seed", type=int, metavar="N", help="override the root seed")
    parser.add_argument("--out", metavar="DIR", help="artifact directory (overrides paths.out)")
    parser.add_argument("--force", action="store_true",
                        help="ignore missing or mismatched predecessor stages; run-all also recomputes finished stages")
    parser.add_argument("--dry-run", action="store_true", help="validate the configuration, print the plan, write nothing")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="airl-interp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "train-expert": "train the expert with the self-critical loss and collect its trajectories",
        "train-airl": "train the discriminator and novice on the expert trajectories",
        "analyze": "score the expert trajectories and write the reward report",
        "run-all": "run every stage in order, resuming finished ones",
    }
    for name, text in helps.items():
        _common(sub.add_parser(name, help=text, description=text))
    return p


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else validate(PipelineConfig())
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("must be >= 0", "seed")
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.out:
        cfg.paths.out = args.out
    return cfg


def _print_plan(cfg, root, stages, resume):
    print(f"config hash {cfg.config_hash}  seed {cfg.seed}  out {root}")
    for stage, action in plan(cfg, root, stages, resume=resume):
        print(f"  {stage:<13} {action}")


def _run(args) -> int:
    cfg = resolve_config(args)
    root = Path(cfg.paths.out)
    if args.command == "run-all":
        stages, resume = STAGES, not args.force
    else:
        stages, resume = (args.command,), False
    if args.dry_run:
        _print_plan(cfg, root, stages, resume)
        return EXIT_OK
    results = run_stages(cfg, root, stages, force=args.force, resume=resume)
    for stage, res in results.items():
        if res == "skipped":
            print(f"{stage}: already complete")
        else:
            print(f"{stage}: " + json.dumps(res, sort_keys=True, default=str))
    print(f"manifest: {Manifest(root).path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"error: configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PipelineError, DataError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except (TrainingError, NumericError) as exc:
        layer = getattr(exc, "layer", None)
        where = f" (layer {layer})" if layer is not None else ""
        print(f"error: training failed{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
