"""Command-line entry point.

One subcommand per pipeline stage plus ``run`` (all stages in order) and
``report`` (print the results of a finished run). Every invocation is
driven by a YAML config; ``--seed`` and ``--stage-dir`` override the
config without editing it. Resuming is the default: a stage whose inputs,
config, and outputs already hash-match its manifest entry is skipped.

Exit codes: 0 success, 1 bad configuration, 2 stage failure,
3 missing/modified dependency (rerun earlier stages).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import ConfigInvalid, load_config
from .runner import MANIFEST_NAME, STAGE_ORDER, MissingDependency, run_pipeline

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAILURE = 2
EXIT_DEPENDENCY = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="path to the pipeline YAML config")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument(
        "--stage-dir", "--output-dir", dest="stage_dir", default=None,
        help="override the config output directory",
    )
    parser.add_argument(
        "--resume", action="store_true",
        help="skip stages whose outputs are already up to date (the default; "
        "kept as an explicit flag)",
    )
    parser.add_argument(
        "--force", action="store_true",
        help="rerun the stage even if its outputs are up to date",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="temporalqa",
        description=(
            "Seeded pipeline for building, debiasing, and scoring temporal "
            "video QA datasets"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run every stage in order")
    _add_common(run)
    run.add_argument(
        "--stages", nargs="+", choices=STAGE_ORDER, default=None,
        help="run only these stages (still in pipeline order)",
    )

    for stage in STAGE_ORDER:
        stage_parser = sub.add_parser(stage, help=f"run only the {stage} stage")
        _add_common(stage_parser)
        if stage == "evaluate":
            stage_parser.add_argument(
                "--predictions", default=None,
                help="JSONL predictions ({item_id, output} per line); "
                "defaults to the uniform-random baseline",
            )

    report = sub.add_parser("report", help="print the results of a finished run")
    report.add_argument("--config", required=True)
    report.add_argument(
        "--stage-dir", "--output-dir", dest="stage_dir", default=None
    )
    report.add_argument("-v", "--verbose", action="store_true")
    return parser


def _apply_overrides(config, args):
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.stage_dir is not None:
        updates["output_dir"] = args.stage_dir
    if getattr(args, "predictions", None) is not None:
        updates["predictions"] = args.predictions
    return dataclasses.replace(config, **updates) if updates else config


def _cmd_report(args) -> int:
    config = load_config(args.config)
    out_dir = Path(args.stage_dir or config.output_dir)
    manifest_path = out_dir / MANIFEST_NAME
    if not manifest_path.exists():
        print(f"no run manifest at {manifest_path}; nothing to report", file=sys.stderr)
        return EXIT_DEPENDENCY
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    print(f"run directory: {out_dir}")
    print(f"config hash:   {manifest.get('config_hash', '')[:16]}")
    for stage in STAGE_ORDER:
        entry = manifest.get("stages", {}).get(stage)
        status = entry["counts"] if entry else "not run"
        print(f"  {stage:<10} {status}")
    audit_path = out_dir / "audit_report.json"
    if audit_path.exists():
        diagnostics = json.loads(audit_path.read_text(encoding="utf-8"))["diagnostics"]
        print(
            "audit: single-frame {acc_single_frame:.3f}  blind {acc_blind:.3f}  "
            "random {acc_random:.3f}".format(**diagnostics)
        )
    score_path = out_dir / "score_report.txt"
    if score_path.exists():
        print(score_path.read_text(encoding="utf-8").rstrip())
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "report":
        return _cmd_report(args)
    try:
        config = _apply_overrides(load_config(args.config), args)
        stages = None if args.command == "run" else [args.command]
        if args.command == "run" and args.stages:
            stages = args.stages
        run_pipeline(config, stages, force=args.force)
    except ConfigInvalid as exc:
        logger.error("invalid config: %s", exc)
        return EXIT_CONFIG
    except MissingDependency as exc:
        logger.error("%s", exc)
        return EXIT_DEPENDENCY
    except Exception:
        logger.exception("stage failed")
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
