"""Command-line entry point: ``factline <command> [options]``.

Exit codes: 0 success, 2 usage error or unknown command, 3 missing input,
4 invalid configuration, 5 runtime or model-endpoint failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from factline.config import ConfigError, load_config
from factline.pipeline import (
    COMMANDS,
    EXIT_CONFIG,
    EXIT_MISSING_INPUT,
    EXIT_OK,
    EXIT_RUNTIME,
    RECOVERY_METHODS,
    MissingInputError,
    run_command,
)

logger = logging.getLogger("factline")

_HELP = {
    "fixtures": "generate the synthetic fixture corpus",
    "ingest": "section reports and split them into sentences",
    "extract": "extract facts from sentences or reports",
    "annotate": "attach metadata and label sets to facts",
    "sample": "sample training triplets with rules 1-6",
    "train": "train the fact encoder on the active tasks",
    "encode": "embed texts into an embedding cache file",
    "score": "score candidate/reference report pairs",
    "eval": "run triplet, NLI, ranking and Jaccard evaluations",
    "recover": "template-based report recovery",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="overrides [run] seed")
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("--cache-dir", help="reply cache directory (default: $FACTLINE_CACHE)")
    common.add_argument("--jobs", type=int, default=0, help="worker threads (default: [run] jobs)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="factline", description="Fact extraction, encoding and scoring.")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)
    cmds = {name: sub.add_parser(name, parents=[common], help=_HELP[name]) for name in COMMANDS}

    cmds["ingest"].add_argument("--reports")
    p = cmds["extract"]
    p.add_argument("--sentences")
    p.add_argument("--reports")
    p.add_argument("--extractor", choices=("rule_based", "student", "llm"))
    p.add_argument("--student-model")
    p.add_argument("--train-pairs")
    p = cmds["annotate"]
    p.add_argument("--facts")
    p.add_argument("--annotator", choices=("rule", "llm"))
    p = cmds["sample"]
    p.add_argument("--facts")
    p.add_argument("--split", help="keep only rows with this split tag")
    p.add_argument("--annotations")
    p.add_argument("--paraphrases")
    p.add_argument("--hard-triplets")
    p = cmds["train"]
    for flag in ("--triplets", "--nli", "--annotations", "--sentences", "--er", "--init"):
        p.add_argument(flag)
    p = cmds["encode"]
    p.add_argument("--checkpoint")
    p.add_argument("--texts")
    p = cmds["score"]
    p.add_argument("--pairs")
    p.add_argument("--metric", action="append", choices=("cxrfescore", "bleu", "rouge_l", "cider_d"))
    p.add_argument("--checkpoint")
    p = cmds["eval"]
    for flag in ("--checkpoint", "--triplets", "--nli-val", "--nli-test", "--labeled-sentences", "--reports"):
        p.add_argument(flag)
    p = cmds["recover"]
    p.add_argument("--reports")
    p.add_argument("--method", choices=tuple(RECOVERY_METHODS))
    p.add_argument("--metric", action="append", choices=("cxrfescore", "bleu", "rouge_l", "cider_d"))
    p.add_argument("--checkpoint")
    return parser


_COMMON = {"command", "config", "seed", "out", "cache_dir", "jobs", "verbose"}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    logging.getLogger().setLevel(logging.DEBUG if args.verbose else cfg.run.log_level.upper())
    cfg.log()
    options = {k: v for k, v in vars(args).items() if k not in _COMMON and v is not None}
    try:
        manifest = run_command(args.command, cfg, options, args.out, seed=args.seed,
                               cache_dir=args.cache_dir, jobs=args.jobs)
    except MissingInputError as exc:
        logger.error("%s", exc)
        return EXIT_MISSING_INPUT
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except Exception as exc:  # anything else is a runtime failure with its own exit code
        logger.error("%s failed: %s: %s", args.command, type(exc).__name__, exc)
        logger.debug("traceback", exc_info=True)
        return EXIT_RUNTIME
    logger.info("%s finished in %.2fs; %d outputs", args.command, manifest.wall_clock, len(manifest.outputs))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
