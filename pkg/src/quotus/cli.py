"""Command-line interface: ``quotus <subcommand> --config <path>``.

Exit status: 0 on success, 1 on configuration or input validation errors,
2 on runtime errors (including missing prior-stage artifacts).
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .bigraph import GraphError
from .complete import CompletionError
from .config import ConfigError, load_config
from .corpus import CorpusError
from .describe import DescribeError
from .latent import LatentError
from .pipeline import STAGE_ORDER, PipelineError, run_stage

_SUBCOMMAND_HELP = {
    "ingest": "validate and normalize the input corpus",
    "match": "deduplicate articles and align quotes to transcripts",
    "cluster": "group matches into transcript-anchored quote clusters",
    "graph": "emit earliest-citation outlet-to-cluster edges",
    "describe": "per-outlet statistics and category aggregates",
    "surprise": "rewiring null model and surprise per category pair",
    "complete": "baselines and nuclear-norm matrix completion",
    "latent": "latent space, feature projections, correlations",
    "report": "static HTML report with figures and data files",
    "all": "run every stage in order",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quotus",
        description="Quote-matching pipeline from news corpora to a latent bias space.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in (*STAGE_ORDER, "all"):
        p = sub.add_parser(name, help=_SUBCOMMAND_HELP[name])
        p.add_argument("--config", required=True, help="path to the pipeline config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--workdir", default=None, help="override the working directory")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed, workdir_override=args.workdir)
        for path in (cfg.transcripts_path, cfg.articles_path, cfg.outlets_path, *cfg.feature_paths):
            if not path.exists():
                raise ConfigError(f"input path does not exist: {path}")
    except (ConfigError, CorpusError) as exc:
        print(f"quotus: error: {exc}", file=sys.stderr)
        return 1
    try:
        results = run_stage(args.subcommand, cfg)
    except (ConfigError, CorpusError) as exc:
        print(f"quotus: error: {exc}", file=sys.stderr)
        return 1
    except (PipelineError, GraphError, CompletionError, DescribeError, LatentError, OSError) as exc:
        print(f"quotus: error: {exc}", file=sys.stderr)
        return 2
    for stage, summary in results.items():
        pretty = ", ".join(f"{k}={v}" for k, v in sorted(summary.items()))
        print(f"{stage}: {pretty}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
