"""Command-line entry point: one subcommand per pipeline stage plus
``run`` for the offline chain.

Flags override the configuration file; exit codes are 0 (ok),
2 (configuration or data error), 3 (missing upstream artifact), and
4 (provider/transport failure).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import (
    PipelineConfig,
    RankingConfig,
    config_hash,
    load_config,
    render_config,
)
from .errors import (
    ConfigError,
    DomainError,
    ProviderLookupError,
    TransportError,
    UpstreamMissingError,
)
from .generation import ConditionKind
from .pipeline import RUN_STAGES, STAGES, Pipeline

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UPSTREAM = 3
EXIT_PROVIDER = 4


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "-c", "--config", required=True, help="path to the JSON configuration file"
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="accepted for interface stability; the pipeline is deterministic "
        "and this flag changes nothing",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def _add_ranking_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lambda", dest="lam", type=float, default=None,
                        help="relevance/redundancy trade-off in [0, 1]")
    parser.add_argument("--alpha", type=float, default=None,
                        help="score/recency trade-off in [0, 1]")
    parser.add_argument("--k", type=int, default=None, help="retrieval depth")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="medrag",
        description="Contradiction-aware retrieval pipeline for consumer "
        "medicine questions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for stage in STAGES:
        stage_parser = sub.add_parser(stage, help=f"run the {stage} stage")
        _add_common(stage_parser)
        if stage in ("rank", "generate"):
            _add_ranking_overrides(stage_parser)
        if stage == "generate":
            stage_parser.add_argument(
                "--condition",
                action="append",
                choices=[kind.value for kind in ConditionKind],
                default=None,
                help="restrict to one or more retrieval conditions (repeatable)",
            )
            stage_parser.add_argument(
                "--model",
                action="append",
                default=None,
                help="restrict to one or more configured model tags (repeatable)",
            )
        if stage == "analyze":
            stage_parser.add_argument(
                "--joint", action="store_true",
                help="emit only the score-vs-salience count grid",
            )
            stage_parser.add_argument(
                "--temporal", action="store_true",
                help="emit only the 5-year-interval salience distribution",
            )
            stage_parser.add_argument(
                "--png", action="store_true", help="also render a heatmap image"
            )

    run_parser = sub.add_parser(
        "run", help=f"run the offline chain: {', '.join(RUN_STAGES)}"
    )
    _add_common(run_parser)
    _add_ranking_overrides(run_parser)

    show = sub.add_parser("config", help="validate and print the configuration")
    _add_common(show)
    return parser


def _apply_overrides(config: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    ranking = config.ranking
    updates = {}
    if getattr(args, "lam", None) is not None:
        updates["lam"] = args.lam
    if getattr(args, "alpha", None) is not None:
        updates["alpha"] = args.alpha
    if getattr(args, "k", None) is not None:
        updates["k"] = args.k
    if updates:
        ranking = RankingConfig(
            lam=updates.get("lam", ranking.lam),
            alpha=updates.get("alpha", ranking.alpha),
            k=updates.get("k", ranking.k),
            epsilon=ranking.epsilon,
        )
        config = dataclasses.replace(config, ranking=ranking)
    if getattr(args, "condition", None):
        config = dataclasses.replace(
            config, conditions=tuple(ConditionKind(c) for c in args.condition)
        )
    if getattr(args, "model", None):
        providers = config.providers
        if providers is None:
            raise ConfigError("--model requires a providers section in the configuration")
        keep = tuple(g for g in providers.generation if g.model_tag in set(args.model))
        missing = set(args.model) - {g.model_tag for g in keep}
        if missing:
            raise ConfigError(f"unknown model tags: {sorted(missing)}")
        config = dataclasses.replace(
            config, providers=dataclasses.replace(providers, generation=keep)
        )
    return config


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.seed is not None:
        log.info("--seed %d accepted; the pipeline is deterministic", args.seed)

    try:
        config = load_config(args.config)
        config = _apply_overrides(config, args)
        base_dir = Path(args.config).resolve().parent

        if args.command == "config":
            print(json.dumps(render_config(config), indent=2, sort_keys=True))
            print(f"# config_hash: {config_hash(config)}", file=sys.stderr)
            return EXIT_OK

        pipeline = Pipeline(config, base_dir)
        if args.command == "run":
            results = pipeline.run()
        elif args.command == "analyze":
            subset = args.joint or args.temporal
            results = [
                pipeline.run_stage(
                    "analyze",
                    png=args.png,
                    joint=args.joint or not subset,
                    temporal=args.temporal or not subset,
                )
            ]
        else:
            results = [pipeline.run_stage(args.command)]
    except (ConfigError, DomainError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except UpstreamMissingError as exc:
        log.error("%s", exc)
        return EXIT_UPSTREAM
    except (TransportError, ProviderLookupError) as exc:
        log.error("%s", exc)
        return EXIT_PROVIDER

    for result in results:
        names = ", ".join(p.name for p in result.outputs)
        print(f"{result.stage}: {result.status} ({names})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
