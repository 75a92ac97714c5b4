"""Command-line entry points: ``serve`` and ``export-cache``."""
from __future__ import annotations

import argparse
import sys

from .export import ExportError, export_cache
from .registry import (
    DEFAULT_EMBED_TAG,
    DEFAULT_NLI_TAG,
    DEFAULT_WORDVEC_TAG,
    RegistryError,
    default_config,
    load_service_config,
)

EXIT_OK = 0
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="model-server",
        description="Inference sidecar for the medrag provider protocol",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("-c", "--config", help="service config JSON (default: built-in registry)")
    serve.add_argument("--host", help="bind host (overrides config)")
    serve.add_argument("--port", type=int, help="bind port (overrides config)")

    export = sub.add_parser(
        "export-cache",
        help="precompute a corpus into file-backed provider dumps",
    )
    export.add_argument("-c", "--config", help="service config JSON (default: built-in registry)")
    export.add_argument("--corpus", required=True, help="corpus JSONL file")
    export.add_argument("--out", required=True, help="output directory for the dumps")
    export.add_argument(
        "--replay",
        action="append",
        default=[],
        help="replay answer file whose texts should also be embedded (repeatable)",
    )
    export.add_argument("--embed-tag", default=DEFAULT_EMBED_TAG)
    export.add_argument("--nli-tag", default=DEFAULT_NLI_TAG)
    export.add_argument("--wordvec-tag", default=DEFAULT_WORDVEC_TAG)
    return parser


def _load_config(path: str | None):
    return load_service_config(path) if path else default_config()


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args.config)
    except RegistryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "serve":
        import uvicorn

        from .service import build_app

        app = build_app(config)
        uvicorn.run(
            app,
            host=args.host or config.host,
            port=args.port if args.port is not None else config.port,
            log_level="warning",
        )
        return EXIT_OK

    try:
        summary = export_cache(
            config,
            args.corpus,
            args.out,
            replay_paths=args.replay,
            embed_tag=args.embed_tag,
            nli_tag=args.nli_tag,
            wordvec_tag=args.wordvec_tag,
        )
    except (ExportError, RegistryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for store in ("embed", "nli", "wordvec"):
        print(f"{store}: +{summary[store]} rows ({summary[store + '_total']} total)")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
