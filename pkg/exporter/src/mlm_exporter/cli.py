"""Command line for the masked-LM bridge: export score files or serve scoring."""

from __future__ import annotations

import argparse
import sys

from .exporter import ExporterConfig, export_prior_scores
from .server import serve_scoring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlm-exporter",
        description="Bridge a pretrained masked LM to the score-file format and HTTP scoring protocol.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    export = subs.add_parser("export", help="score all nodes and write a prior score file")
    export.add_argument("--model", required=True, help="checkpoint id or local path")
    export.add_argument("--texts", required=True, help="node texts JSONL")
    export.add_argument("--labels", required=True, help="label texts file")
    export.add_argument("--out", required=True, help="output score file")
    export.add_argument("--tokens-out", dest="tokens_out", help="companion label tokenization JSONL")
    export.add_argument("--instruction", default="", help="prompt instruction text")
    export.add_argument("--batch-size", dest="batch_size", type=int, default=8)
    export.add_argument("--device", default="cpu")
    export.add_argument("--max-length", dest="max_length", type=int, default=128,
                        help="prompt truncation length (text keeps its leading tokens)")
    export.set_defaults(func=cmd_export)

    serve = subs.add_parser("serve", help="serve the HTTP scoring protocol")
    serve.add_argument("--model", required=True, help="checkpoint id or local path")
    serve.add_argument("--port", type=int, default=8301)
    serve.add_argument("--device", default="cpu")
    serve.add_argument("--max-length", dest="max_length", type=int, default=512)
    serve.set_defaults(func=cmd_serve)
    return parser


def cmd_export(args) -> int:
    cfg = ExporterConfig(
        model=args.model,
        texts=args.texts,
        labels=args.labels,
        out=args.out,
        tokens_out=args.tokens_out,
        instruction=args.instruction,
        batch_size=args.batch_size,
        device=args.device,
        max_length=args.max_length,
    )
    export_prior_scores(cfg)
    return 0


def cmd_serve(args) -> int:
    server = serve_scoring(args.model, port=args.port, max_length=args.max_length, device=args.device)
    host, port = server.server_address
    print(f"scoring service listening on http://{host}:{port}/score", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())
