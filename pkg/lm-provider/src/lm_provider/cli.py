"""Command line entry points: `lm-provider finetune|serve`."""

from __future__ import annotations

import argparse
import sys

from .finetune import KINDS, fine_tune
from .server import ProviderConfig, serve


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lm-provider",
        description="Fine-tune and serve subject/body text models")
    sub = parser.add_subparsers(dest="command", required=True)

    ft = sub.add_parser("finetune", help="train a model on a line corpus")
    ft.add_argument("--corpus", required=True,
                    help="text file, one sample per line")
    ft.add_argument("--kind", required=True, choices=KINDS)
    ft.add_argument("--out", required=True, help="artifact directory")
    ft.add_argument("--base", default=None,
                    help="existing artifact directory to continue from")
    ft.add_argument("--epochs", type=int, default=3)
    ft.add_argument("--seed", type=int, default=0)

    sv = sub.add_parser("serve", help="serve POST /v1/generate")
    sv.add_argument("--subject-model", required=True)
    sv.add_argument("--body-model", required=True)
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8081)
    sv.add_argument("--temperature", type=float, default=None)
    sv.add_argument("--top-k", type=int, default=None)
    sv.add_argument("--max-length", type=int, default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "finetune":
            fine_tune(args.corpus, args.kind, args.out,
                      base_dir=args.base, epochs=args.epochs, seed=args.seed)
        else:
            serve(ProviderConfig(
                subject_dir=args.subject_model, body_dir=args.body_model,
                host=args.host, port=args.port,
                temperature=args.temperature, top_k=args.top_k,
                max_length=args.max_length))
    except (FileNotFoundError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
