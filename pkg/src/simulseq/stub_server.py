"""Minimal stdio server wrapping the built-in synthetic translator.

Run as a child process by the bridge:

    python -m simulseq.stub_server --task reorder --vocab-size 50 --seed 0 --stdio

Task parameters must match the client's reference model for differential
checks to pass; the protocol itself works regardless.
"""

from __future__ import annotations

import argparse
import sys

from .bridge import serve_model
from .model import SyntheticTaskSpec, ToyTranslator


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="simulseq-stub-server")
    parser.add_argument("--task", choices=["copy", "reorder", "expand"], default="copy")
    parser.add_argument("--vocab-size", type=int, default=50)
    parser.add_argument("--window", type=int, default=3)
    parser.add_argument("--ratio", type=int, default=2)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--stdio", action="store_true",
                        help="serve on stdin/stdout (the only transport here)")
    args = parser.parse_args(argv)
    if not args.stdio:
        parser.error("--stdio is required")
    spec = SyntheticTaskSpec(
        kind=args.task,
        vocab_size=args.vocab_size,
        window=args.window,
        ratio=args.ratio,
        seed=args.seed,
    )
    model = ToyTranslator.from_spec(spec)
    serve_model(model, sys.stdin.buffer, sys.stdout.buffer,
                model_name=f"toy-{args.task}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
