"""Command line entry: simulseq-server --stdio | --port N."""

import argparse
import sys

from .server import TASKS, ServerConfig, serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="simulseq-server")
    transport = parser.add_mutually_exclusive_group(required=True)
    transport.add_argument("--stdio", action="store_true",
                           help="serve the parent process on stdin/stdout")
    transport.add_argument("--port", type=int, help="listen on this TCP port")
    parser.add_argument("--host", default="127.0.0.1",
                        help="bind address for --port (default 127.0.0.1)")
    parser.add_argument("--task", choices=list(TASKS), default="copy")
    parser.add_argument("--vocab-size", type=int, default=50)
    parser.add_argument("--window", type=int, default=3)
    parser.add_argument("--ratio", type=int, default=2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    config = ServerConfig(
        stdio=args.stdio,
        host=args.host,
        port=args.port,
        task=args.task,
        vocab_size=args.vocab_size,
        window=args.window,
        ratio=args.ratio,
        seed=args.seed,
    )
    try:
        serve(config)
    except KeyboardInterrupt:
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
