"""Command line launcher: ``python -m sdservice`` or the installed script."""

import argparse

import uvicorn

from .app import create_app


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(
        prog="sd-service", description="depth-conditioned denoising backend"
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--seed", type=int, default=0, help="server model seed")
    parser.add_argument(
        "--capacity",
        type=int,
        default=8,
        help="guidance image cache size (floor of 8)",
    )
    args = parser.parse_args(argv)
    uvicorn.run(
        create_app(seed=args.seed, capacity=args.capacity),
        host=args.host,
        port=args.port,
        log_level="warning",
    )


if __name__ == "__main__":
    main()
