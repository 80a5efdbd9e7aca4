"""Command-line entry point: flags + optional config file -> one run."""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .config import RunConfig, parse_config
from .exceptions import MeshtexError
from .pipeline import run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshtex",
        description=(
            "Bake a texture for a UV-mapped mesh via synchronized multi-view "
            "diffusion. Toy mode needs no backend: "
            "meshtex --mesh builtin:sphere --mode toy --out out"
        ),
    )
    parser.add_argument("--config", help="key=value config file", default=None)
    for f in dataclasses.fields(RunConfig):
        parser.add_argument(
            f"--{f.name}",
            dest=f.name,
            default=None,
            metavar="V",
            help=f"override {f.name} (default: {f.default!r})",
        )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        f.name: getattr(args, f.name)
        for f in dataclasses.fields(RunConfig)
        if getattr(args, f.name) is not None
    }
    try:
        config = parse_config(args.config, overrides)
        report = run(config)
    except (MeshtexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    total = sum(report.timings.values())
    print(f"texture: {report.outputs['texture']}")
    print(f"report:  {report.outputs['report']}")
    if report.psnr_db is not None:
        print(f"psnr:    {report.psnr_db:.1f} dB vs toy targets")
    print(f"done in {total:.1f}s ({', '.join(f'{k} {v:.1f}s' for k, v in report.timings.items())})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
