"""Export CLI: ``fsml-export --corpus DIR --encoder NAME --out FILE``."""

from __future__ import annotations

import argparse
import sys

from .export import ExportError, ExportJob, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsml-export",
        description="Encode a corpus with a pretrained transformer into FSML",
    )
    parser.add_argument("--corpus", required=True, help="corpus directory")
    parser.add_argument("--encoder", required=True,
                        help="model name or local encoder directory")
    parser.add_argument("--out", required=True, help="output FSML path")
    parser.add_argument("--max-length", type=int, default=128)
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--device", default="cpu")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = ExportJob(corpus=args.corpus, encoder=args.encoder, out=args.out,
                    max_length=args.max_length, batch_size=args.batch_size,
                    device=args.device)
    try:
        path = export(job)
    except ExportError as exc:
        print(f"export error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
