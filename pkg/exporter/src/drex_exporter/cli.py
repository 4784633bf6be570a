"""Command line: drex-export export --images DIR --out features.drxf [...]"""

from __future__ import annotations

import argparse
import sys

from .backbones import DEFAULT_DINO_MODEL, DEFAULT_DINO_SIZE, WeightLoadError
from .export import ExportJob, extract_features


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drex-export",
        description="Extract frozen-backbone features from an image folder into a DRXF file.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="run both backbones over a folder of images")
    p.add_argument("--images", required=True, help="directory of images (searched recursively)")
    p.add_argument("--out", required=True, help="output .drxf path")
    p.add_argument("--scores", help="two-column id,score CSV with scores in [0,1]")
    p.add_argument("--batch", type=int, default=32, help="inference batch size")
    p.add_argument("--device", default="cpu", help="torch device (default cpu)")
    p.add_argument(
        "--weights",
        choices=["pretrained", "random"],
        default="pretrained",
        help="pretrained downloads published weights; random builds seeded "
        "untrained backbones (shape/determinism testing without network)",
    )
    p.add_argument("--init-seed", type=int, default=0, dest="init_seed",
                   help="seed for --weights random")
    p.add_argument("--dino-model", default=DEFAULT_DINO_MODEL, dest="dino_model",
                   help="hub id of the transformer backbone")
    p.add_argument("--dino-dim", type=int, default=None, dest="dino_dim",
                   help="expected embedding width (passthrough check for other variants)")
    p.add_argument("--dino-size", type=int, default=DEFAULT_DINO_SIZE, dest="dino_size",
                   help="square input resolution for the transformer branch")
    p.add_argument("--summary", help="summary JSON path (default: alongside --out)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    job = ExportJob(
        image_dir=args.images,
        out_path=args.out,
        scores_path=args.scores,
        batch_size=args.batch,
        device=args.device,
        weights=args.weights,
        init_seed=args.init_seed,
        dino_model=args.dino_model,
        dino_dim=args.dino_dim,
        dino_size=args.dino_size,
        summary_path=args.summary,
    )
    try:
        summary = extract_features(job)
    except WeightLoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        f"exported {summary.exported} records "
        f"({summary.scored} scored, {len(summary.skipped)} skipped) -> {args.out}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
