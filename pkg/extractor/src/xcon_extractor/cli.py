"""Command line: export embeddings from an image folder."""
from __future__ import annotations

import argparse
import logging
import sys

from .extract import ExtractorConfig, extract


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xcon-extract",
                                description="Export backbone embeddings to the "
                                            "xcon feature/metadata format")
    p.add_argument("--images", required=True, help="image folder (searched recursively)")
    p.add_argument("--out", required=True, help="output base path (<out>.bin/<out>.meta)")
    p.add_argument("--backbone", default="dino_vitb16",
                   help="backbone name (dino_vitb16, dino_vits16, toy_cnn)")
    p.add_argument("--views", type=int, default=2, help="augmented views per image")
    p.add_argument("--split", help="metadata-format file assigning labels/flags by id")
    p.add_argument("--augmentation", choices=["random", "center"], default="random")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--device", default="cpu")
    p.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    cfg = ExtractorConfig(image_root=args.images, output_path=args.out,
                          backbone_name=args.backbone, views=args.views,
                          augmentation=args.augmentation, batch_size=args.batch_size,
                          device=args.device, split_path=args.split, seed=args.seed)
    try:
        result = extract(cfg)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {result.bin_path} ({result.n_images} images, "
          f"{result.n_views} views, d={result.dim}, {len(result.skipped)} skipped)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
