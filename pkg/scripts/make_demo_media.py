#!/usr/bin/env python3
"""Generate seeded demo media for the desk-scale walkthrough in the README:
a directory of training PNGs and two short Y4M clips."""

import argparse
from pathlib import Path

from uapg.imaging import write_png, write_y4m
from uapg.synthdata import make_images, make_video


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo_media", help="output directory")
    ap.add_argument("--images", type=int, default=64,
                    help="number of training images")
    ap.add_argument("--image-size", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    root = Path(args.out)
    img_dir = root / "train_images"
    img_dir.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(make_images(args.images, args.image_size,
                                        args.image_size, seed=args.seed)):
        write_png(img_dir / f"img_{i:04d}.png", img)
    for i, seed in enumerate((args.seed + 100, args.seed + 101)):
        write_y4m(root / f"clip_{i}.y4m",
                  make_video(8, 128, 128, seed=seed))
    print(f"wrote {args.images} PNGs to {img_dir} and 2 clips to {root}")


if __name__ == "__main__":
    main()
