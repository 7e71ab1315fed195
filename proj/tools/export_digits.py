#!/usr/bin/env python3
"""Export a 28x28 handwritten-digit corpus as IDX files.

Uses scikit-learn's bundled digits (1797 real 8x8 handwritten digits),
bilinearly upscaled to 28x28. Any IDX-format 28x28 digit corpus works for the
digit-video experiments; this script just produces one without downloads.

Usage: export_digits.py OUT_DIR [--test-fraction 0.2] [--seed 0]
Writes train-images.idx, train-labels.idx, test-images.idx, test-labels.idx.
"""

import argparse
import pathlib
import struct

import numpy as np
from PIL import Image
from sklearn.datasets import load_digits
from sklearn.model_selection import train_test_split


def write_idx_images(path: pathlib.Path, images: np.ndarray) -> None:
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path: pathlib.Path, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--test-fraction", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)

    ds = load_digits()
    imgs8 = ds.images / 16.0  # 8x8, values 0..16
    up = np.stack(
        [
            np.asarray(
                Image.fromarray((im * 255).astype(np.uint8)).resize(
                    (28, 28), Image.BILINEAR
                )
            )
            for im in imgs8
        ]
    )
    xtr, xte, ytr, yte = train_test_split(
        up,
        ds.target,
        test_size=args.test_fraction,
        random_state=args.seed,
        stratify=ds.target,
    )
    write_idx_images(args.out_dir / "train-images.idx", xtr)
    write_idx_labels(args.out_dir / "train-labels.idx", ytr)
    write_idx_images(args.out_dir / "test-images.idx", xte)
    write_idx_labels(args.out_dir / "test-labels.idx", yte)
    print(f"wrote {len(ytr)} train / {len(yte)} test digits to {args.out_dir}")


if __name__ == "__main__":
    main()
