#!/usr/bin/env python3
"""Rebuild the CIFAR-10 binary batches from the `tfjs-cifar10` npm package.

The npm package ships each batch as a 1024x10000 RGB PNG (one image per row,
pixels in HWC order) plus JSON label lists. This script writes the standard
`cifar-10-batches-bin/` layout: 3073-byte records, one label byte followed by
the R, G and B planes (1024 bytes each, row-major).

Usage:
    npm pack tfjs-cifar10 && tar xzf tfjs-cifar10-*.tgz
    python3 tools/cifar10_from_tfjs.py package/ "$WALAB_DATA_DIR"
"""

import argparse
import json
import pathlib
import sys

import numpy as np
from PIL import Image


def convert(png: pathlib.Path, labels: list[int], out: pathlib.Path) -> None:
    pixels = np.asarray(Image.open(png).convert("RGB"), dtype=np.uint8)
    n = pixels.shape[0]
    if pixels.shape != (n, 1024, 3) or len(labels) != n:
        sys.exit(f"{png}: unexpected shape {pixels.shape} for {len(labels)} labels")
    planes = pixels.transpose(0, 2, 1).reshape(n, 3072)
    records = np.empty((n, 3073), dtype=np.uint8)
    records[:, 0] = np.asarray(labels, dtype=np.uint8)
    records[:, 1:] = planes
    out.write_bytes(records.tobytes())
    print(f"wrote {out} ({n} records)")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("package_dir", type=pathlib.Path)
    parser.add_argument("data_root", type=pathlib.Path)
    args = parser.parse_args()

    src = args.package_dir
    dst = args.data_root / "cifar-10-batches-bin"
    dst.mkdir(parents=True, exist_ok=True)

    train = json.loads((src / "train_lables.json").read_text())
    test = json.loads((src / "test_lables.json").read_text())
    for i in range(5):
        convert(src / f"data_batch_{i + 1}.png", train[i * 10000:(i + 1) * 10000],
                dst / f"data_batch_{i + 1}.bin")
    convert(src / "test_batch.png", test, dst / "test_batch.bin")


if __name__ == "__main__":
    main()
