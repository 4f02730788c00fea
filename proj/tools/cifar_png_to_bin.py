#!/usr/bin/env python3
"""Convert the tfjs-cifar10 npm package (PNG sheets + label JSON) to the
CIFAR-10 binary batch layout read by `qhconv preprocess`.

Each sheet is 1024 x 10000 RGB: one image per row, pixels in row-major order.
"""
import argparse
import json
from pathlib import Path

import numpy as np
from PIL import Image


def convert(sheet, labels, out):
    px = np.asarray(Image.open(sheet).convert("RGB"), dtype=np.uint8)  # (n, 1024, 3)
    n = px.shape[0]
    if len(labels) != n:
        raise SystemExit(f"{sheet}: {n} images but {len(labels)} labels")
    rec = np.empty((n, 3073), dtype=np.uint8)
    rec[:, 0] = labels
    rec[:, 1:] = px.transpose(0, 2, 1).reshape(n, 3072)  # channel-major planes
    rec.tofile(out)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("package", type=Path, help="unpacked tfjs-cifar10 package directory")
    ap.add_argument("out", type=Path, help="output directory")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    train = json.loads((args.package / "train_lables.json").read_text())
    for b in range(5):
        convert(args.package / f"data_batch_{b + 1}.png", train[b * 10000:(b + 1) * 10000],
                args.out / f"data_batch_{b + 1}.bin")
    test = json.loads((args.package / "test_lables.json").read_text())
    convert(args.package / "test_batch.png", test, args.out / "test_batch.bin")


if __name__ == "__main__":
    main()
