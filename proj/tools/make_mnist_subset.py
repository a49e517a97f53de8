#!/usr/bin/env python3
"""Write a stratified MNIST subset in IDX layout from the 5000-digit CSV that
ships inside the mlxtend wheel (mlxtend/data/data/mnist_5k.csv.gz).

    pip download mlxtend --no-deps -d /tmp/mlx
    python3 tools/make_mnist_subset.py --source /tmp/mlx/mlxtend-*.whl --out data/mnist5k

The output directory holds train-/t10k- image and label files with the
standard MNIST names, so `wavemix train --dataset mnist --data-dir DIR` reads it.
"""

import argparse
import gzip
import io
import random
import struct
import sys
import zipfile
from pathlib import Path

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_rows(source: Path):
    if source.suffix == ".whl" or zipfile.is_zipfile(source):
        with zipfile.ZipFile(source) as zf:
            raw = zf.read(MEMBER)
    else:
        raw = source.read_bytes()
    text = gzip.decompress(raw).decode("ascii")
    rows = []
    for line in io.StringIO(text):
        values = [int(v) for v in line.strip().split(",")]
        if len(values) != 785:
            raise ValueError(f"expected 784 pixels + label, got {len(values)} fields")
        rows.append((bytes(values[:784]), values[784]))
    return rows


def write_idx(path_images: Path, path_labels: Path, rows):
    with open(path_images, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(rows), 28, 28))
        for pixels, _ in rows:
            f.write(pixels)
    with open(path_labels, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(rows)))
        f.write(bytes(label for _, label in rows))


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--source", type=Path, required=True, help="mlxtend wheel or mnist_5k.csv.gz")
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--test-per-class", type=int, default=100)
    ap.add_argument("--train-per-class", type=int, default=0, help="0: all remaining samples")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rows = read_rows(args.source)
    by_class = {}
    for r in rows:
        by_class.setdefault(r[1], []).append(r)
    rng = random.Random(args.seed)
    train, test = [], []
    for label in sorted(by_class):
        items = by_class[label]
        rng.shuffle(items)
        test.extend(items[: args.test_per_class])
        rest = items[args.test_per_class:]
        train.extend(rest[: args.train_per_class] if args.train_per_class else rest)
    rng.shuffle(train)
    rng.shuffle(test)

    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(args.out / "train-images-idx3-ubyte", args.out / "train-labels-idx1-ubyte", train)
    write_idx(args.out / "t10k-images-idx3-ubyte", args.out / "t10k-labels-idx1-ubyte", test)
    print(f"wrote {len(train)} train / {len(test)} test samples to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
