#!/usr/bin/env python3
"""Build data/mnist/*.idx-ubyte.gz from the MNIST digits bundled in the npm `mnist` package.

The package ships 1000 digits per class as JSON arrays of intensities in [0,1]
(three decimals). They are re-quantized to bytes, shuffled with a fixed seed and
split 9000 train / 1000 test.

    python3 tools/fetch_mnist.py [--package DIR] [--out data/mnist]

Without --package, `npm pack mnist@1.1.0` is run in a temp dir.
"""

import argparse
import gzip
import json
import pathlib
import random
import struct
import subprocess
import tarfile
import tempfile

SIDE = 28


def load_digits(pkg: pathlib.Path):
    examples = []
    for d in range(10):
        flat = json.loads((pkg / "src" / "digits" / f"{d}.json").read_text())["data"]
        n = len(flat) // (SIDE * SIDE)
        for i in range(n):
            img = flat[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
            examples.append((bytes(min(255, max(0, round(v * 255))) for v in img), d))
    return examples


def write_gz(path: pathlib.Path, payload: bytes):
    # mtime=0 so reruns give identical files
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as f:
        f.write(payload)


def write_split(out: pathlib.Path, prefix: str, examples):
    images = struct.pack(">IIII", 0x803, len(examples), SIDE, SIDE) + b"".join(e[0] for e in examples)
    labels = struct.pack(">II", 0x801, len(examples)) + bytes(e[1] for e in examples)
    write_gz(out / f"{prefix}-images-idx3-ubyte.gz", images)
    write_gz(out / f"{prefix}-labels-idx1-ubyte.gz", labels)


def fetch_package(tmp: pathlib.Path) -> pathlib.Path:
    subprocess.run(["npm", "pack", "mnist@1.1.0", "--silent"], cwd=tmp, check=True, stdout=subprocess.DEVNULL)
    tgz = next(tmp.glob("mnist-*.tgz"))
    with tarfile.open(tgz) as t:
        t.extractall(tmp)
    return tmp / "package"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--package", type=pathlib.Path)
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path(__file__).resolve().parent.parent / "data" / "mnist")
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=20240101)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        pkg = args.package or fetch_package(pathlib.Path(tmp))
        examples = load_digits(pkg)
    random.Random(args.seed).shuffle(examples)
    args.out.mkdir(parents=True, exist_ok=True)
    write_split(args.out, "train", examples[args.test:])
    write_split(args.out, "t10k", examples[:args.test])
    print(f"wrote {len(examples) - args.test} train / {args.test} test to {args.out}")


if __name__ == "__main__":
    main()
