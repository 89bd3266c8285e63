"""Build MNIST IDX files from the digit subset bundled in the npm ``mnist`` package.

The package ships about 10,000 real MNIST digits as JSON (28x28 grey levels
in [0, 1], three decimals). They are shuffled with a fixed seed, split into
train/test, and written as gzipped IDX files that ``load_mnist`` reads. If
the official IDX files are available, copy them into the data directory
instead and skip this script.

    python scripts/fetch_mnist.py --out data/mnist [--package path/to/mnist-1.1.0.tgz]
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path

import numpy as np

from spikingssm.io import write_idx


def _package_tarball(workdir: Path) -> Path:
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True, capture_output=True)
    return next(workdir.glob("mnist-*.tgz"))


def load_digits(tarball: Path) -> tuple[np.ndarray, np.ndarray]:
    images, labels = [], []
    with tarfile.open(tarball) as tar:
        for digit in range(10):
            member = tar.extractfile(f"package/src/digits/{digit}.json")
            flat = np.asarray(json.load(member)["data"], dtype=np.float64)
            if flat.size % 784:
                raise ValueError(f"digit {digit}: {flat.size} values is not a multiple of 784")
            imgs = np.rint(flat.reshape(-1, 28, 28) * 255.0).clip(0, 255).astype(np.uint8)
            images.append(imgs)
            labels.append(np.full(len(imgs), digit, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/mnist")
    ap.add_argument("--package", help="local mnist-*.tgz; fetched with `npm pack` when omitted")
    ap.add_argument("--test-count", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    with tempfile.TemporaryDirectory() as tmp:
        tarball = Path(args.package) if args.package else _package_tarball(Path(tmp))
        images, labels = load_digits(tarball)
    order = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[order], labels[order]
    n_test = args.test_count
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte.gz", images[n_test:])
    write_idx(out / "train-labels-idx1-ubyte.gz", labels[n_test:])
    write_idx(out / "t10k-images-idx3-ubyte.gz", images[:n_test])
    write_idx(out / "t10k-labels-idx1-ubyte.gz", labels[:n_test])
    print(f"train={len(labels) - n_test} test={n_test} seed={args.seed} out={out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
