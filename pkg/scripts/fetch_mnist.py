"""Fetch MNIST as IDX files for the ``mnist`` experiment.

Tries the usual public mirrors first. If none is reachable and ``mlxtend`` is
installed, writes its bundled 5000-image subset instead (4000 train / 1000
test), which is enough for the desk profile only.

    python scripts/fetch_mnist.py data/mnist
"""

import argparse
import sys
import urllib.request
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
from bam.domains import IDX_FILES, encode_idx  # noqa: E402

MIRRORS = (
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
)


def fetch_official(out: Path) -> bool:
    names = [n for pair in IDX_FILES.values() for n in pair]
    for mirror in MIRRORS:
        try:
            for name in names:
                with urllib.request.urlopen(mirror + name + ".gz", timeout=20) as resp:
                    (out / f"{name}.gz").write_bytes(resp.read())
            return True
        except OSError as exc:
            print(f"{mirror}: {exc}", file=sys.stderr)
    return False


def write_subset(out: Path, seed: int = 0) -> None:
    from mlxtend.data import mnist_data

    x, y = mnist_data()
    order = np.random.default_rng(seed).permutation(len(y))
    images = np.rint(x[order]).astype(np.uint8).reshape(-1, 28, 28)
    labels = y[order].astype(np.uint8)
    for split, sl in (("train", slice(0, 4000)), ("test", slice(4000, None))):
        img_name, lbl_name = IDX_FILES[split]
        (out / img_name).write_bytes(encode_idx(images[sl]))
        (out / lbl_name).write_bytes(encode_idx(labels[sl]))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out", type=Path)
    parser.add_argument("--subset-only", action="store_true",
                        help="skip the mirrors and write the mlxtend subset")
    args = parser.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    if not args.subset_only and fetch_official(args.out):
        print(f"full MNIST written to {args.out}")
        return 0
    try:
        write_subset(args.out)
    except ImportError:
        print("no mirror reachable and mlxtend is not installed", file=sys.stderr)
        return 1
    print(f"5000-image subset written to {args.out} (desk profile only)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
