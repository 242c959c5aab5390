"""Rotated-digit domain adaptation with a Bayesian linear classifier."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import conjugate as cj
from .memory import MemoryBuffer, ReadoutWeights, SelectionConfig, bam_step

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
N_CLASSES = 10


class IdxParseError(ValueError):
    """Malformed IDX payload; ``expected`` and ``actual`` describe the mismatch."""

    def __init__(self, message: str, expected=None, actual=None):
        super().__init__(message)
        self.expected = expected
        self.actual = actual


def parse_idx(data: bytes, expected_magic: int | None = None) -> np.ndarray:
    """Decode an unsigned-byte IDX file (gzip input is decompressed first)."""
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    if len(data) < 4:
        raise IdxParseError("payload shorter than the 4-byte magic number", 4, len(data))
    (magic,) = struct.unpack(">I", data[:4])
    allowed = (IMAGE_MAGIC, LABEL_MAGIC) if expected_magic is None else (expected_magic,)
    if magic not in allowed:
        raise IdxParseError(f"bad magic number 0x{magic:08x}, expected one of "
                            + ", ".join(f"0x{m:08x}" for m in allowed), allowed, magic)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxParseError(f"header needs {header} bytes, got {len(data)}", header, len(data))
    dims = struct.unpack(f">{ndim}I", data[4:header])
    size = 1
    for d in dims:
        size *= d
        if size > 2**40:
            raise IdxParseError(f"dimensions {dims} overflow", None, dims)
    expected = header + size
    if len(data) != expected:
        kind = "truncated" if len(data) < expected else "oversized"
        raise IdxParseError(f"{kind} payload: expected {expected} bytes, got {len(data)}",
                            expected, len(data))
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def encode_idx(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype != np.uint8 or array.ndim not in (1, 3):
        raise ValueError("IDX encoding supports uint8 arrays with 1 or 3 dimensions")
    magic = 0x0800 | array.ndim
    return struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()


@dataclass(frozen=True)
class IdxDataset:
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.ndim != 3:
            raise ValueError(f"images must be N x rows x cols, got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and self.labels.max() >= N_CLASSES:
            raise ValueError("labels must lie in 0..9")

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def load(cls, image_path, label_path) -> IdxDataset:
        images = parse_idx(Path(image_path).read_bytes(), IMAGE_MAGIC)
        labels = parse_idx(Path(label_path).read_bytes(), LABEL_MAGIC)
        return cls(images, labels)


IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def load_split(directory, split: str) -> IdxDataset:
    """Load ``train`` or ``test`` from a directory, preferring plain over ``.gz`` files."""
    directory = Path(directory)
    paths = []
    for name in IDX_FILES[split]:
        for candidate in (directory / name, directory / f"{name}.gz"):
            if candidate.exists():
                paths.append(candidate)
                break
        else:
            raise FileNotFoundError(f"{name}[.gz] not found in {directory}")
    return IdxDataset.load(*paths)


def rotate_image(image, angle: float) -> np.ndarray:
    """Rotate counter-clockwise (as displayed) about the image center.

    Bilinear interpolation; samples falling outside the source are zero.
    """
    image = np.asarray(image, dtype=float)
    rows, cols = image.shape
    cr, cc = (rows - 1) / 2.0, (cols - 1) / 2.0
    r, c = np.meshgrid(np.arange(rows) - cr, np.arange(cols) - cc, indexing="ij")
    cos, sin = np.cos(angle), np.sin(angle)
    # inverse map: output pixel -> source location (row axis points down)
    src_r = cos * r + sin * c + cr
    src_c = -sin * r + cos * c + cc
    # grid-constant keeps edge samples that land a rounding error outside the grid
    out = ndimage.map_coordinates(image, [src_r, src_c], order=1, mode="grid-constant", cval=0.0)
    return np.clip(out, 0.0, 255.0)


@dataclass(frozen=True)
class DomainSpec:
    angle: float
    sample_indices: np.ndarray
    role: str

    def __post_init__(self):
        if self.role not in ("train", "test"):
            raise ValueError(f"role must be 'train' or 'test', got {self.role!r}")
        if not 0.0 <= self.angle < np.pi:
            raise ValueError("angle must lie in [0, pi)")


@dataclass(frozen=True)
class DomainProfile:
    n_train_domains: int = 32
    train_per_domain: int = 1875
    n_test_domains: int = 8
    test_per_domain: int | None = None

    def __post_init__(self):
        if min(self.n_train_domains, self.train_per_domain, self.n_test_domains) < 1:
            raise ValueError("domain counts and sizes must be positive")


FULL_PROFILE = DomainProfile()
DESK_PROFILE = DomainProfile(8, 256, 8, 125)


def build_domains(n_train: int, n_test: int, rng: np.random.Generator,
                  profile: DomainProfile = FULL_PROFILE):
    """Disjoint random train domains and an equal split of the test set, each with an angle."""
    need = profile.n_train_domains * profile.train_per_domain
    if need > n_train:
        raise ValueError(f"profile needs {need} training images, dataset has {n_train}")
    per_test = profile.test_per_domain or n_test // profile.n_test_domains
    if per_test * profile.n_test_domains > n_test:
        raise ValueError(f"profile needs {per_test * profile.n_test_domains} test images, "
                         f"dataset has {n_test}")
    train_idx = rng.permutation(n_train)[:need].reshape(profile.n_train_domains, -1)
    test_idx = rng.permutation(n_test)[:per_test * profile.n_test_domains].reshape(
        profile.n_test_domains, -1)
    train = [DomainSpec(float(rng.uniform(0.0, np.pi)), idx, "train") for idx in train_idx]
    test = [DomainSpec(float(rng.uniform(0.0, np.pi)), idx, "test") for idx in test_idx]
    return train, test


def domain_arrays(dataset: IdxDataset, spec: DomainSpec):
    """Rotated, flattened inputs in [0, 1] and one-hot targets for one domain."""
    images = dataset.images[spec.sample_indices]
    x = np.stack([rotate_image(im, spec.angle).ravel() for im in images]) / 255.0
    y = np.eye(N_CLASSES)[dataset.labels[spec.sample_indices]]
    return x, y


@dataclass(frozen=True)
class ClassifierConfig:
    prior_precision: float = 0.1
    noise_variance: float = 1e-4
    adaptation_count: int = 10
    lam: float = 0.0

    def base(self, n_pixels: int) -> cj.RegressionBelief:
        return cj.RegressionBelief.isotropic(N_CLASSES, n_pixels, self.prior_precision,
                                             self.noise_variance)


def predict(belief: cj.RegressionBelief, x) -> np.ndarray:
    return np.argmax(belief.predict(x), axis=1)


def accuracy(predicted, labels) -> float:
    predicted, labels = np.asarray(predicted), np.asarray(labels)
    if predicted.shape != labels.shape or predicted.size == 0:
        raise ValueError("predictions and labels must be non-empty and equally shaped")
    return float(np.mean(predicted == labels))


def adapt_and_classify(base, buffer: MemoryBuffer, x, y, cfg: ClassifierConfig = ClassifierConfig(),
                       weights: ReadoutWeights | None = None):
    """Adapt on the first ``adaptation_count`` rows and score the rest.

    Returns ``(accuracy, selection)``. Passing ``weights`` skips selection; all
    ones gives the pooled baseline.
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[1] != base.d_out:
        raise ValueError(f"targets need {base.d_out} head columns, got shape {y.shape}")
    k = cfg.adaptation_count
    if not 0 < k < len(x):
        raise ValueError("adaptation_count must leave at least one evaluation example")
    target = cj.regression_stats(x[:k], y[:k])
    _, post, selection = bam_step(base, buffer, target, SelectionConfig(lam=cfg.lam),
                                  weights=weights, append=False)
    return accuracy(predict(post, x[k:]), np.argmax(y[k:], axis=1)), selection


def run_domain_experiment(train: IdxDataset, test: IdxDataset, seed_rng: np.random.Generator,
                          profile: DomainProfile = FULL_PROFILE,
                          cfg: ClassifierConfig = ClassifierConfig()) -> list:
    """Accuracy rows for BAM and the pooled baseline on every test domain."""
    train_specs, test_specs = build_domains(len(train), len(test), seed_rng, profile)
    n_pixels = train.images.shape[1] * train.images.shape[2]
    base = cfg.base(n_pixels)
    buffer = MemoryBuffer()
    for spec in train_specs:
        buffer.append(cj.regression_stats(*domain_arrays(train, spec)))
    rows = []
    for d, spec in enumerate(test_specs):
        x, y = domain_arrays(test, spec)
        acc_bam, sel = adapt_and_classify(base, buffer, x, y, cfg)
        acc_pool, _ = adapt_and_classify(base, buffer, x, y, cfg, ReadoutWeights.all(buffer))
        rows.append(dict(domain=d, angle=spec.angle, method="bam", accuracy=acc_bam,
                         selected=len(sel.weights)))
        rows.append(dict(domain=d, angle=spec.angle, method="pooled", accuracy=acc_pool,
                         selected=len(buffer)))
    return rows
