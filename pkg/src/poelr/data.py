"""Datasets: lattice blobs, linear regression, and MNIST in IDX format.

Image-like inputs live in ``[0, 1]`` so that attack budgets such as ``1/255``
mean the same thing as on 8-bit images. The quadratic oracle is the one
dataset allowed outside that box.
"""
import csv
import gzip
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FormatError, InvalidInput
from .models import Batch
from .numcore import make_rng

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    seed: int = 0
    targets: np.ndarray = field(default=None, repr=False)
    unit_box: bool = True

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2 or len(self.inputs) < 1:
            raise InvalidInput("a dataset needs at least one 2-D input row")
        if not np.all(np.isfinite(self.inputs)):
            raise InvalidInput("inputs must be finite")
        if self.unit_box and (self.inputs.min() < 0.0 or self.inputs.max() > 1.0):
            raise InvalidInput("inputs must lie in [0, 1]")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (len(self.inputs),):
            raise InvalidInput("one label per input row is required")
        if np.any(self.labels < 0):
            raise InvalidInput("labels must be non-negative class ids")
        if self.targets is not None:
            self.targets = np.asarray(self.targets, dtype=np.float64)
            if self.targets.ndim == 1:
                self.targets = self.targets[:, None]
            if len(self.targets) != len(self.inputs):
                raise InvalidInput("one target row per input row is required")

    def __len__(self):
        return len(self.inputs)

    @property
    def dim(self):
        return self.inputs.shape[1]

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1

    def batch(self, idx=None):
        """A :class:`Batch` of the given rows; real targets win over labels."""
        if idx is None:
            idx = slice(None)
        y = self.targets if self.targets is not None else self.labels
        return Batch(self.inputs[idx], y[idx])

    def subset(self, start, stop):
        t = None if self.targets is None else self.targets[start:stop]
        return Dataset(self.inputs[start:stop], self.labels[start:stop],
                       name=self.name, seed=self.seed, targets=t, unit_box=self.unit_box)


def lattice_centers(classes, dim):
    """Class centers on the regular grid ``{(i + 1/2)/k}^dim``.

    ``k = ceil(classes ** (1/dim))``; class ``c`` sits at the grid point whose
    base-``k`` digits (least significant first, one per axis) spell ``c``.
    Neighbouring centers are ``1/k`` apart.
    """
    k = max(2, math.ceil(classes ** (1.0 / dim) - 1e-9))
    centers = np.empty((classes, dim))
    for c in range(classes):
        digits, r = [], c
        for _ in range(dim):
            digits.append(r % k)
            r //= k
        centers[c] = (np.array(digits) + 0.5) / k
    return centers


def gen_blobs(n, dim, classes, spread, seed):
    """Gaussian blobs around lattice centers, clipped to the unit cube.

    Labels cycle ``0, 1, ..., classes-1`` before a seeded shuffle, so class
    counts differ by at most one.
    """
    if classes < 2 or dim < 1 or n < classes:
        raise InvalidInput("need dim >= 1, classes >= 2 and n >= classes")
    if not spread >= 0:
        raise InvalidInput("spread must be non-negative")
    rng = make_rng(seed, "blobs")
    labels = rng.permutation(np.arange(n) % classes)
    centers = lattice_centers(classes, dim)
    x = centers[labels] + spread * rng.standard_normal((n, dim))
    return Dataset(np.clip(x, 0.0, 1.0), labels, name="blobs", seed=seed)


def gen_regression(n, dim, out_dim=1, noise=0.0, seed=0):
    """Uniform inputs with targets from a random affine map plus Gaussian noise."""
    if n < 1 or dim < 1 or out_dim < 1 or noise < 0:
        raise InvalidInput("invalid regression sizes")
    rng = make_rng(seed, "regression")
    x = rng.uniform(0.0, 1.0, size=(n, dim))
    w = rng.standard_normal((dim, out_dim))
    b = rng.standard_normal(out_dim)
    t = x @ w + b + noise * rng.standard_normal((n, out_dim))
    return Dataset(x, np.zeros(n, dtype=np.int64), name="regression", seed=seed, targets=t)


def gen_quadratic(n, dim, L, cond=10.0, noise=0.1, seed=0):
    """Least-squares data whose bias-free identity ``mse`` loss has smoothness ``L``.

    Inputs are ``sqrt(n) * Q diag(sqrt(lam / 2)) V^T`` with ``Q`` having
    orthonormal columns and ``V`` orthogonal, so ``(2/n) X^T X`` has exactly
    the eigenvalues ``lam``, spaced geometrically from ``L / cond`` to ``L``.
    Pair it with ``ModelSpec((dim, 1), "identity", "mse", bias=False)``.
    """
    if n < dim or dim < 1 or not (L > 0 and cond >= 1 and noise >= 0):
        raise InvalidInput("need n >= dim >= 1, L > 0, cond >= 1, noise >= 0")
    rng = make_rng(seed, "quadratic")
    q, _ = np.linalg.qr(rng.standard_normal((n, dim)))
    v, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    lam = L * cond ** (np.linspace(-1.0, 0.0, dim) if dim > 1 else np.zeros(1))
    x = math.sqrt(n) * (q * np.sqrt(lam / 2.0)) @ v.T
    w = rng.standard_normal(dim)
    t = x @ w + noise * rng.standard_normal(n)
    return Dataset(x, np.zeros(n, dtype=np.int64), name="quadratic", seed=seed, targets=t, unit_box=False)


def _read_header(buf, path, magic, ndims):
    need = 4 * (1 + ndims)
    if len(buf) < need:
        raise FormatError(f"{path}: truncated header", offset=len(buf))
    got = struct.unpack_from(">I", buf, 0)[0]
    if got != magic:
        raise FormatError(f"{path}: magic number {got}, expected {magic}", offset=0)
    return struct.unpack_from(">" + "I" * ndims, buf, 4)


def load_idx(images_path, labels_path, limit=None, offset=0):
    """Read an IDX image/label file pair into a :class:`Dataset`.

    Returns records ``offset .. offset+limit``; pixel bytes are divided by 255.
    """
    imgs = _read_bytes(images_path)
    labs = _read_bytes(labels_path)
    count, rows, cols = _read_header(imgs, images_path, IDX_IMAGES_MAGIC, 3)
    (lcount,) = _read_header(labs, labels_path, IDX_LABELS_MAGIC, 1)
    if count != lcount:
        raise FormatError(f"{labels_path}: {lcount} labels for {count} images", offset=4)
    pix = rows * cols
    if len(imgs) < 16 + count * pix:
        raise FormatError(f"{images_path}: truncated pixel block", offset=len(imgs))
    if len(labs) < 8 + count:
        raise FormatError(f"{labels_path}: truncated label block", offset=len(labs))
    stop = count if limit is None else min(count, offset + int(limit))
    if not 0 <= offset < stop:
        raise InvalidInput(f"no records in [{offset}, {stop})")
    block = np.frombuffer(imgs, dtype=np.uint8, count=(stop - offset) * pix, offset=16 + offset * pix)
    y = np.frombuffer(labs, dtype=np.uint8, count=stop - offset, offset=8 + offset)
    x = block.reshape(stop - offset, pix).astype(np.float64) / 255.0
    return Dataset(x, y.astype(np.int64), name="mnist", seed=0)


def _read_bytes(path):
    path = os.fspath(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as f:
        return f.read()


def write_idx(images, labels, images_path, labels_path, shape=None):
    """Write ``[0, 1]`` inputs (or raw uint8) and labels as an IDX pair."""
    x = np.asarray(images)
    if x.dtype != np.uint8:
        x = np.rint(np.asarray(x, dtype=np.float64) * 255.0).astype(np.uint8)
    n = len(x)
    if shape is None:
        side = int(round(math.sqrt(x[0].size)))
        shape = (side, side) if side * side == x[0].size else (1, x[0].size)
    y = np.asarray(labels).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, *shape))
        f.write(x.reshape(n, -1).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(y.tobytes())


def export_mnist_idx(out_dir, seed=0):
    """Write mlxtend's bundled 5000-digit MNIST sample as IDX files.

    The bundled sample is sorted by class, so rows are shuffled with a seeded
    permutation first; any prefix is then a class-mixed subset. Returns the
    ``(images_path, labels_path)`` pair. Existing files are left untouched.
    """
    os.makedirs(out_dir, exist_ok=True)
    images_path = os.path.join(out_dir, "mnist5k-images-idx3-ubyte")
    labels_path = os.path.join(out_dir, "mnist5k-labels-idx1-ubyte")
    if os.path.exists(images_path) and os.path.exists(labels_path):
        return images_path, labels_path
    from mlxtend.data import mnist_data

    x, y = mnist_data()
    order = make_rng(seed, "mnist-order").permutation(len(y))
    write_idx(x[order].astype(np.uint8), y[order], images_path + ".tmp", labels_path + ".tmp", shape=(28, 28))
    os.replace(images_path + ".tmp", images_path)
    os.replace(labels_path + ".tmp", labels_path)
    return images_path, labels_path


def batch_indices(n, batch_size, epoch_seed):
    """One epoch of index arrays: a seeded permutation cut into chunks."""
    if not 1 <= batch_size <= n:
        raise InvalidInput(f"batch_size must lie in [1, {n}]")
    perm = make_rng(epoch_seed, "epoch").permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def batches(ds, batch_size, epoch_seed):
    return [ds.batch(idx) for idx in batch_indices(len(ds), batch_size, epoch_seed)]


def to_csv(ds, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["label"] + [f"x{i}" for i in range(ds.dim)])
        for label, row in zip(ds.labels, ds.inputs):
            w.writerow([int(label)] + [repr(float(v)) for v in row])
