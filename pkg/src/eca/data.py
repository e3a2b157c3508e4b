"""Synthetic generators, file loaders, preprocessing and splits."""

import gzip
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import serialization
from .errors import DegenerateSplit, EmptyAfterFilter, FormatError, MismatchError
from .seeding import derive_rng

log = logging.getLogger(__name__)

TRAIN, VALIDATION = "train", "validation"

COV_2D = (
    np.array([[1.0, 0.8], [0.8, 1.0]]),
    np.array([[1.0, -0.8], [-0.8, 1.0]]),
)
COV_3D_CLASS0 = np.diag([0.1, 10.0, 10.0])
COV_3D_CLASS1 = (np.diag([10.0, 0.1, 10.0]), np.diag([10.0, 10.0, 0.1]))

WIS1992_FEATURES = [
    "clump_thickness", "uniformity_cell_size", "uniformity_cell_shape",
    "marginal_adhesion", "single_epithelial_cell_size", "bare_nuclei",
    "bland_chromatin", "normal_nucleoli", "mitoses",
]
_WDBC_STATS = ["radius", "texture", "perimeter", "area", "smoothness", "compactness",
               "concavity", "concave_points", "symmetry", "fractal_dimension"]
WIS1995_FEATURES = [f"{s}_{agg}" for agg in ("mean", "se", "worst") for s in _WDBC_STATS]


@dataclass
class RawDataset:
    """Samples before normalization.

    ``split`` holds ``"train"``/``"validation"`` per row when the source
    defines one (MNIST).  ``component`` records which mixture component
    produced each row for synthetic data.
    """

    X: np.ndarray
    y: Optional[np.ndarray]
    feature_names: Optional[list] = None
    split: Optional[np.ndarray] = None
    component: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        n = self.X.shape[0]
        for name in ("y", "split", "component"):
            v = getattr(self, name)
            if v is not None and len(v) != n:
                raise MismatchError(f"{name} has {len(v)} entries for {n} samples")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)


@dataclass
class Dataset:
    """Prepared samples: rows of ``X`` (unit-norm unless prepared for a kernel
    model) with labels in ``0..l-1``."""

    X: np.ndarray
    y: Optional[np.ndarray]
    l: int
    split: Optional[np.ndarray] = None
    dropped: int = 0

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    def take(self, idx) -> "Dataset":
        return Dataset(
            X=self.X[idx],
            y=None if self.y is None else self.y[idx],
            l=self.l,
            split=None if self.split is None else self.split[idx],
        )

    def part(self, which: str) -> "Dataset":
        if self.split is None:
            raise ValueError("dataset has no predefined split")
        return self.take(np.flatnonzero(self.split == which))


# ----------------------------------------------------------------------------
# generators

def _gaussian(rng, cov, n):
    """Zero-mean Gaussian samples through the Cholesky factor of ``cov``."""
    chol = np.linalg.cholesky(cov)
    return rng.standard_normal((n, cov.shape[0])) @ chol.T


def gen_2d(n_per_class: int, seed: int) -> RawDataset:
    """Two zero-mean classes with correlation +0.8 and -0.8."""
    if n_per_class < 2:
        raise ValueError("n_per_class must be >= 2")
    rng = derive_rng(seed, "data")
    X = np.vstack([_gaussian(rng, cov, n_per_class) for cov in COV_2D])
    y = np.repeat([0, 1], n_per_class)
    return RawDataset(X, y, feature_names=["x0", "x1"], component=y.copy(), info={"kind": "2d", "seed": seed})


def gen_3d(n_per_class: int, seed: int, class1_mixture: bool = True) -> RawDataset:
    """Three-dimensional two-class data.

    Class 0 is flat along axis 0.  Each class-1 sample comes with equal
    probability from a component flat along axis 1 or one flat along axis 2.
    ``component`` is 0 for class 0 and 1 or 2 for the class-1 components.

    With ``class1_mixture=False`` every class-1 sample comes from the
    component flat along axis 1.  The random stream is consumed identically
    in both settings.
    """
    if n_per_class < 2:
        raise ValueError("n_per_class must be >= 2")
    rng = derive_rng(seed, "data")
    X0 = _gaussian(rng, COV_3D_CLASS0, n_per_class)
    which = rng.random(n_per_class) < 0.5
    if not class1_mixture:
        which[:] = True
    Xa = _gaussian(rng, COV_3D_CLASS1[0], n_per_class)
    Xb = _gaussian(rng, COV_3D_CLASS1[1], n_per_class)
    X1 = np.where(which[:, None], Xa, Xb)
    X = np.vstack([X0, X1])
    y = np.repeat([0, 1], n_per_class)
    component = np.concatenate([np.zeros(n_per_class, np.int64), np.where(which, 1, 2)])
    return RawDataset(X, y, feature_names=["x0", "x1", "x2"], component=component,
                      info={"kind": "3d", "seed": seed})


def gen_axis_clusters(n_per_class: int, seed: int, l: int = 2, m: int = 3,
                      major: float = 10.0, minor: float = 0.1, center: float = 0.0) -> RawDataset:
    """Gaussian clusters, cluster ``k`` centred at ``center`` along axis ``k``,
    with variance ``major`` along axis ``k`` and ``minor`` along the others.

    After normalization each cluster sits near its own axis, which makes a
    well-separated target for clustering checks.
    """
    if n_per_class < 2:
        raise ValueError("n_per_class must be >= 2")
    if not 1 <= l <= m:
        raise ValueError("need 1 <= l <= m")
    rng = derive_rng(seed, "data")
    blocks = []
    for k in range(l):
        var = np.full(m, minor)
        var[k] = major
        mean = np.zeros(m)
        mean[k] = center
        blocks.append(mean + _gaussian(rng, np.diag(var), n_per_class))
    y = np.repeat(np.arange(l), n_per_class)
    return RawDataset(np.vstack(blocks), y, feature_names=[f"x{j}" for j in range(m)],
                      component=y.copy(), info={"kind": "axis_clusters", "seed": seed})


def gen_stripes(n_per_blob: int, seed: int, blobs: int = 6, m: int = 12,
                spacing: float = 2.0, noise: float = 0.3) -> RawDataset:
    """Blobs along a line with alternating labels, a toy that no quadratic form separates.

    Blob ``b`` is centred at ``t_b = spacing * (b - (blobs - 1) / 2)``; samples
    are ``(t, 1)`` with ``t ~ N(t_b, noise^2)`` and label ``b % 2``, zero-padded
    to ``m`` coordinates.  Along the line any quadratic form changes sign at
    most twice, so a classifier built from one cannot follow more than three
    alternating intervals.
    """
    if n_per_blob < 1 or blobs < 2 or m < 2:
        raise ValueError("need n_per_blob >= 1, blobs >= 2 and m >= 2")
    rng = derive_rng(seed, "data")
    centers = spacing * (np.arange(blobs) - (blobs - 1) / 2.0)
    t = np.repeat(centers, n_per_blob) + noise * rng.standard_normal(blobs * n_per_blob)
    X = np.zeros((t.size, m))
    X[:, 0] = t
    X[:, 1] = 1.0
    y = np.repeat(np.arange(blobs) % 2, n_per_blob)
    component = np.repeat(np.arange(blobs), n_per_blob)
    return RawDataset(X, y, feature_names=[f"x{j}" for j in range(m)], component=component,
                      info={"kind": "stripes", "seed": seed})


# ----------------------------------------------------------------------------
# loaders

def _read_bytes(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _idx_header(buf, path, magic, ndim):
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise FormatError(f"{path}: truncated header ({len(buf)} bytes)")
    (got,) = struct.unpack(">i", buf[:4])
    if got != magic:
        raise FormatError(f"{path}: bad magic number {got}, expected {magic}")
    dims = struct.unpack(">" + "i" * ndim, buf[4:header])
    expected = header + int(np.prod(dims))
    if len(buf) < expected:
        raise FormatError(f"{path}: truncated payload ({len(buf)} of {expected} bytes)")
    return dims, header


def load_idx(images_path, labels_path) -> RawDataset:
    """Read an IDX image file (magic 2051) and label file (magic 2049)."""
    ibuf = _read_bytes(images_path)
    lbuf = _read_bytes(labels_path)
    (n, rows, cols), ih = _idx_header(ibuf, images_path, 2051, 3)
    (nl,), lh = _idx_header(lbuf, labels_path, 2049, 1)
    if n != nl:
        raise MismatchError(f"{images_path} holds {n} images but {labels_path} holds {nl} labels")
    X = np.frombuffer(ibuf, dtype=np.uint8, count=n * rows * cols, offset=ih).reshape(n, rows * cols)
    y = np.frombuffer(lbuf, dtype=np.uint8, count=n, offset=lh).astype(np.int64)
    return RawDataset(X.astype(float), y, info={"rows": rows, "cols": cols})


def _find(directory, stem):
    for name in (stem, stem + ".gz"):
        p = os.path.join(directory, name)
        if os.path.exists(p):
            return p
    raise FormatError(f"{directory}: no file named {stem}[.gz]")


def load_mnist(directory) -> RawDataset:
    """Official training and test files concatenated, with ``split`` set."""
    tr = load_idx(_find(directory, "train-images-idx3-ubyte"), _find(directory, "train-labels-idx1-ubyte"))
    te = load_idx(_find(directory, "t10k-images-idx3-ubyte"), _find(directory, "t10k-labels-idx1-ubyte"))
    split = np.array([TRAIN] * tr.X.shape[0] + [VALIDATION] * te.X.shape[0])
    return RawDataset(np.vstack([tr.X, te.X]), np.concatenate([tr.y, te.y]), split=split, info=dict(tr.info))


def load_uci_csv(path, schema: str) -> RawDataset:
    """Read the UCI breast-cancer layouts.

    ``wis1992``: id, nine integer features, class 2 (benign) or 4 (malignant).
    ``wis1995``: id, diagnosis B or M, thirty real features.
    Rows containing ``?`` are dropped; the count is stored in ``info["dropped"]``.
    """
    if schema == "wis1992":
        ncols, names = 11, WIS1992_FEATURES
    elif schema == "wis1995":
        ncols, names = 32, WIS1995_FEATURES
    else:
        raise ValueError(f"unknown schema {schema!r}")
    rows, labels, dropped = [], [], 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = [f.strip() for f in line.split(",")]
            if len(fields) != ncols:
                raise FormatError(f"{path}:{lineno}: expected {ncols} columns, found {len(fields)}")
            if "?" in fields:
                dropped += 1
                continue
            if schema == "wis1992":
                label_field, feats, label_col = fields[10], fields[1:10], 11
                label = {"2": 0, "4": 1}.get(label_field)
            else:
                label_field, feats, label_col = fields[1], fields[2:], 2
                label = {"B": 0, "M": 1}.get(label_field)
            if label is None:
                raise FormatError(f"{path}:{lineno}:{label_col}: unknown class value {label_field!r}")
            values = []
            for j, f in enumerate(feats):
                try:
                    values.append(float(f))
                except ValueError:
                    col = j + (2 if schema == "wis1992" else 3)
                    raise FormatError(f"{path}:{lineno}:{col}: not a number: {f!r}") from None
            rows.append(values)
            labels.append(label)
    if not rows:
        raise FormatError(f"{path}: no usable rows")
    if dropped:
        log.info("%s: dropped %d rows with missing values", path, dropped)
    return RawDataset(np.array(rows), np.array(labels), feature_names=list(names),
                      info={"schema": schema, "dropped": dropped})


# ----------------------------------------------------------------------------
# preprocessing and splitting

SCALES = ("per_feature_max", "divide_255", "none")


def preprocess(raw: RawDataset, scale: str = "none", add_aux_dim: bool = False, l: Optional[int] = None,
               normalize_rows: bool = True) -> Dataset:
    """Scale, optionally append a constant-1 coordinate, then normalize rows.

    Rows that are entirely zero before normalization are dropped and the
    number dropped is stored in the returned dataset's ``dropped`` report
    (logged as well).  ``normalize_rows=False`` keeps the scaled rows as they
    are (used by the kernel models, which do not need unit inputs).
    """
    X = np.array(raw.X, dtype=float)
    if scale == "per_feature_max":
        colmax = np.abs(X).max(axis=0)
        colmax[colmax == 0] = 1.0
        X = X / colmax
    elif scale == "divide_255":
        X = X / 255.0
    elif scale != "none":
        raise ValueError(f"unknown scale {scale!r}")
    if add_aux_dim:
        X = np.hstack([X, np.ones((X.shape[0], 1))])
    norms = np.linalg.norm(X, axis=1)
    keep = norms >= 1e-12
    if not np.any(keep):
        raise EmptyAfterFilter("every sample is the zero vector")
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        log.info("preprocess: dropped %d all-zero samples", dropped)
    X = X[keep] / norms[keep, None] if normalize_rows else X[keep]
    y = None if raw.y is None else raw.y[keep]
    if l is None:
        l = 0 if y is None else int(y.max()) + 1
    split = None if raw.split is None else raw.split[keep]
    return Dataset(X=X, y=y, l=l, split=split, dropped=dropped)


def split(dataset: Dataset, fraction: float = 0.8, seed: int = 0):
    """Seeded shuffle, then the first ``round(fraction * n)`` rows train."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    rng = derive_rng(seed, "split")
    perm = rng.permutation(dataset.n)
    n_train = int(round(fraction * dataset.n))
    train, val = dataset.take(perm[:n_train]), dataset.take(perm[n_train:])
    if dataset.y is not None:
        for k in range(dataset.l):
            for name, part in (("train", train), ("validation", val)):
                if not np.any(part.y == k):
                    raise DegenerateSplit(f"class {k} is absent from the {name} split")
    return train, val


# ----------------------------------------------------------------------------
# dataset cache files

def save_raw(raw: RawDataset, path):
    doc = {
        "format_version": serialization.FORMAT_VERSION,
        "kind": "dataset",
        "n": raw.X.shape[0],
        "m": raw.X.shape[1],
        "X": raw.X,
        "y": None if raw.y is None else raw.y.tolist(),
        "feature_names": raw.feature_names,
        "split": None if raw.split is None else raw.split.tolist(),
        "component": None if raw.component is None else raw.component.tolist(),
    }
    serialization.write_json(doc, path)


def load_raw(path) -> RawDataset:
    doc = serialization.read_json(path, kind="dataset")
    serialization.require(doc, ("n", "m", "X", "y"), str(path))
    X = serialization.matrix(doc, "X", (doc["n"], doc["m"]), str(path))
    y = None if doc["y"] is None else np.asarray(doc["y"], dtype=np.int64)
    split_ = None if doc.get("split") is None else np.asarray(doc["split"])
    comp = None if doc.get("component") is None else np.asarray(doc["component"], dtype=np.int64)
    return RawDataset(X, y, feature_names=doc.get("feature_names"), split=split_, component=comp)
