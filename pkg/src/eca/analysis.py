"""Model interpretation: eigenvalue encodings, mapping statistics, the class
observable, reconstructions, projection histograms and data export."""

import csv
from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from .core import EcaModel
from .data import Dataset
from .errors import NoPureEigenfeatures, NotPure, SingularMatrix

MAX_COND = 1e12


def eigenvalue_encoding(hard) -> np.ndarray:
    """Encode each row of a binary mapping as an integer with bit k set for class k."""
    H = np.asarray(hard, dtype=np.int64)
    if H.size and not np.all((H == 0) | (H == 1)):
        raise ValueError("mapping must be binary")
    return H @ (np.int64(1) << np.arange(H.shape[1], dtype=np.int64))


def decode_eigenvalue(value: int, l: int) -> np.ndarray:
    """Inverse of :func:`eigenvalue_encoding` for a single row."""
    return (int(value) >> np.arange(l)) & 1


def binary_string(value: int, l: int) -> str:
    """Binary digits with class 0 as the rightmost bit, e.g. 1 -> '01' for l=2."""
    return format(int(value), f"0{l}b")


def is_pure(value: int) -> bool:
    value = int(value)
    return value > 0 and value & (value - 1) == 0


def pe_class_label(value: int) -> int:
    """Class owning a pure eigenfeature: the base-2 logarithm of its encoding."""
    if not is_pure(value):
        raise NotPure(f"eigenvalue {value} is not a power of two")
    return int(value).bit_length() - 1


@dataclass
class ModelStats:
    degeneracy: Dict[int, int]
    crowdedness: np.ndarray
    overlap_histogram: Dict[int, int]


def model_stats(hard, list_all_eigenvalues: bool = None) -> ModelStats:
    """Degeneracy per eigenvalue, per-class crowdedness and overlap-degree counts.

    Every possible eigenvalue is listed (zeros included) when the class count
    is at most 12, otherwise only the observed ones.
    """
    H = np.asarray(hard, dtype=np.int64)
    m, l = H.shape
    enc = eigenvalue_encoding(H)
    if list_all_eigenvalues is None:
        list_all_eigenvalues = l <= 12
    keys = range(2 ** l) if list_all_eigenvalues else sorted(set(enc.tolist()))
    degeneracy = {int(v): 0 for v in keys}
    for v in enc.tolist():
        degeneracy[int(v)] = degeneracy.get(int(v), 0) + 1
    row_sums = H.sum(axis=1)
    overlap = {k: int(np.count_nonzero(row_sums == k)) for k in range(l + 1)}
    return ModelStats(degeneracy, H.sum(axis=0), overlap)


def soft_mapping_stats(soft) -> dict:
    """Diagnostics of the relaxed mapping: its largest entry and mean distance to {0, 1}."""
    S = np.asarray(soft, dtype=float)
    dist = np.minimum(S, 1.0 - S)
    return {"max_entry": float(S.max()), "mean_distance": float(dist.mean()),
            "fraction_within_0.05": float(np.mean(dist < 0.05))}


def pure_eigenfeatures(hard) -> np.ndarray:
    """Indices of eigenfeatures that map to exactly one class."""
    return np.flatnonzero(np.asarray(hard).sum(axis=1) == 1)


def degeneracy_table(hard) -> List[tuple]:
    """Rows ``(eigenvalue, binary, pe_class or '', degeneracy)``."""
    l = np.asarray(hard).shape[1]
    stats = model_stats(hard)
    rows = []
    for v, count in stats.degeneracy.items():
        label = pe_class_label(v) if is_pure(v) else ""
        rows.append((v, binary_string(v, l), label, count))
    return rows


# ----------------------------------------------------------------------------
# the class observable

def assemble_H(P, encoding) -> np.ndarray:
    """``P diag(encoding) P^T``."""
    P = np.asarray(P, dtype=float)
    return (P * np.asarray(encoding, dtype=float)) @ P.T


def analytic_H(X, y) -> np.ndarray:
    """Closed-form observable ``X^T diag(y) X (X^T X)^-1`` from labelled samples.

    Raises SingularMatrix when ``X^T X`` has condition number above 1e12.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    G = X.T @ X
    if not np.isfinite(np.linalg.cond(G)) or np.linalg.cond(G) > MAX_COND:
        raise SingularMatrix("design matrix is rank deficient or too ill-conditioned")
    B = (X.T * y) @ X
    return np.linalg.solve(G.T, B.T).T


HALF_TOL = 1e-9


def round_half_away(v):
    """Round to the nearest integer with halves going away from zero.

    Values within 1e-9 of a half are treated as exact halves, so that
    round-off in an expectation such as ``1.4999999999999998`` still rounds up.
    """
    v = np.asarray(v, dtype=float)
    return (np.sign(v) * np.floor(np.abs(v) + 0.5 + HALF_TOL)).astype(np.int64)


def expectation_predict(x, H):
    """Round ``x^T H x`` to the nearest integer, halves away from zero."""
    X = np.asarray(x, dtype=float)
    return round_half_away(np.einsum("...i,ij,...j->...", X, H, X))


# ----------------------------------------------------------------------------
# bases, reconstructions and histograms

def basis_transform(X, P) -> np.ndarray:
    """Coefficients of each sample in the learned basis (one row per sample)."""
    return np.asarray(X, dtype=float) @ np.asarray(P, dtype=float)


def class_reconstruction(dataset: Dataset, model: EcaModel, k: int) -> np.ndarray:
    """Pure eigenfeatures of class ``k`` weighted by their mean projection on class-``k`` samples."""
    hard = model.ecmm().hard
    pes = [j for j in pure_eigenfeatures(hard) if hard[j, k] == 1]
    if not pes:
        raise NoPureEigenfeatures(f"class {k} owns no pure eigenfeature")
    Xk = dataset.X[dataset.y == k]
    weights = (Xk @ model.P[:, pes]).mean(axis=0)
    return model.P[:, pes] @ weights


def cosine_similarity(a, b) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


@dataclass
class ProjectionHistogram:
    edges: np.ndarray
    counts: np.ndarray  # l x bins

    def rows(self):
        for b in range(len(self.edges) - 1):
            yield (float(self.edges[b]), float(self.edges[b + 1]), *[int(c) for c in self.counts[:, b]])


def projection_histogram(dataset: Dataset, model: EcaModel, j: int, bins: int = 50) -> ProjectionHistogram:
    """Per-class counts of the projections onto eigenfeature ``j`` over shared bin edges."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    proj = dataset.X @ model.P[:, j]
    edges = np.histogram_bin_edges(proj, bins=bins)
    counts = np.zeros((dataset.l, bins), dtype=np.int64)
    for k in range(dataset.l):
        counts[k], _ = np.histogram(proj[dataset.y == k], bins=edges)
    return ProjectionHistogram(edges, counts)


def projection_variance(X, P) -> np.ndarray:
    """Variance of the projections on each eigenfeature (diagnostic for imbalanced data)."""
    return np.var(np.asarray(X, dtype=float) @ np.asarray(P, dtype=float), axis=0)


# ----------------------------------------------------------------------------
# export

def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def read_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def to_gray8(image) -> np.ndarray:
    """Affine min-max scaling to 0..255 (a constant image maps to 0)."""
    a = np.asarray(image, dtype=float)
    lo, hi = a.min(), a.max()
    if hi - lo <= 0:
        return np.zeros(a.shape, dtype=np.uint8)
    return np.round((a - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(path, image):
    """Binary (P5) 8-bit grayscale image."""
    g = to_gray8(image)
    if g.ndim != 2:
        raise ValueError("PGM images must be two-dimensional")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode("ascii"))
        fh.write(g.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # exactly one whitespace byte separates the header from the pixels
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)


def as_image(vector):
    """Reshape a square-length vector into a 2-D image, or ``None`` if not square."""
    v = np.asarray(vector)
    side = int(round(np.sqrt(v.size)))
    return v.reshape(side, side) if side * side == v.size else None
