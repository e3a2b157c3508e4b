"""Probability engine: projections, collapse probabilities and class probabilities.

Every function here is pure.  Functions that take a sample ``x`` also accept
a batch given as an ``(n, m)`` array, in which case one row of output is
produced per sample.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ZeroVector

LOG_EPS = 1e-12
ZERO_NORM = 1e-12


def clamped_log(p):
    """Natural log with the argument clamped to ``[1e-12, 1]``."""
    return np.log(np.clip(p, LOG_EPS, 1.0))


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def normalize(x_raw):
    """Scale a vector (or each row of a matrix) to unit Euclidean length.

    Raises ZeroVector when a norm is below 1e-12.
    """
    x = np.asarray(x_raw, dtype=float)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ValueError("normalize needs a vector of length >= 1")
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms < ZERO_NORM):
        raise ZeroVector("cannot normalize a vector with norm < 1e-12")
    return x / norms


@dataclass(frozen=True)
class Ecmm:
    """Eigenfeature-to-class mapping in soft, hard and overlap form."""

    soft: np.ndarray
    hard: np.ndarray
    overlap: np.ndarray


@dataclass
class EcaModel:
    """Eigenfeature matrix ``P`` (m x m) and raw mapping parameters ``L`` (m x l)."""

    P: np.ndarray
    L: np.ndarray
    chi: float = 10.0
    omega: float = np.pi / 2

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.L = np.asarray(self.L, dtype=float)
        if self.P.ndim != 2 or self.P.shape[0] != self.P.shape[1]:
            raise ValueError(f"P must be square, got shape {self.P.shape}")
        if self.L.ndim != 2 or self.L.shape[0] != self.P.shape[0]:
            raise ValueError(f"L must be {self.P.shape[0]} x l, got shape {self.L.shape}")
        if not (self.chi > 0 and self.omega > 0):
            raise ValueError("chi and omega must be positive")

    @property
    def m(self) -> int:
        return self.P.shape[0]

    @property
    def l(self) -> int:
        return self.L.shape[1]

    def ecmm(self) -> Ecmm:
        return ecmm(self.L, self.chi, self.omega)

    def copy(self) -> "EcaModel":
        return EcaModel(self.P.copy(), self.L.copy(), self.chi, self.omega)


def ecmm_soft(L, chi, omega):
    """Relaxed mapping ``sigmoid(chi * sin(omega * L))``, entries in (0, 1)."""
    return sigmoid(chi * np.sin(omega * np.asarray(L, dtype=float)))


def ecmm_hard(soft):
    """Round a soft mapping at 0.5; an entry of exactly 0.5 rounds to 0."""
    return (np.asarray(soft) > 0.5).astype(np.int64)


def ecmm(L, chi, omega) -> Ecmm:
    soft = ecmm_soft(L, chi, omega)
    hard = ecmm_hard(soft)
    return Ecmm(soft=soft, hard=hard, overlap=hard.sum(axis=1))


def collapse_probabilities(x, P):
    """Squared projections ``(x^T P)**2`` of unit sample(s) onto each column of P."""
    g = np.asarray(x, dtype=float) @ np.asarray(P, dtype=float)
    return g * g


def overlap_divisor(W):
    """Per-row divisor used by modified probabilities.

    For a binary mapping this is the number of classes an eigenfeature maps to,
    with unmapped rows left at 1 so they keep contributing zero.  For a soft
    mapping the row sum is used once it exceeds 1.
    """
    return np.maximum(np.asarray(W, dtype=float).sum(axis=1), 1.0)


def mapping_probabilities(collapse, W, mode="modified"):
    """Combine collapse probabilities with a mapping matrix ``W`` (m x l)."""
    W = np.asarray(W, dtype=float)
    if mode == "unmodified":
        return collapse @ W
    if mode == "modified":
        return collapse @ (W / overlap_divisor(W)[:, None])
    raise ValueError(f"unknown probability mode {mode!r}")


def class_probabilities(x, model: EcaModel, mode="modified", hard=True):
    """Independent per-class probabilities for unit sample(s).

    ``hard`` selects the rounded mapping (used for inference) instead of the
    relaxed one (used during training).
    """
    mapping = model.ecmm()
    W = mapping.hard if hard else mapping.soft
    return mapping_probabilities(collapse_probabilities(x, model.P), W, mode)


def mutual_exclusive_probability(p, c):
    """Probability that class ``c`` fires and every other class does not."""
    p = np.asarray(p, dtype=float)
    others = np.delete(p, c, axis=-1)
    return p[..., c] * np.prod(1.0 - others, axis=-1)


def predict(x, model: EcaModel, mode="modified"):
    """Argmax of class probabilities, ties going to the lowest class index."""
    return np.argmax(class_probabilities(x, model, mode), axis=-1)


def stacked_pmf(p):
    """Stack ``p`` and ``1 - p`` into per-class Bernoulli PMFs (l x 2)."""
    p = np.asarray(p, dtype=float)
    return np.stack([p, 1.0 - p], axis=-1)


@dataclass(frozen=True)
class ProbabilityReport:
    per_class: np.ndarray
    stacked: np.ndarray
    collapse: np.ndarray


def probability_report(x, model: EcaModel, mode="modified") -> ProbabilityReport:
    collapse = collapse_probabilities(x, model.P)
    per_class = mapping_probabilities(collapse, model.ecmm().hard, mode)
    return ProbabilityReport(per_class=per_class, stacked=stacked_pmf(per_class), collapse=collapse)


def estimate_probabilities_by_sampling(p, Q, seed):
    """Finite-shot estimate ``r / Q`` with ``r ~ Binomial(Q, p)``."""
    if Q < 1:
        raise ValueError("shot count Q must be >= 1")
    rng = np.random.default_rng(seed)
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    return rng.binomial(int(Q), p) / Q
