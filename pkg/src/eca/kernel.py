"""Kernel ECA: projections replaced by kernel responses to the eigenfeatures.

For a sample x the response vector is ``k_j = K(x, P_j)`` over the columns of
P.  Squared responses normalized to sum to one play the role of the collapse
probabilities, after which the Bernoulli likelihood is the plain one.  The
orthogonality penalty becomes ``xi * ||I - K(P, P)||_F^2`` on the Gram matrix
of the columns.  Inputs need not be unit vectors.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import serialization
from .core import EcaModel, mapping_probabilities
from .data import Dataset
from .errors import ConfigError, FormatError
from .objectives import (
    Gradients,
    PenaltyWeights,
    _reduction_scale,
    as_targets,
    data_term,
    mapping_backward,
    mapping_matrix,
    penalty_terms,
)
from .seeding import derive_rng
from .trainer import (
    TrainConfig,
    TrainResult,
    check_labels,
    evaluation_report,
    fit_loop,
    init_model,
    model_from_doc,
    model_to_doc,
)

KERNELS = ("polynomial", "rbf")
TINY = 1e-300


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    degree: int = 2
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ConfigError(f"unknown kernel {self.kind!r}")
        if self.degree < 1:
            raise ConfigError("polynomial degree must be >= 1")
        if not self.gamma > 0:
            raise ConfigError("kernel width must be positive")


def kernel_eval(spec: KernelSpec, x, x2) -> float:
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.shape != x2.shape:
        raise ValueError("kernel arguments must have equal lengths")
    if spec.kind == "polynomial":
        return float((1.0 + x @ x2) ** spec.degree)
    d = x - x2
    return float(np.exp(-spec.gamma * (d @ d)))


def _sq_dists(A, B):
    """Squared distances between the rows of ``A`` and the columns of ``B``."""
    D = np.sum(A * A, axis=1)[:, None] - 2.0 * (A @ B) + np.sum(B * B, axis=0)[None, :]
    return np.maximum(D, 0.0)


def kernel_matrix(spec: KernelSpec, X, P) -> np.ndarray:
    """``K[i, j] = K(X[i], P[:, j])``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P = np.asarray(P, dtype=float)
    if spec.kind == "polynomial":
        return (1.0 + X @ P) ** spec.degree
    return np.exp(-spec.gamma * _sq_dists(X, P))


def gram(spec: KernelSpec, P) -> np.ndarray:
    """Kernel Gram matrix of the columns of ``P``."""
    P = np.asarray(P, dtype=float)
    return kernel_matrix(spec, P.T, P)


def kernel_collapse(spec: KernelSpec, X, P) -> np.ndarray:
    """Squared kernel responses normalized to the simplex (rows sum to 1)."""
    K = kernel_matrix(spec, X, P)
    S = K * K
    return S / np.maximum(S.sum(axis=1, keepdims=True), TINY)


def keca_probabilities(x, model: EcaModel, spec: KernelSpec, mode="modified", hard=True):
    C = kernel_collapse(spec, x, model.P)
    e = model.ecmm()
    W = e.hard.astype(float) if hard else e.soft
    p = mapping_probabilities(C, W, mode)
    return p[0] if np.asarray(x).ndim == 1 else p


def keca_predict(x, model: EcaModel, spec: KernelSpec, mode="modified"):
    p = np.atleast_2d(keca_probabilities(x, model, spec, mode))
    pred = np.argmax(p, axis=1)
    return pred[0] if np.asarray(x).ndim == 1 else pred


# ----------------------------------------------------------------------------
# objective

def _response_backward(spec: KernelSpec, X, P, K, G_K):
    """Gradient with respect to P of ``sum(G_K * K)`` where ``K = kernel_matrix(X, P)``."""
    if spec.kind == "polynomial":
        G_A = G_K * spec.degree * (1.0 + X @ P) ** (spec.degree - 1)
        return X.T @ G_A
    G_D = -spec.gamma * K * G_K
    return -2.0 * (X.T @ G_D) + 2.0 * P * G_D.sum(axis=0)


def gram_penalty(spec: KernelSpec, P) -> float:
    E = np.eye(P.shape[1]) - gram(spec, P)
    return float(np.sum(E * E))


def gram_penalty_grad(spec: KernelSpec, P) -> np.ndarray:
    Kp = gram(spec, P)
    G = -2.0 * (np.eye(P.shape[1]) - Kp)
    if spec.kind == "polynomial":
        G_B = G * spec.degree * (1.0 + P.T @ P) ** (spec.degree - 1)
        return P @ (G_B + G_B.T)
    S = -spec.gamma * Kp * G
    S = S + S.T
    return 2.0 * (P * S.sum(axis=1) - P @ S)


def keca_loss_and_gradients(X, Y, model: EcaModel, spec: KernelSpec, w: PenaltyWeights,
                            reduction="sum"):
    """Bernoulli negative log-likelihood on normalized squared kernel responses plus penalties."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = as_targets(Y, model.l)
    P, L = model.P, model.L
    scale = _reduction_scale(X.shape[0], reduction)
    K = kernel_matrix(spec, X, P)
    S = K * K
    tot = np.maximum(S.sum(axis=1, keepdims=True), TINY)
    C = S / tot
    W = mapping_matrix(L, model.chi, model.omega, "veca")
    loss, G_C, G_W = data_term(C, W, Y, "veca")
    G_S = (G_C - np.sum(G_C * C, axis=1, keepdims=True)) / tot
    dP = scale * _response_backward(spec, X, P, K, 2.0 * K * G_S)
    pen, _, dL_pen, dW_pen = penalty_terms(P, L, W, model.omega, replace(w, xi=0.0), "veca")
    dP = dP + w.xi * gram_penalty_grad(spec, P)
    dL = mapping_backward(scale * G_W + dW_pen, L, W, model.chi, model.omega, "veca") + dL_pen
    total = scale * loss + pen + w.xi * gram_penalty(spec, P)
    return float(total), Gradients(dP, dL)


def keca_loss(X, Y, model: EcaModel, spec: KernelSpec, w: PenaltyWeights = PenaltyWeights(),
              reduction="sum") -> float:
    return keca_loss_and_gradients(X, Y, model, spec, w, reduction)[0]


# ----------------------------------------------------------------------------
# training

def sample_columns(X, m: int, seed: int) -> np.ndarray:
    """An m-column eigenfeature matrix whose columns are randomly chosen samples."""
    X = np.asarray(X, dtype=float)
    if X.shape[1] != m:
        raise ConfigError("sample initialization needs as many eigenfeatures as dimensions")
    rng = derive_rng(seed, "kernel_init")
    idx = rng.choice(X.shape[0], size=m, replace=X.shape[0] < m)
    return X[idx].T.copy()


def train_keca(dataset: Dataset, spec: KernelSpec, config: TrainConfig,
               init_from_data: bool = False, init: Optional[EcaModel] = None) -> TrainResult:
    """Fit P and L of a kernel model by mini-batch gradient descent.

    ``init_from_data`` places the initial eigenfeatures on randomly chosen
    training samples instead of an orthogonal random basis.
    """
    check_labels(dataset, dataset.l)
    m, l = dataset.m, dataset.l
    model = init if init is not None else init_model(m, l, config.seed, config.chi, config.omega)
    if init is None and init_from_data:
        P = sample_columns(dataset.X, m, config.seed)
        model = EcaModel(P, model.L, model.chi, model.omega)
    if model.m != m or model.l != l:
        raise ConfigError(f"model is {model.m}x{model.l} but data has m={m}, l={l}")
    X = dataset.X
    Y = np.zeros((dataset.n, l))
    Y[np.arange(dataset.n), dataset.y] = 1.0
    params = {"P": model.P.copy(), "L": model.L.copy()}

    def grad_fn(idx, prm):
        mdl = EcaModel(prm["P"], prm["L"], model.chi, model.omega)
        loss, g = keca_loss_and_gradients(X[idx], Y[idx], mdl, spec, config.weights, config.reduction)
        return loss, {"P": g.dP, "L": g.dL}

    history = fit_loop(params, dataset.n, grad_fn, config)
    out = EcaModel(params["P"], params["L"], model.chi, model.omega)
    residual = float(np.linalg.norm(np.eye(m) - gram(spec, out.P)))
    return TrainResult(out, history, residual)


def evaluate_keca(dataset: Dataset, model: EcaModel, spec: KernelSpec, mode="modified"):
    return evaluation_report(keca_predict(dataset.X, model, spec, mode), dataset.y, model.l)


# ----------------------------------------------------------------------------
# files

def save_keca(model: EcaModel, spec: KernelSpec, path):
    doc = model_to_doc(model)
    doc.update(kind="keca", kernel={"kind": spec.kind, "degree": spec.degree, "gamma": spec.gamma})
    serialization.write_json(doc, path)


def load_keca(path):
    """Return ``(model, kernel_spec)``."""
    doc = serialization.read_json(path, kind="keca")
    serialization.require(doc, ("kernel",), str(path))
    k = doc["kernel"]
    try:
        spec = KernelSpec(str(k["kind"]), int(k["degree"]), float(k["gamma"]))
    except (KeyError, TypeError, ValueError, ConfigError) as exc:
        raise FormatError(f"{path}: malformed kernel description ({exc})") from exc
    return model_from_doc(doc, path), spec
