"""Training objectives, penalty terms and their gradients.

All objectives share one forward/backward skeleton::

    Z = X @ P          projections
    C = Z * Z          collapse probabilities
    W = map(L)         soft mapping (sigmoid-on-sinusoid, or row softmax)
    p = C @ W          per-class probabilities

Gradients are obtained by the chain rule on that skeleton.  A central
finite-difference oracle is provided for checking them.
"""

from dataclasses import dataclass

import numpy as np

from .core import LOG_EPS, EcaModel, ecmm_soft, overlap_divisor

OBJECTIVES = ("veca", "aeca", "mse", "categorical")
SPARSITY_KINDS = ("none", "l1", "l2")


@dataclass(frozen=True)
class PenaltyWeights:
    xi: float = 1.0
    gamma: float = 0.1
    sparsity: float = 0.0
    sparsity_kind: str = "none"

    def __post_init__(self):
        if min(self.xi, self.gamma, self.sparsity) < 0:
            raise ValueError("penalty weights must be non-negative")
        if self.sparsity_kind not in SPARSITY_KINDS:
            raise ValueError(f"unknown sparsity kind {self.sparsity_kind!r}")


@dataclass
class Gradients:
    dP: np.ndarray
    dL: np.ndarray


def one_hot(labels, l):
    labels = np.asarray(labels, dtype=np.int64)
    Y = np.zeros((labels.shape[0], l))
    Y[np.arange(labels.shape[0]), labels] = 1.0
    return Y


def as_targets(Y, l):
    """Accept either integer labels or a one-hot matrix."""
    Y = np.asarray(Y)
    if Y.ndim == 1:
        return one_hot(Y, l)
    return Y.astype(float)


def _reduction_scale(n, reduction):
    if reduction == "sum":
        return 1.0
    if reduction == "mean":
        return 1.0 / n
    raise ValueError(f"unknown reduction {reduction!r}")


# ----------------------------------------------------------------------------
# penalties

def orthogonality_penalty(P):
    """Squared Frobenius distance of ``P^T P`` from the identity."""
    R = np.eye(P.shape[1]) - P.T @ P
    return float(np.sum(R * R))


def orthogonality_penalty_grad(P):
    return -4.0 * P @ (np.eye(P.shape[1]) - P.T @ P)


def binarity_penalty(L, omega):
    """``||1 + cos(2 omega L)||_F^2``, zero exactly where ``sin(omega L) = +-1``."""
    B = 1.0 + np.cos(2.0 * omega * np.asarray(L, dtype=float))
    return float(np.sum(B * B))


def binarity_penalty_grad(L, omega):
    a = 2.0 * omega * L
    return -4.0 * omega * (1.0 + np.cos(a)) * np.sin(a)


def sparsity_penalty(Ldot, kind):
    if kind == "none":
        return 0.0
    if kind == "l1":
        return float(np.mean(Ldot))
    if kind == "l2":
        return float(np.sum(Ldot * Ldot))
    raise ValueError(f"unknown sparsity kind {kind!r}")


def sparsity_penalty_grad(Ldot, kind):
    if kind == "none":
        return np.zeros_like(Ldot)
    if kind == "l1":
        return np.full_like(Ldot, 1.0 / Ldot.size)
    return 2.0 * Ldot


# ----------------------------------------------------------------------------
# mapping matrices and their backward passes

def soft_mapping_derivative(L, chi, omega):
    """Elementwise ``d Ldot / d L = chi * omega * cos(omega L) * Ldot * (1 - Ldot)``."""
    Ldot = ecmm_soft(L, chi, omega)
    return chi * omega * np.cos(omega * L) * Ldot * (1.0 - Ldot)


def row_softmax(L):
    Z = L - L.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def mapping_matrix(L, chi, omega, kind):
    if kind == "categorical":
        return row_softmax(L)
    return ecmm_soft(L, chi, omega)


def mapping_backward(G_W, L, W, chi, omega, kind):
    """Map a gradient with respect to the mapping matrix back onto ``L``."""
    if kind == "categorical":
        return W * (G_W - np.sum(G_W * W, axis=1, keepdims=True))
    return G_W * chi * omega * np.cos(omega * L) * W * (1.0 - W)


def modified_backward(G_V, W):
    """Backward pass of ``V = W / max(rowsum(W), 1)``."""
    d = overlap_divisor(W)
    G_W = G_V / d[:, None]
    active = W.sum(axis=1) > 1.0
    if np.any(active):
        corr = np.sum(G_V * W, axis=1) / (d * d)
        G_W[active] -= corr[active, None]
    return G_W


def _log_grad(p):
    """Derivative of ``log(clip(p, eps, 1))`` with respect to ``p``."""
    inside = (p > LOG_EPS) & (p < 1.0)
    return np.where(inside, 1.0 / np.clip(p, LOG_EPS, 1.0), 0.0)


def _clog(p):
    return np.log(np.clip(p, LOG_EPS, 1.0))


# ----------------------------------------------------------------------------
# data terms on collapse probabilities

def data_term(C, W, Y, kind):
    """Return ``(loss, G_C, G_W)`` for an objective's data term, summed over rows."""
    if kind == "veca":
        p = C @ W
        q = C @ (1.0 - W)
        loss = -np.sum(Y * _clog(p) + (1.0 - Y) * _clog(q))
        G_p = -Y * _log_grad(p)
        G_q = -(1.0 - Y) * _log_grad(q)
        G_C = G_p @ W.T + G_q @ (1.0 - W).T
        G_W = C.T @ (G_p - G_q)
        return loss, G_C, G_W
    if kind == "aeca":
        V = W / overlap_divisor(W)[:, None]
        p = C @ V
        loss = -np.sum(Y * _clog(p))
        G_p = -Y * _log_grad(p)
        return loss, G_p @ V.T, modified_backward(C.T @ G_p, W)
    if kind == "mse":
        p = C @ W
        R = Y - p
        G_p = -2.0 * R
        return np.sum(R * R), G_p @ W.T, C.T @ G_p
    if kind == "categorical":
        p = C @ W
        loss = -np.sum(Y * _clog(p))
        G_p = -Y * _log_grad(p)
        return loss, G_p @ W.T, C.T @ G_p
    raise ValueError(f"unknown objective {kind!r}")


def penalty_terms(P, L, W, omega, w: PenaltyWeights, kind):
    """Return ``(value, dP, dL_direct, dW)`` of the weighted penalties."""
    value = w.xi * orthogonality_penalty(P)
    dP = w.xi * orthogonality_penalty_grad(P)
    dL = np.zeros_like(L)
    if kind != "categorical" and w.gamma > 0:
        value += w.gamma * binarity_penalty(L, omega)
        dL = w.gamma * binarity_penalty_grad(L, omega)
    dW = np.zeros_like(W)
    if w.sparsity > 0 and w.sparsity_kind != "none":
        value += w.sparsity * sparsity_penalty(W, w.sparsity_kind)
        dW = w.sparsity * sparsity_penalty_grad(W, w.sparsity_kind)
    return value, dP, dL, dW


def loss_and_gradients(X, Y, model: EcaModel, w: PenaltyWeights, kind="veca", reduction="sum"):
    """Loss of the selected objective and its gradients with respect to P and L.

    ``reduction`` chooses between summing the data term over the batch (the
    textbook form) and averaging it, which keeps the balance between data
    and penalties independent of batch size.
    """
    X = np.asarray(X, dtype=float)
    Y = as_targets(Y, model.l)
    if X.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    s = _reduction_scale(X.shape[0], reduction)
    P, L = model.P, model.L
    W = mapping_matrix(L, model.chi, model.omega, kind)
    Z = X @ P
    C = Z * Z
    loss, G_C, G_W = data_term(C, W, Y, kind)
    pen, dP_pen, dL_pen, dW_pen = penalty_terms(P, L, W, model.omega, w, kind)
    dP = X.T @ (2.0 * Z * (s * G_C)) + dP_pen
    dL = mapping_backward(s * G_W + dW_pen, L, W, model.chi, model.omega, kind) + dL_pen
    return float(s * loss + pen), Gradients(dP=dP, dL=dL)


def objective_loss(X, Y, model, w, kind="veca", reduction="sum"):
    X = np.asarray(X, dtype=float)
    Y = as_targets(Y, model.l)
    s = _reduction_scale(X.shape[0], reduction)
    W = mapping_matrix(model.L, model.chi, model.omega, kind)
    Z = X @ model.P
    C = Z * Z
    p_loss, _, _ = data_term(C, W, Y, kind)
    pen, _, _, _ = penalty_terms(model.P, model.L, W, model.omega, w, kind)
    return float(s * p_loss + pen)


def veca_loss(X, Y, model, w=PenaltyWeights(), reduction="sum"):
    return objective_loss(X, Y, model, w, "veca", reduction)


def aeca_loss(X, Y, model, w=PenaltyWeights(), reduction="sum"):
    return objective_loss(X, Y, model, w, "aeca", reduction)


def mse_loss(X, Y, model, w=PenaltyWeights(), reduction="sum"):
    return objective_loss(X, Y, model, w, "mse", reduction)


def categorical_loss(X, Y, model, w=PenaltyWeights(), reduction="sum"):
    return objective_loss(X, Y, model, w, "categorical", reduction)


def analytic_gradients(X, Y, model, w, objective_kind="veca", reduction="sum") -> Gradients:
    return loss_and_gradients(X, Y, model, w, objective_kind, reduction)[1]


# ----------------------------------------------------------------------------
# finite differences

def central_difference(f, theta, h=1e-5):
    """Central-difference gradient of scalar ``f`` at array ``theta``."""
    if not (0 < h <= 1e-2):
        raise ValueError("step h must lie in (0, 1e-2]")
    theta = np.array(theta, dtype=float)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(theta)
        flat[i] = old - h
        fm = f(theta)
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def finite_difference_gradients(X, Y, model, w, objective_kind="veca", h=1e-5, reduction="sum") -> Gradients:
    def f_P(P):
        return objective_loss(X, Y, EcaModel(P, model.L, model.chi, model.omega), w, objective_kind, reduction)

    def f_L(L):
        return objective_loss(X, Y, EcaModel(model.P, L, model.chi, model.omega), w, objective_kind, reduction)

    return Gradients(dP=central_difference(f_P, model.P, h), dL=central_difference(f_L, model.L, h))


def max_relative_error(analytic, numeric, floor=1e-8):
    """Largest elementwise ``|a - n| / max(|a|, |n|)`` over entries above ``floor``."""
    a = np.asarray(analytic, dtype=float).ravel()
    n = np.asarray(numeric, dtype=float).ravel()
    denom = np.maximum(np.abs(a), np.abs(n))
    keep = denom > floor
    if not np.any(keep):
        return float(np.max(np.abs(a - n), initial=0.0))
    return float(np.max(np.abs(a - n)[keep] / denom[keep]))
