"""Multi-fold networks of ECA models joined by dimension operators.

Fold ``t`` takes the previous fold's coefficient vector ``s`` (the raw input
for the first fold), applies its dimension operator, renormalizes, projects
onto its eigenfeature matrix and emits class probabilities::

    a = op_t(s);  u = a / |a|;  g_t = u @ P_t;  p_t = (g_t ** 2) @ mapping_t

The coefficients ``g_t`` feed the next fold.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import serialization
from .core import ZERO_NORM, EcaModel, mapping_probabilities, normalize
from .data import Dataset
from .errors import ArchitectureError, DimensionMismatch, FormatError, ZeroVector
from .objectives import (
    PenaltyWeights,
    _reduction_scale,
    as_targets,
    data_term,
    mapping_backward,
    mapping_matrix,
    penalty_terms,
)
from .seeding import derive_rng
from .trainer import TrainConfig, check_labels, fit_loop, model_from_doc, model_to_doc

OP_KINDS = ("identity", "resize", "quad_raise", "quad_reduce", "rect_raise", "rect_reduce", "dense")
TRAINABLE = ("quad_raise", "quad_reduce", "rect_raise", "rect_reduce", "dense")
QUADRATIC = ("quad_raise", "quad_reduce")


def weight_shape(kind, in_dim, out_dim):
    """Shape of the trainable matrix; its first column multiplies the constant 1."""
    if kind in ("quad_raise", "rect_raise"):
        return (out_dim - in_dim, in_dim + 1)
    if kind in ("quad_reduce", "rect_reduce", "dense"):
        return (out_dim, in_dim + 1)
    return None


def _square_side(n, what):
    s = math.isqrt(n)
    if s * s != n:
        raise ArchitectureError(f"resize needs square {what} dimension, got {n}")
    return s


@dataclass
class DimensionOperator:
    kind: str
    in_dim: int
    out_dim: int
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise ArchitectureError(f"unknown dimension operator {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ArchitectureError("operator dimensions must be >= 1")
        if self.kind == "identity" and self.in_dim != self.out_dim:
            raise ArchitectureError("identity operator needs in_dim == out_dim")
        if self.kind in ("quad_raise", "rect_raise") and not self.out_dim > self.in_dim:
            raise ArchitectureError(f"{self.kind} needs out_dim > in_dim")
        if self.kind in ("quad_reduce", "rect_reduce") and not self.out_dim < self.in_dim:
            raise ArchitectureError(f"{self.kind} needs out_dim < in_dim")
        if self.kind == "resize":
            _square_side(self.in_dim, "input")
            _square_side(self.out_dim, "output")
        shape = weight_shape(self.kind, self.in_dim, self.out_dim)
        if shape is None:
            self.weights = None
        elif self.weights is None:
            raise ArchitectureError(f"{self.kind} operator needs weights of shape {shape}")
        else:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != shape:
                raise ArchitectureError(f"{self.kind} weights have shape {self.weights.shape}, expected {shape}")
            if self.kind in QUADRATIC and np.any(self.weights < 0):
                raise ArchitectureError("quadratic operator weights must be non-negative")

    def copy(self):
        w = None if self.weights is None else self.weights.copy()
        return DimensionOperator(self.kind, self.in_dim, self.out_dim, w)


def resize_matrix(in_dim, out_dim):
    """0/1 matrix (out_dim x in_dim) for nearest-neighbour re-gridding of square images."""
    s, t = _square_side(in_dim, "input"), _square_side(out_dim, "output")
    src = (np.arange(t) * s) // t
    idx = (src[:, None] * s + src[None, :]).ravel()
    S = np.zeros((out_dim, in_dim))
    S[np.arange(out_dim), idx] = 1.0
    return S


def _augment(X):
    return np.hstack([np.ones((X.shape[0], 1)), X])


def _op_forward(kind, W, X, in_dim, out_dim):
    """Apply an operator to a batch; return output and a cache for the backward pass."""
    if kind == "identity":
        return X, None
    if kind == "resize":
        S = resize_matrix(in_dim, out_dim)
        return X @ S.T, S
    if kind in QUADRATIC:
        R = _augment(X * X) @ W.T
        if __debug__:
            assert np.all(R >= 0), "negative radicand in quadratic operator"
        root = np.sqrt(np.maximum(R, 0.0))
        out = np.hstack([X, root]) if kind == "quad_raise" else root
        return out, root
    pre = _augment(X) @ W.T
    act = pre if kind == "dense" else np.maximum(pre, 0.0)
    out = np.hstack([X, act]) if kind == "rect_raise" else act
    return out, pre


def _op_backward(kind, W, X, cache, G_out):
    """Return ``(G_X, G_W)`` for an operator given the gradient of its output."""
    if kind == "identity":
        return G_out, None
    if kind == "resize":
        return G_out @ cache, None
    n_in = X.shape[1]
    if kind in ("quad_raise", "rect_raise"):
        G_direct, G_new = G_out[:, :n_in], G_out[:, n_in:]
    else:
        G_direct, G_new = 0.0, G_out
    if kind in QUADRATIC:
        root = cache
        safe = root > 0
        G_R = np.where(safe, G_new / (2.0 * np.where(safe, root, 1.0)), 0.0)
        G_W = G_R.T @ _augment(X * X)
        G_X = (G_R @ W[:, 1:]) * (2.0 * X)
    else:
        pre = cache
        G_pre = G_new if kind == "dense" else G_new * (pre > 0)
        G_W = G_pre.T @ _augment(X)
        G_X = G_pre @ W[:, 1:]
    return G_X + G_direct, G_W


def apply_dim_op(op: DimensionOperator, x):
    """Apply a dimension operator to a vector or to each row of a batch."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != op.in_dim:
        raise DimensionMismatch(f"operator expects length {op.in_dim}, got {X.shape[1]}")
    out, _ = _op_forward(op.kind, op.weights, X, op.in_dim, op.out_dim)
    return out[0] if single else out


# ----------------------------------------------------------------------------
# network

@dataclass
class Fold:
    op: DimensionOperator
    eca: EcaModel


@dataclass
class EcanModel:
    folds: List[Fold]
    pi: np.ndarray = None

    def __post_init__(self):
        if not self.folds:
            raise ArchitectureError("an ECAN needs at least one fold")
        if self.pi is None:
            self.pi = np.full(len(self.folds), 1.0 / len(self.folds))
        self.pi = np.asarray(self.pi, dtype=float)
        if self.pi.shape != (len(self.folds),) or np.any(self.pi < 0) or abs(self.pi.sum() - 1.0) > 1e-9:
            raise ArchitectureError("pi must be a non-negative vector over folds summing to 1")
        validate_chain([(f.op.kind, f.op.in_dim, f.op.out_dim) for f in self.folds])
        l = self.folds[0].eca.l
        for t, f in enumerate(self.folds):
            if f.eca.m != f.op.out_dim:
                raise ArchitectureError(f"fold {t}: ECA has m={f.eca.m} but operator outputs {f.op.out_dim}")
            if f.eca.l != l:
                raise ArchitectureError(f"fold {t}: every fold must use the same number of classes")

    @property
    def in_dim(self):
        return self.folds[0].op.in_dim

    @property
    def l(self):
        return self.folds[0].eca.l


def validate_chain(spec: Sequence):
    """Check ``[(kind, in_dim, out_dim), ...]`` for dimension breaks and adjacent operators."""
    for t, (kind, in_dim, out_dim) in enumerate(spec):
        if t > 0:
            prev_kind, _, prev_out = spec[t - 1]
            if in_dim != prev_out:
                raise ArchitectureError(f"fold {t} expects input {in_dim} but fold {t - 1} emits {prev_out}")
            if kind != "identity" and prev_kind != "identity":
                raise ArchitectureError(
                    f"folds {t - 1} and {t} both use non-identity operators ({prev_kind}, {kind})")


def zero_fold_probabilities(x, L, chi=10.0, omega=np.pi / 2, mode="modified"):
    """Class probabilities with the identity basis: ``(x_hat ** 2) @ mapping``."""
    X = normalize(x)
    hard = EcaModel(np.eye(X.shape[-1]), L, chi, omega).ecmm().hard
    return mapping_probabilities(X * X, hard, mode)


def _normalize_rows(A, fold):
    nrm = np.linalg.norm(A, axis=1, keepdims=True)
    if np.any(nrm < ZERO_NORM):
        raise ZeroVector(f"fold {fold}: dimension operator produced a zero state")
    return A / nrm, nrm


@dataclass
class EcanOutput:
    coefficients: List[np.ndarray]
    probabilities: List[np.ndarray]


def ecan_forward(model: EcanModel, x_raw, mode="modified") -> EcanOutput:
    """Per-fold coefficient vectors and class probabilities (hard mappings)."""
    X = np.asarray(x_raw, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.in_dim:
        raise DimensionMismatch(f"network expects length {model.in_dim}, got {X.shape[1]}")
    coeffs, probs = [], []
    S = X
    for t, f in enumerate(model.folds):
        A, _ = _op_forward(f.op.kind, f.op.weights, S, f.op.in_dim, f.op.out_dim)
        try:
            U = normalize(A)
        except ZeroVector:
            raise ZeroVector(f"fold {t}: dimension operator produced a zero state") from None
        G = U @ f.eca.P
        coeffs.append(G[0] if single else G)
        p = mapping_probabilities(G * G, f.eca.ecmm().hard, mode)
        probs.append(p[0] if single else p)
        S = G
    return EcanOutput(coeffs, probs)


def ecan_predict(model: EcanModel, x_raw, mode="modified", fold=-1):
    return np.argmax(ecan_forward(model, x_raw, mode).probabilities[fold], axis=-1)


# ----------------------------------------------------------------------------
# loss and gradients

def _params_from_model(model: EcanModel):
    params = {}
    for t, f in enumerate(model.folds):
        params[f"P{t}"] = f.eca.P.copy()
        params[f"L{t}"] = f.eca.L.copy()
        if f.op.weights is not None:
            params[f"W{t}"] = f.op.weights.copy()
    return params


def _model_from_params(template: EcanModel, params) -> EcanModel:
    folds = []
    for t, f in enumerate(template.folds):
        op = DimensionOperator(f.op.kind, f.op.in_dim, f.op.out_dim,
                               params.get(f"W{t}") if f.op.weights is not None else None)
        folds.append(Fold(op, EcaModel(params[f"P{t}"], params[f"L{t}"], f.eca.chi, f.eca.omega)))
    return EcanModel(folds, template.pi.copy())


def ecan_loss_and_gradients(model: EcanModel, X, Y, w: PenaltyWeights = PenaltyWeights(),
                            reduction="sum", params=None):
    """pi-weighted per-fold overlap-normalized NLL plus per-fold penalties.

    Returns ``(loss, grads)`` where ``grads`` is keyed ``P{t}``, ``L{t}`` and
    ``W{t}`` (operator weights) like the training parameter dictionary.
    """
    X = np.asarray(X, dtype=float)
    Y = as_targets(Y, model.l)
    s = _reduction_scale(X.shape[0], reduction)
    if params is None:
        params = _params_from_model(model)
    caches = []
    S = X
    total = 0.0
    for t, f in enumerate(model.folds):
        P, L = params[f"P{t}"], params[f"L{t}"]
        Wop = params.get(f"W{t}")
        A, op_cache = _op_forward(f.op.kind, Wop, S, f.op.in_dim, f.op.out_dim)
        U, nrm = _normalize_rows(A, t)
        G = U @ P
        Wmap = mapping_matrix(L, f.eca.chi, f.eca.omega, "aeca")
        loss_t, G_C, G_W = data_term(G * G, Wmap, Y, "aeca")
        pen, dP_pen, dL_pen, dW_pen = penalty_terms(P, L, Wmap, f.eca.omega, w, "aeca")
        total += model.pi[t] * s * loss_t + pen
        caches.append((S, op_cache, U, nrm, G, G_C, G_W, Wmap, dP_pen, dL_pen, dW_pen))
        S = G
    grads = {}
    carry = np.zeros_like(S)
    for t in range(len(model.folds) - 1, -1, -1):
        f = model.folds[t]
        S_in, op_cache, U, nrm, G, G_C, G_W, Wmap, dP_pen, dL_pen, dW_pen = caches[t]
        P, L = params[f"P{t}"], params[f"L{t}"]
        scale = model.pi[t] * s
        dG = 2.0 * G * (scale * G_C) + carry
        grads[f"P{t}"] = U.T @ dG + dP_pen
        grads[f"L{t}"] = mapping_backward(scale * G_W + dW_pen, L, Wmap, f.eca.chi, f.eca.omega, "aeca") + dL_pen
        dU = dG @ P.T
        dA = (dU - np.sum(dU * U, axis=1, keepdims=True) * U) / nrm
        G_S, G_Wop = _op_backward(f.op.kind, params.get(f"W{t}"), S_in, op_cache, dA)
        if G_Wop is not None:
            grads[f"W{t}"] = G_Wop
        carry = G_S
    return float(total), grads


def ecan_loss(model: EcanModel, X, Y, w: PenaltyWeights = PenaltyWeights(), reduction="sum") -> float:
    return ecan_loss_and_gradients(model, X, Y, w, reduction)[0]


def ecan_fold_losses(model: EcanModel, X, Y):
    """Unweighted data term of each fold (diagnostic)."""
    X = np.asarray(X, dtype=float)
    Y = as_targets(Y, model.l)
    out, S = [], X
    for t, f in enumerate(model.folds):
        A, _ = _op_forward(f.op.kind, f.op.weights, S, f.op.in_dim, f.op.out_dim)
        U, _ = _normalize_rows(A, t)
        G = U @ f.eca.P
        Wmap = mapping_matrix(f.eca.L, f.eca.chi, f.eca.omega, "aeca")
        out.append(float(data_term(G * G, Wmap, Y, "aeca")[0]))
        S = G
    return out


# ----------------------------------------------------------------------------
# construction and training

@dataclass
class FoldSpec:
    kind: str
    in_dim: int
    out_dim: int


def parse_fold_spec(text: str) -> FoldSpec:
    """Parse ``"<kind> <in_dim> <out_dim>"``."""
    parts = text.split()
    if len(parts) != 3:
        raise ArchitectureError(f"fold entry {text!r} must read '<kind> <in_dim> <out_dim>'")
    try:
        return FoldSpec(parts[0], int(parts[1]), int(parts[2]))
    except ValueError:
        raise ArchitectureError(f"fold entry {text!r} has non-integer dimensions") from None


def init_ecan(spec: Sequence[FoldSpec], l: int, seed: int, chi=10.0, omega=np.pi / 2, pi=None) -> EcanModel:
    """Seeded initialization: orthogonal P, uniform L, operator weights per kind."""
    validate_chain([(s.kind, s.in_dim, s.out_dim) for s in spec])
    folds = []
    for t, s in enumerate(spec):
        rng = derive_rng(seed, "ecan_init", t)
        shape = weight_shape(s.kind, s.in_dim, s.out_dim)
        W = None
        if shape is not None:
            if s.kind in QUADRATIC:
                W = rng.uniform(0.0, 0.1, size=shape)
            else:
                W = rng.standard_normal(shape) / math.sqrt(shape[1])
        op = DimensionOperator(s.kind, s.in_dim, s.out_dim, W)
        Q, _ = np.linalg.qr(rng.standard_normal((s.out_dim, s.out_dim)))
        L = rng.uniform(-0.5, 0.5, size=(s.out_dim, l))
        folds.append(Fold(op, EcaModel(Q, L, chi, omega)))
    return EcanModel(folds, pi)


@dataclass
class EcanTrainResult:
    model: EcanModel
    loss_history: List[float]
    fold_orthogonality: List[float] = field(default_factory=list)


def train_ecan(dataset: Dataset, spec: Sequence[FoldSpec], config: TrainConfig, pi=None,
               epoch_callback=None) -> EcanTrainResult:
    """Train every fold's P and L and all operator weights jointly."""
    check_labels(dataset, dataset.l)
    if spec[0].in_dim != dataset.m:
        raise ArchitectureError(f"first fold expects {spec[0].in_dim} inputs, data has {dataset.m}")
    model = init_ecan(spec, dataset.l, config.seed, config.chi, config.omega, pi)
    params = _params_from_model(model)
    Y = as_targets(dataset.y, dataset.l)
    quad_keys = [f"W{t}" for t, f in enumerate(model.folds) if f.op.kind in QUADRATIC]

    def grad_fn(idx, prm):
        return ecan_loss_and_gradients(model, dataset.X[idx], Y[idx], config.weights, config.reduction, prm)

    def project(prm):
        for k in quad_keys:
            np.maximum(prm[k], 0.0, out=prm[k])

    cb = None
    if epoch_callback is not None:
        def cb(epoch, loss, prm):
            epoch_callback(epoch, loss, _model_from_params(model, prm))

    history = fit_loop(params, dataset.n, grad_fn, config, project=project, epoch_callback=cb)
    trained = _model_from_params(model, params)
    orth = [float(np.linalg.norm(np.eye(f.eca.m) - f.eca.P.T @ f.eca.P)) for f in trained.folds]
    return EcanTrainResult(trained, history, orth)


def evaluate_folds(dataset: Dataset, model: EcanModel, mode="modified", batch=4096):
    """Accuracy of every fold's prediction."""
    correct = np.zeros(len(model.folds))
    for start in range(0, dataset.n, batch):
        out = ecan_forward(model, dataset.X[start:start + batch], mode)
        y = dataset.y[start:start + batch]
        for t, p in enumerate(out.probabilities):
            correct[t] += np.count_nonzero(np.argmax(p, axis=1) == y)
    return (correct / dataset.n).tolist()


# ----------------------------------------------------------------------------
# files

def save_ecan(model: EcanModel, path):
    folds = []
    for f in model.folds:
        folds.append({
            "op": {"kind": f.op.kind, "in_dim": f.op.in_dim, "out_dim": f.op.out_dim, "weights": f.op.weights},
            "eca": {k: v for k, v in model_to_doc(f.eca).items() if k not in ("format_version", "kind")},
        })
    serialization.write_json({"format_version": serialization.FORMAT_VERSION, "kind": "ecan",
                              "pi": model.pi, "folds": folds}, path)


def load_ecan(path) -> EcanModel:
    doc = serialization.read_json(path, kind="ecan")
    serialization.require(doc, ("pi", "folds"), str(path))
    folds = []
    try:
        for entry in doc["folds"]:
            op = entry["op"]
            W = None if op.get("weights") is None else np.asarray(op["weights"], dtype=float)
            folds.append(Fold(DimensionOperator(op["kind"], int(op["in_dim"]), int(op["out_dim"]), W),
                              model_from_doc(entry["eca"], path)))
        return EcanModel(folds, np.asarray(doc["pi"], dtype=float))
    except (KeyError, TypeError, ArchitectureError) as exc:
        raise FormatError(f"{path}: malformed network description ({exc})") from exc
