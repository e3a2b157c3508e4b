"""Generative ECA: a normal model per (eigenfeature, class) over projections.

The log-likelihood of a labelled sample ``(x, k)`` is::

    sum_j  mapping[j, k] * log N(x . P_j ; mu[j, k], sigma[j, k])  +  log phi[k]

Training maximizes it (with the orthogonality and binarity penalties) over
P, L, mu and sigma; phi has a closed form.  Standard deviations are kept
above a floor through ``sigma = floor + exp(s)``.
"""

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import serialization
from .core import EcaModel, normalize
from .data import Dataset
from .errors import ConfigError, NoMappedEigenfeatures
from .objectives import (
    PenaltyWeights,
    mapping_backward,
    mapping_matrix,
    penalty_terms,
)
from .seeding import derive_rng
from .trainer import TrainConfig, check_labels, fit_loop, init_model, model_from_doc, model_to_doc

SIGMA_FLOOR = 1e-4
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class GecaModel:
    P: np.ndarray
    L: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    phi: np.ndarray
    chi: float = 10.0
    omega: float = np.pi / 2

    def __post_init__(self):
        for name in ("P", "L", "mu", "sigma", "phi"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        m, l = self.L.shape
        if self.P.shape != (m, m) or self.mu.shape != (m, l) or self.sigma.shape != (m, l):
            raise ValueError("GECA parameter shapes are inconsistent")
        if self.phi.shape != (l,):
            raise ValueError("phi must have one entry per class")
        if np.any(self.sigma < SIGMA_FLOOR):
            raise ValueError(f"sigma entries must be >= {SIGMA_FLOOR}")

    @property
    def m(self):
        return self.P.shape[0]

    @property
    def l(self):
        return self.L.shape[1]

    @property
    def eca(self) -> EcaModel:
        return EcaModel(self.P, self.L, self.chi, self.omega)

    def hard(self):
        return self.eca.ecmm().hard


def log_normal(z, mu, sigma):
    d = (z - mu) / sigma
    return -0.5 * d * d - np.log(sigma) - HALF_LOG_2PI


def fit_phi(labels, l: Optional[int] = None) -> np.ndarray:
    """Empirical class frequencies."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("labels must be non-empty")
    counts = np.bincount(labels, minlength=l or 0)
    return counts / counts.sum()


def _class_scores(Z, W, mu, sigma):
    """``scores[i, k] = sum_j W[j, k] log N(Z[i, j]; mu[j, k], sigma[j, k])`` (n x l)."""
    out = np.empty((Z.shape[0], W.shape[1]))
    for k in range(W.shape[1]):
        out[:, k] = log_normal(Z, mu[:, k], sigma[:, k]) @ W[:, k]
    return out


def weighted_loglik(X, R, P, W, mu, sigma, phi):
    """``sum_i sum_k R[i, k] (class score + log phi[k])`` for a weight matrix ``R``."""
    Z = np.asarray(X, dtype=float) @ P
    total = 0.0
    with np.errstate(divide="ignore"):
        logphi = np.log(phi)
    for k in range(W.shape[1]):
        rows = R[:, k] > 0
        if not np.any(rows):
            continue
        r = R[rows, k]
        T = log_normal(Z[rows], mu[:, k], sigma[:, k])
        total += float(r @ (T @ W[:, k])) + float(r.sum() * logphi[k])
    return total


def geca_loglik(dataset: Dataset, model: GecaModel, soft: bool = False) -> float:
    """Log-likelihood of a labelled dataset (rounded mapping unless ``soft``)."""
    W = model.eca.ecmm().soft if soft else model.hard().astype(float)
    R = np.zeros((dataset.n, model.l))
    R[np.arange(dataset.n), dataset.y] = 1.0
    return weighted_loglik(dataset.X, R, model.P, W, model.mu, model.sigma, model.phi)


def geca_scores(x, model: GecaModel) -> np.ndarray:
    X = np.atleast_2d(np.asarray(x, dtype=float))
    with np.errstate(divide="ignore"):
        logphi = np.log(model.phi)
    return _class_scores(X @ model.P, model.hard().astype(float), model.mu, model.sigma) + logphi


def geca_predict(x, model: GecaModel):
    """Class maximizing the generative score; ties go to the lowest index."""
    pred = np.argmax(geca_scores(x, model), axis=1)
    return pred[0] if np.asarray(x).ndim == 1 else pred


def geca_sample(k: int, model: GecaModel, seed: int, count: Optional[int] = None, normalized: bool = True):
    """Draw coefficients for the eigenfeatures mapped to class ``k`` and map them back.

    Returns ``normalize(P @ c)`` (or ``P @ c`` when ``normalized`` is false);
    ``count`` samples are returned as rows when given.
    """
    hard = model.hard()
    mapped = hard[:, k] == 1
    if not np.any(mapped):
        raise NoMappedEigenfeatures(f"class {k} has no mapped eigenfeature")
    rng = derive_rng(seed, "sample")
    n = 1 if count is None else count
    C = np.zeros((n, model.m))
    C[:, mapped] = model.mu[mapped, k] + model.sigma[mapped, k] * rng.standard_normal((n, int(mapped.sum())))
    V = C @ model.P.T
    if normalized:
        V = normalize(V)
    return V[0] if count is None else V


# ----------------------------------------------------------------------------
# objective and gradients

def _sigma_from_raw(s):
    return SIGMA_FLOOR + np.exp(s)


def _raw_from_sigma(sigma):
    return np.log(np.maximum(sigma - SIGMA_FLOOR, 1e-300))


def geca_objective_and_gradients(X, R, params, chi, omega, w: PenaltyWeights, scale: float = 1.0):
    """Negative weighted log-likelihood (times ``scale``) plus penalties, with gradients.

    ``params`` holds ``P``, ``L``, ``mu`` and ``s`` (the raw standard-deviation
    parameters) and ``phi`` (held fixed).  ``R`` is an n x l weight matrix:
    one-hot labels for supervised training, responsibilities for clustering.
    """
    P, L, mu, s, phi = params["P"], params["L"], params["mu"], params["s"], params["phi"]
    sigma = _sigma_from_raw(s)
    W = mapping_matrix(L, chi, omega, "geca")
    Z = X @ P
    G_Z = np.zeros_like(Z)
    G_W = np.zeros_like(W)
    G_mu = np.zeros_like(mu)
    G_sigma = np.zeros_like(sigma)
    ll = 0.0
    with np.errstate(divide="ignore"):
        logphi = np.log(phi)
    for k in range(W.shape[1]):
        rows = np.flatnonzero(R[:, k] > 0)
        if rows.size == 0:
            continue
        r = R[rows, k]
        D = (Z[rows] - mu[:, k]) / sigma[:, k]
        T = -0.5 * D * D - np.log(sigma[:, k]) - HALF_LOG_2PI
        ll += float(r @ (T @ W[:, k])) + float(r.sum() * logphi[k])
        G_W[:, k] = r @ T
        rD = r[:, None] * D
        G_mu[:, k] = W[:, k] * rD.sum(axis=0) / sigma[:, k]
        G_sigma[:, k] = W[:, k] * (r @ (D * D) - r.sum()) / sigma[:, k]
        G_Z[rows] -= rD * (W[:, k] / sigma[:, k])
    pen, dP_pen, dL_pen, dW_pen = penalty_terms(P, L, W, omega, w, "geca")
    loss = -scale * ll + pen
    grads = {
        "P": -scale * (X.T @ G_Z) + dP_pen,
        "L": mapping_backward(-scale * G_W + dW_pen, L, W, chi, omega, "geca") + dL_pen,
        "mu": -scale * G_mu,
        "s": -scale * G_sigma * (sigma - SIGMA_FLOOR),
    }
    return loss, grads


def moments_init(X, R, P, floor=SIGMA_FLOOR):
    """Weighted per-class means and standard deviations of the projections."""
    Z = X @ P
    l = R.shape[1]
    mu = np.zeros((P.shape[1], l))
    sd = np.ones((P.shape[1], l))
    for k in range(l):
        r = R[:, k]
        tot = r.sum()
        if tot <= 0:
            continue
        mu[:, k] = r @ Z / tot
        var = r @ ((Z - mu[:, k]) ** 2) / tot
        sd[:, k] = np.sqrt(np.maximum(var, 0.0))
    return mu, np.maximum(sd, 2.0 * floor)


@dataclass
class GecaTrainResult:
    model: GecaModel
    loss_history: List[float]


def train_geca(dataset: Dataset, config: TrainConfig, fix_P: bool = False,
               init: Optional[EcaModel] = None) -> GecaTrainResult:
    """Maximize the penalized log-likelihood over P, L, mu and sigma.

    ``phi`` is set to the empirical class frequencies; ``mu`` and ``sigma``
    start from the per-class projection moments under the initial P.  With
    ``fix_P`` the eigenfeature matrix stays at its initial value.
    """
    check_labels(dataset, dataset.l)
    if config.reduction not in ("mean", "sum"):
        raise ConfigError(f"unknown reduction {config.reduction!r}")
    base = init if init is not None else init_model(dataset.m, dataset.l, config.seed, config.chi, config.omega)
    if base.m != dataset.m or base.l != dataset.l:
        raise ConfigError("initial model does not match the data dimensions")
    R = np.zeros((dataset.n, dataset.l))
    R[np.arange(dataset.n), dataset.y] = 1.0
    phi = fit_phi(dataset.y, dataset.l)
    mu, sd = moments_init(dataset.X, R, base.P)
    params = {"P": base.P.copy(), "L": base.L.copy(), "mu": mu, "s": _raw_from_sigma(sd), "phi": phi}
    X = dataset.X

    def grad_fn(idx, prm):
        scale = 1.0 / len(idx) if config.reduction == "mean" else 1.0
        loss, g = geca_objective_and_gradients(X[idx], R[idx], prm, base.chi, base.omega, config.weights, scale)
        if fix_P:
            g["P"] = np.zeros_like(g["P"])
        return loss, g

    history = fit_loop(params, dataset.n, grad_fn, config)
    model = GecaModel(params["P"], params["L"], params["mu"], _sigma_from_raw(params["s"]), phi,
                      base.chi, base.omega)
    return GecaTrainResult(model, history)


# ----------------------------------------------------------------------------
# files

def save_geca(model: GecaModel, path):
    doc = model_to_doc(model.eca)
    doc.update(kind="geca", mu=model.mu, sigma=model.sigma, phi=model.phi)
    serialization.write_json(doc, path)


def load_geca(path) -> GecaModel:
    doc = serialization.read_json(path, kind="geca")
    eca = model_from_doc(doc, path)
    serialization.require(doc, ("mu", "sigma", "phi"), str(path))
    m, l = eca.m, eca.l
    return GecaModel(eca.P, eca.L,
                     serialization.matrix(doc, "mu", (m, l), str(path)),
                     serialization.matrix(doc, "sigma", (m, l), str(path)),
                     serialization.matrix(doc, "phi", (l,), str(path)),
                     eca.chi, eca.omega)
