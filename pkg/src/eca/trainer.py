"""Initialization, the mini-batch training loop, evaluation and model files."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import serialization
from .core import EcaModel, predict
from .data import Dataset
from .errors import ConfigError, FormatError, NumericalError
from .objectives import OBJECTIVES, PenaltyWeights, loss_and_gradients
from .seeding import derive_rng

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: Optional[int] = None
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    objective: str = "veca"
    weights: PenaltyWeights = field(default_factory=PenaltyWeights)
    chi: float = 10.0
    omega: float = np.pi / 2
    prob_mode: str = "modified"
    reduction: str = "mean"
    reorthogonalize: bool = False
    restarts: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.prob_mode not in ("modified", "unmodified"):
            raise ConfigError(f"unknown prob_mode {self.prob_mode!r}")
        if not (self.chi > 0 and self.omega > 0):
            raise ConfigError("chi and omega must be positive")

    def effective_batch_size(self, n: int) -> int:
        """Full batch for small datasets, 128 otherwise, unless set explicitly."""
        if self.batch_size is not None:
            return min(self.batch_size, n)
        return n if n <= 2000 else 128


# ----------------------------------------------------------------------------
# optimizers

class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * (g * g)
            params[k] -= self.lr * (self.m[k] / corr1) / (np.sqrt(self.v[k] / corr2) + self.eps)


class SGD:
    def __init__(self, lr=1e-3):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            params[k] -= self.lr * g


def make_optimizer(name, lr):
    return Adam(lr) if name == "adam" else SGD(lr)


def fit_loop(params: Dict[str, np.ndarray], n: int, grad_fn: Callable, config: TrainConfig,
             project: Optional[Callable] = None, epoch_callback: Optional[Callable] = None,
             restart: int = 0) -> List[float]:
    """Shared mini-batch loop.

    ``grad_fn(batch_indices, params)`` returns ``(loss, grads)`` with ``grads``
    keyed like ``params``.  ``project(params)`` runs after every step (used to
    keep constrained weights feasible).  Returns the mean batch loss per epoch.
    """
    rng = derive_rng(config.seed, "shuffle", restart)
    opt = make_optimizer(config.optimizer, config.learning_rate)
    bs = config.effective_batch_size(n)
    history: List[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, bs):
            idx = np.sort(order[start:start + bs])
            loss, grads = grad_fn(idx, params)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}")
            opt.step(params, grads)
            if project is not None:
                project(params)
            total += loss * len(idx)
            count += len(idx)
        history.append(total / count)
        if len(history) > 1 and history[-1] > 1.1 * history[-2] and history[-2] > 0:
            log.warning("epoch %d: loss rose from %.6g to %.6g", epoch, history[-2], history[-1])
        if epoch_callback is not None:
            epoch_callback(epoch, history[-1], params)
    return history


# ----------------------------------------------------------------------------
# plain ECA training

def init_model(m: int, l: int, seed: int, chi: float = 10.0, omega: float = np.pi / 2,
               restart: int = 0) -> EcaModel:
    """Orthogonal P from the QR factorization of a Gaussian matrix; L uniform on (-0.5, 0.5)."""
    if m < 1 or l < 1:
        raise ConfigError("m and l must be >= 1")
    rng = derive_rng(seed, "init", restart)
    Q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    L = rng.uniform(-0.5, 0.5, size=(m, l))
    return EcaModel(Q, L, chi, omega)


def orthogonality_residual(P) -> float:
    return float(np.linalg.norm(np.eye(P.shape[1]) - P.T @ P))


@dataclass
class TrainResult:
    model: EcaModel
    loss_history: List[float]
    orthogonality: float


def check_labels(dataset: Dataset, l: int):
    if dataset.y is None:
        raise ConfigError("training needs a labelled dataset")
    if dataset.n == 0:
        raise ConfigError("training needs a non-empty dataset")
    if dataset.y.min() < 0 or dataset.y.max() >= l:
        raise ConfigError(f"labels must lie in 0..{l - 1}")


def train(dataset: Dataset, config: TrainConfig, init: Optional[EcaModel] = None) -> TrainResult:
    """Fit P and L by mini-batch gradient descent on the configured objective.

    With ``config.restarts > 1`` training is repeated from independently
    seeded initializations and the run with the lowest final training loss
    is returned.
    """
    check_labels(dataset, dataset.l)
    best = None
    for r in range(config.restarts):
        result = _train_once(dataset, config, init, r)
        if best is None or result.loss_history[-1] < best.loss_history[-1]:
            best = result
    return best


def _train_once(dataset: Dataset, config: TrainConfig, init: Optional[EcaModel], restart: int) -> TrainResult:
    m, l = dataset.m, dataset.l
    if init is not None and restart == 0:
        model = init.copy()
    else:
        model = init_model(m, l, config.seed, config.chi, config.omega, restart)
    if model.m != m or model.l != l:
        raise ConfigError(f"model is {model.m}x{model.l} but data has m={m}, l={l}")
    X, y = dataset.X, dataset.y
    Y = np.zeros((dataset.n, l))
    Y[np.arange(dataset.n), y] = 1.0
    params = {"P": model.P.copy(), "L": model.L.copy()}

    def grad_fn(idx, prm):
        mdl = EcaModel(prm["P"], prm["L"], model.chi, model.omega)
        loss, g = loss_and_gradients(X[idx], Y[idx], mdl, config.weights, config.objective, config.reduction)
        return loss, {"P": g.dP, "L": g.dL}

    history = fit_loop(params, dataset.n, grad_fn, config, restart=restart)
    P = params["P"]
    if config.reorthogonalize:
        Q, R = np.linalg.qr(P)
        P = Q * np.sign(np.diag(R))
    out = EcaModel(P, params["L"], model.chi, model.omega)
    return TrainResult(out, history, orthogonality_residual(out.P))


# ----------------------------------------------------------------------------
# evaluation

@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray
    per_class_counts: np.ndarray
    empty_classes: List[int]


def evaluation_report(pred, y, l) -> EvalReport:
    """Accuracy and a confusion matrix normalized per true class (column)."""
    pred = np.asarray(pred, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    counts = np.zeros((l, l))
    np.add.at(counts, (pred, y), 1.0)
    support = counts.sum(axis=0)
    confusion = np.divide(counts, support, out=np.zeros_like(counts), where=support > 0)
    empty = [int(k) for k in np.flatnonzero(support == 0)]
    return EvalReport(float(np.mean(pred == y)) if len(y) else 0.0, confusion,
                      support.astype(np.int64), empty)


def evaluate(dataset: Dataset, model: EcaModel, mode: str = "modified") -> EvalReport:
    return evaluation_report(predict(dataset.X, model, mode), dataset.y, model.l)


# ----------------------------------------------------------------------------
# model files

def model_to_doc(model: EcaModel) -> dict:
    return {
        "format_version": serialization.FORMAT_VERSION,
        "kind": "eca",
        "m": model.m,
        "l": model.l,
        "chi": model.chi,
        "omega": model.omega,
        "P": model.P,
        "L": model.L,
    }


def model_from_doc(doc: dict, path="model") -> EcaModel:
    serialization.require(doc, ("m", "l", "chi", "omega", "P", "L"), str(path))
    m, l = int(doc["m"]), int(doc["l"])
    P = serialization.matrix(doc, "P", (m, m), str(path))
    L = serialization.matrix(doc, "L", (m, l), str(path))
    try:
        return EcaModel(P, L, float(doc["chi"]), float(doc["omega"]))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_model(model: EcaModel, path):
    serialization.write_json(model_to_doc(model), path)


def load_model(path) -> EcaModel:
    return model_from_doc(serialization.read_json(path, kind="eca"), path)
