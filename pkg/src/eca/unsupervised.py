"""Unsupervised ECA: EM over latent class assignments.

The joint model is the generative one (per-eigenfeature normal densities
weighted by the relaxed mapping, plus a categorical prior).  The evidence
lower bound is::

    ELBO = (1/n) sum_i sum_z Q_i(z) [log p(x_i, z) - log Q_i(z)]  -  penalties

The default E-step sets ``Q_i`` to the exact posterior under that joint, so
that the ELBO never decreases; the ``"eca"`` E-step uses the collapse
probabilities pushed through the mapping instead.  The M-step takes a
bounded number of gradient-ascent steps with backtracking and sets the prior
to the mean responsibilities.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import collapse_probabilities
from .data import Dataset
from .errors import ConfigError
from .generative import (
    SIGMA_FLOOR,
    GecaModel,
    _raw_from_sigma,
    _sigma_from_raw,
    geca_objective_and_gradients,
    moments_init,
)
from .objectives import PenaltyWeights
from .seeding import derive_rng
from .trainer import init_model

log = logging.getLogger(__name__)

ESTEPS = ("posterior", "eca")


def _default_weights():
    # The likelihood is over raw projections, so shrinking the columns of P
    # raises it without bound; a strong orthogonality weight holds them at
    # unit length.
    return PenaltyWeights(xi=100.0, gamma=0.1)


@dataclass
class UecaConfig:
    """EM settings.

    ``full_mapping_init`` starts every latent class mapped to every
    eigenfeature so that no class begins with an advantage; ``identity_init``
    starts P at the identity and ``fix_P`` keeps it there.
    """

    max_rounds: int = 200
    tol: float = 1e-6
    inner_steps: int = 10
    learning_rate: float = 1e-2
    seed: int = 0
    weights: PenaltyWeights = field(default_factory=_default_weights)
    chi: float = 10.0
    omega: float = np.pi / 2
    estep: str = "posterior"
    identity_init: bool = False
    fix_P: bool = False
    full_mapping_init: bool = True
    restarts: int = 1

    def __post_init__(self):
        if self.max_rounds < 1 or self.inner_steps < 1 or self.restarts < 1:
            raise ConfigError("max_rounds, inner_steps and restarts must be >= 1")
        if not (self.tol >= 0 and self.learning_rate > 0):
            raise ConfigError("tol must be >= 0 and learning_rate positive")
        if self.estep not in ESTEPS:
            raise ConfigError(f"unknown E-step {self.estep!r}")


@dataclass
class UecaState:
    model: GecaModel
    responsibilities: np.ndarray

    @property
    def l_tilde(self) -> int:
        return self.responsibilities.shape[1]


@dataclass
class UecaResult:
    state: UecaState
    assignments: np.ndarray
    elbo_history: List[float]
    rounds: int
    converged: bool


def _params(model: GecaModel):
    return {"P": model.P.copy(), "L": model.L.copy(), "mu": model.mu.copy(),
            "s": _raw_from_sigma(model.sigma), "phi": model.phi.copy()}


def _model(params, chi, omega) -> GecaModel:
    return GecaModel(params["P"], params["L"], params["mu"], _sigma_from_raw(params["s"]),
                     params["phi"], chi, omega)


def log_joint(X, model: GecaModel) -> np.ndarray:
    """``log p(x_i, z)`` for every sample and latent class (relaxed mapping), n x l~."""
    W = model.eca.ecmm().soft
    Z = np.asarray(X, dtype=float) @ model.P
    with np.errstate(divide="ignore"):
        out = np.log(model.phi)[None, :].repeat(Z.shape[0], axis=0)
    for k in range(W.shape[1]):
        d = (Z - model.mu[:, k]) / model.sigma[:, k]
        T = -0.5 * d * d - np.log(model.sigma[:, k]) - 0.5 * np.log(2.0 * np.pi)
        out[:, k] += T @ W[:, k]
    return out


def _row_softmax(A):
    A = A - np.max(A, axis=1, keepdims=True)
    E = np.exp(A)
    return E / E.sum(axis=1, keepdims=True)


def ueca_estep(dataset: Dataset, state: UecaState, kind: str = "posterior") -> np.ndarray:
    """Responsibilities ``Q_i(z)``, one row-stochastic row per sample.

    ``"posterior"`` gives ``p(z | x)`` under the joint model.  ``"eca"`` gives
    ``Q_i(z)`` proportional to ``[(x P)^2 . soft_mapping]_z * phi_z``.
    """
    model = state.model
    if kind == "posterior":
        lj = log_joint(dataset.X, model)
        finite = np.isfinite(lj).any(axis=1)
        lj[~finite] = 0.0
        return _row_softmax(lj)
    if kind == "eca":
        c = collapse_probabilities(dataset.X, model.P)
        q = (c @ model.eca.ecmm().soft) * model.phi
        tot = q.sum(axis=1, keepdims=True)
        uniform = np.full_like(q, 1.0 / q.shape[1])
        return np.divide(q, tot, out=uniform, where=tot > 0)
    raise ConfigError(f"unknown E-step {kind!r}")


def elbo(dataset: Dataset, state: UecaState, w: PenaltyWeights) -> float:
    """Mean responsibility-weighted joint log-likelihood plus entropy, minus penalties."""
    Q = state.responsibilities
    model = state.model
    lj = log_joint(dataset.X, model)
    with np.errstate(invalid="ignore", divide="ignore"):
        data = np.where(Q > 0, Q * (lj - np.log(Q)), 0.0).sum()
    params = _params(model)
    pen = geca_objective_and_gradients(dataset.X[:0], Q[:0], params, model.chi, model.omega, w)[0]
    return float(data / dataset.n - pen)


def _objective(X, Q, params, chi, omega, w, scale):
    return geca_objective_and_gradients(X, Q, params, chi, omega, w, scale)


def ueca_mstep(dataset: Dataset, responsibilities, state: UecaState, config: UecaConfig) -> UecaState:
    """Bounded gradient ascent on the ELBO for fixed responsibilities.

    The prior, means and standard deviations are first set to their exact
    maximizers under the current P (mean responsibilities and weighted
    projection moments).  Then ``config.inner_steps`` backtracking gradient
    steps are taken on P, L, mu and sigma, each accepted only if the
    objective does not get worse.
    """
    Q = np.asarray(responsibilities, dtype=float)
    X = dataset.X
    model = state.model
    params = _params(model)
    params["phi"] = Q.mean(axis=0)
    mu, sd = moments_init(X, Q, params["P"], floor=SIGMA_FLOOR / 2)
    params["mu"], params["s"] = mu, _raw_from_sigma(sd)
    scale = 1.0 / dataset.n
    keys = ("L", "mu", "s") if config.fix_P else ("P", "L", "mu", "s")
    step = config.learning_rate
    loss, grads = _objective(X, Q, params, model.chi, model.omega, config.weights, scale)
    for _ in range(config.inner_steps):
        norm = np.sqrt(sum(float(np.sum(grads[k] ** 2)) for k in keys))
        if norm == 0:
            break
        accepted = False
        for _ in range(40):
            trial = dict(params)
            for k in keys:
                trial[k] = params[k] - step * grads[k] / max(norm, 1.0)
            t_loss, t_grads = _objective(X, Q, trial, model.chi, model.omega, config.weights, scale)
            if np.isfinite(t_loss) and t_loss <= loss:
                params, loss, grads = trial, t_loss, t_grads
                accepted = True
                step *= 1.5
                break
            step *= 0.5
        if not accepted:
            break
    return UecaState(_model(params, model.chi, model.omega), Q)


def init_state(dataset: Dataset, l_tilde: int, config: UecaConfig, restart: int = 0) -> UecaState:
    """Seeded Dirichlet(1, ..., 1) responsibilities and moment-matched densities."""
    rng = derive_rng(config.seed, "responsibilities", restart)
    Q = rng.dirichlet(np.ones(l_tilde), size=dataset.n)
    base = init_model(dataset.m, l_tilde, config.seed, config.chi, config.omega, restart)
    P = np.eye(dataset.m) if config.identity_init else base.P
    mu, sd = moments_init(dataset.X, Q, P)
    L = np.full_like(base.L, 0.5 * np.pi / config.omega) if config.full_mapping_init else base.L
    model = GecaModel(P, L, mu, sd, Q.mean(axis=0), config.chi, config.omega)
    return UecaState(model, Q)


def ueca_fit(dataset: Dataset, l_tilde: int, config: Optional[UecaConfig] = None) -> UecaResult:
    """Alternate M- and E-steps until the ELBO changes by less than ``tol``.

    Each round runs the M-step on the current responsibilities and then the
    E-step.  Fitting also stops when the responsibilities no longer change
    (with one latent class this happens after the first round).  With
    ``config.restarts > 1`` the fit is repeated from independent seeded
    initializations and the run with the highest final ELBO is kept.
    """
    config = config or UecaConfig()
    if l_tilde < 1:
        raise ConfigError("the number of latent classes must be >= 1")
    if dataset.n == 0:
        raise ConfigError("clustering needs a non-empty dataset")
    best = None
    for r in range(config.restarts):
        result = _fit_once(dataset, l_tilde, config, r)
        if best is None or result.elbo_history[-1] > best.elbo_history[-1]:
            best = result
    return best


def _fit_once(dataset: Dataset, l_tilde: int, config: UecaConfig, restart: int) -> UecaResult:
    state = init_state(dataset, l_tilde, config, restart)
    history: List[float] = []
    converged = False
    rounds = 0
    for rounds in range(1, config.max_rounds + 1):
        state = ueca_mstep(dataset, state.responsibilities, state, config)
        Q = ueca_estep(dataset, state, config.estep)
        unchanged = np.max(np.abs(Q - state.responsibilities)) < 1e-12
        state = UecaState(state.model, Q)
        history.append(elbo(dataset, state, config.weights))
        if len(history) > 1 and history[-1] < history[-2] - 1e-8:
            log.warning("round %d: ELBO decreased from %.10g to %.10g", rounds, history[-2], history[-1])
        if unchanged or (len(history) > 1 and abs(history[-1] - history[-2]) < config.tol):
            converged = True
            break
    assignments = np.argmax(state.responsibilities, axis=1)
    return UecaResult(state, assignments, history, rounds, converged)
