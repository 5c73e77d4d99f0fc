"""Perturbation sets, projections, and projected-gradient attacks.

Two projection operators drive everything here. ``project_onto_set`` is the
Euclidean projection onto the ball (radial rescale for L2, coordinate clamp
for L-inf). ``project_extreme`` maps a gradient to the nearest extreme point
of the ball (radial normalization for L2, the sign map for L-inf, with
sign(0) := +1 as a deterministic tie-break). The attack update is

    delta <- project_onto_set(delta + step * project_extreme(grad))

applied for K iterations from a zero or uniform start, best-of-restarts by
final loss. A gradient that is exactly zero at some iterate leaves that
iterate unchanged for the step; the standalone L2 extreme projection still
raises on a zero vector to surface misuse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .errors import ConfigError, DegenerateGradientError, DimensionError
from .models import Dataset, LabeledSample, SmoothModel

__all__ = [
    "PerturbationSet",
    "AttackConfig",
    "project_onto_set",
    "project_extreme",
    "projgrad_identity_check",
    "pgd_attack",
    "pgd_attack_batch",
    "robust_loss",
    "empirical_robust_risk",
]

L2 = "l2"
LINF = "linf"


@dataclass(frozen=True)
class PerturbationSet:
    """An L2 or L-infinity ball of radius ``radius`` in dimension ``dim``."""

    norm: str
    radius: float
    dim: int

    def __post_init__(self):
        if self.norm not in (L2, LINF):
            raise ConfigError(f"norm must be {L2!r} or {LINF!r}, got {self.norm!r}")
        if self.radius < 0:
            raise ConfigError(f"radius must be >= 0, got {self.radius}")
        if self.dim < 1:
            raise DimensionError(f"dim must be >= 1, got {self.dim}")

    def contains(self, v: np.ndarray, tol: float = 1e-12) -> bool:
        v = np.asarray(v, dtype=np.float64)
        if self.norm == L2:
            return float(np.linalg.norm(v)) <= self.radius + tol
        return float(np.abs(v).max()) <= self.radius  # exact for clamps

    def sample_uniform(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        if self.norm == L2:
            return _rng.sample_uniform_l2_ball(rng, self.dim, self.radius, size)
        return _rng.sample_uniform_linf_ball(rng, self.dim, self.radius, size)


@dataclass(frozen=True)
class AttackConfig:
    """Projected-gradient attack hyperparameters.

    ``step_size=None`` resolves to radius/4 at attack time, the usual
    evaluation convention (10 iterations, step eps/4).
    """

    steps: int = 10
    step_size: float | None = None
    restarts: int = 1
    init: str = "uniform"

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("attack needs steps >= 1")
        if self.restarts < 1:
            raise ConfigError("attack needs restarts >= 1")
        if self.init not in ("zero", "uniform"):
            raise ConfigError(f"init must be 'zero' or 'uniform', got {self.init!r}")
        if self.step_size is not None and self.step_size <= 0:
            raise ConfigError("step_size must be positive when given")

    def resolved_step(self, pset: PerturbationSet) -> float:
        return self.step_size if self.step_size is not None else pset.radius / 4.0


def _check_vec(g: np.ndarray, pset: PerturbationSet) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (pset.dim,):
        raise DimensionError(f"vector must have shape ({pset.dim},), got {g.shape}")
    return g


def project_rows(G: np.ndarray, pset: PerturbationSet) -> np.ndarray:
    """Euclidean projection of each row onto the ball."""
    if pset.norm == L2:
        norms = np.linalg.norm(G, axis=1, keepdims=True)
        scale = np.ones_like(norms)
        over = norms[:, 0] > pset.radius
        scale[over] = pset.radius / norms[over]
        return G * scale
    return np.clip(G, -pset.radius, pset.radius)


def extreme_rows(G: np.ndarray, pset: PerturbationSet) -> np.ndarray:
    """Nearest extreme point of the ball per row; rows must be nonzero for L2."""
    if pset.norm == L2:
        norms = np.linalg.norm(G, axis=1, keepdims=True)
        return pset.radius * G / norms
    return np.where(G >= 0.0, pset.radius, -pset.radius)


def project_onto_set(g: np.ndarray, pset: PerturbationSet) -> np.ndarray:
    """argmin over the ball of the distance to ``g``."""
    g = _check_vec(g, pset)
    return project_rows(g[None, :], pset)[0]


def project_extreme(g: np.ndarray, pset: PerturbationSet) -> np.ndarray:
    """argmin over the ball's extreme points of the distance to ``g``.

    L2: radius * g / ||g||, undefined at g = 0. L-inf: radius * sign(g)
    coordinatewise with sign(0) := +1 so replay stays deterministic.
    """
    g = _check_vec(g, pset)
    if pset.norm == L2 and np.linalg.norm(g) == 0.0:
        raise DegenerateGradientError("extreme-point projection of a zero vector is undefined for L2")
    return extreme_rows(g[None, :], pset)[0]


def projgrad_identity_check(g: np.ndarray, pset: PerturbationSet, psi: float, tol: float = 1e-10):
    """Whether the extreme projection equals the set projection of the
    psi-rescaled gradient, ``radius * psi * g``; valid whenever
    ``||g|| >= 1/psi`` on an L2 ball.

    Returns True/False when the precondition holds, None when it does not
    (not applicable rather than failure).
    """
    if pset.norm != L2:
        raise ConfigError("the rescaling identity is stated for L2 balls")
    if psi <= 0:
        raise ConfigError("psi must be positive")
    g = _check_vec(g, pset)
    if np.linalg.norm(g) < 1.0 / psi:
        return None
    lhs = project_extreme(g, pset)
    rhs = project_onto_set(pset.radius * psi * g, pset)
    return bool(np.linalg.norm(lhs - rhs) <= tol)


def pgd_attack_batch(
    model: SmoothModel,
    w: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    pset: PerturbationSet,
    cfg: AttackConfig,
    rng: np.random.Generator,
    loss_grad_fn=None,
):
    """Vectorized projected-gradient ascent over a batch of samples.

    ``loss_grad_fn(deltas) -> (losses, grad_deltas)`` defaults to the plain
    adversarial loss; pass a surrogate to attack a different objective.
    Returns ``(deltas, n_grad_calls, n_loss_calls)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    B = X.shape[0]
    if loss_grad_fn is None:

        def loss_grad_fn(D):
            losses, _, Gd = model.batch_loss_and_grads(w, X, y, D)
            return losses, Gd

    step = cfg.resolved_step(pset)
    grad_calls = 0
    loss_calls = 0
    best_delta = None
    best_loss = None
    for _ in range(cfg.restarts):
        if cfg.init == "zero":
            D = np.zeros((B, pset.dim))
        else:
            D = pset.sample_uniform(rng, size=B)
        for _ in range(cfg.steps):
            _, Gd = loss_grad_fn(D)
            grad_calls += 1
            norms = np.linalg.norm(Gd, axis=1)
            live = norms > 0.0  # zero gradient: leave the iterate unchanged
            if live.any():
                stepped = D[live] + step * extreme_rows(Gd[live], pset)
                D = D.copy()
                D[live] = project_rows(stepped, pset)
        if cfg.restarts == 1:
            return D, grad_calls, loss_calls
        losses, _ = loss_grad_fn(D)
        loss_calls += 1
        if best_loss is None:
            best_delta, best_loss = D, losses
        else:
            better = losses > best_loss
            best_delta = np.where(better[:, None], D, best_delta)
            best_loss = np.maximum(losses, best_loss)
    return best_delta, grad_calls, loss_calls


def pgd_attack(
    model: SmoothModel,
    w: np.ndarray,
    sample: LabeledSample,
    pset: PerturbationSet,
    cfg: AttackConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Attack a single sample; returns a feasible perturbation."""
    D, _, _ = pgd_attack_batch(model, w, sample.x[None, :], [sample.y], pset, cfg, rng)
    return D[0]


def robust_loss(
    model: SmoothModel,
    w: np.ndarray,
    sample: LabeledSample,
    pset: PerturbationSet,
    cfg: AttackConfig,
    rng: np.random.Generator,
) -> float:
    """Loss at the attacked point: a lower surrogate for the inner maximum."""
    delta = pgd_attack(model, w, sample, pset, cfg, rng)
    return model.loss_value(w, delta, sample)


def empirical_robust_risk(
    model: SmoothModel,
    w: np.ndarray,
    dataset: Dataset,
    pset: PerturbationSet,
    cfg: AttackConfig,
    rng: np.random.Generator,
):
    """Mean attacked loss and the fraction of samples still classified
    correctly at their attacked points. Returns ``(risk, robust_accuracy)``.
    """
    if dataset.n < 1:
        raise DimensionError("dataset must be nonempty")
    deltas, _, _ = pgd_attack_batch(model, w, dataset.X, dataset.y, pset, cfg, rng)
    losses = model.loss_batch(w, dataset.X, dataset.y, deltas)
    preds = model.predict_batch(w, dataset.X, deltas)
    return float(losses.mean()), float((preds == dataset.y).mean())
