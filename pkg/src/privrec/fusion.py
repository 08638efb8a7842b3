"""Weighted multimodal fusion and training of the modality weights."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError, TrainingError
from .feature_store import Catalog, ModalFeatureSet

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class FusionWeights:
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        w = self.as_array()
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError(f"fusion weights must be finite and non-negative, got {tuple(w)}")
        if abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"fusion weights must sum to 1, got {w.sum()!r}")

    @classmethod
    def uniform(cls) -> "FusionWeights":
        return cls.from_array(np.full(3, 1.0 / 3.0))

    @classmethod
    def from_array(cls, w) -> "FusionWeights":
        w = np.asarray(w, dtype=np.float64)
        return cls(float(w[0]), float(w[1]), float(w[2]))

    @classmethod
    def projected(cls, alpha: float, beta: float, gamma: float) -> "FusionWeights":
        """Closest simplex point (Euclidean projection) to an arbitrary triple."""
        return cls.from_array(project_to_simplex(np.array([alpha, beta, gamma], dtype=np.float64)))

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma], dtype=np.float64)

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "FusionWeights":
        data = json.loads(text)
        return cls(float(data["alpha"]), float(data["beta"]), float(data["gamma"]))


@dataclass(frozen=True, eq=False)
class FusedVector:
    video_id: str
    values: np.ndarray


@dataclass(frozen=True)
class TrainingConfig:
    steps: int = 200
    learning_rate: float = 0.1


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    # sort-based projection (Held, Wolfe & Crowder)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, len(v) + 1)
    rho = np.nonzero(u * idx > css - 1.0)[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    w = np.maximum(v - theta, 0.0)
    return w / w.sum()


def fuse(weights: FusionWeights, features: ModalFeatureSet) -> FusedVector:
    values = (
        weights.alpha * features.visual
        + weights.beta * features.text
        + weights.gamma * features.audio
    )
    return FusedVector(features.video_id, values)


def fuse_matrix(weights: FusionWeights, catalog: Catalog) -> np.ndarray:
    """(n_videos, d) fused vectors for the whole catalog, in catalog order.

    Computed with the same operation order as :func:`fuse`, so rows are
    bit-identical to per-video fusion.
    """
    t = catalog.modal_tensor
    return weights.alpha * t[:, 0] + weights.beta * t[:, 1] + weights.gamma * t[:, 2]


def _training_arrays(catalog: Catalog, weights: FusionWeights):
    """Per-interaction modal projections ``u . x_m`` and labels.

    User vectors are built once from ``weights`` and then held fixed.
    Returns ``(P, y)`` with ``P`` of shape (n_events, 3).
    """
    from .scoring import user_matrix  # scoring depends on fusion

    fused = fuse_matrix(weights, catalog)
    users = user_matrix(catalog, fused)
    uidx = {u: i for i, u in enumerate(catalog.users)}
    rows = np.fromiter((uidx[ev.user_id] for ev in catalog.interactions), dtype=np.intp)
    cols = np.fromiter((catalog.video_index[ev.video_id] for ev in catalog.interactions), dtype=np.intp)
    y = np.fromiter((ev.label for ev in catalog.interactions), dtype=np.float64)
    P = np.einsum("nd,nmd->nm", users[rows], catalog.modal_tensor[cols])
    return P, y


def _loss_and_grad(w: np.ndarray, P: np.ndarray, y: np.ndarray):
    # overflow shows up as a non-finite loss, which callers check
    with np.errstate(over="ignore", invalid="ignore"):
        z = P @ w
        # log(1 + e^z) - y z, written stably
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        grad = (p - y) @ P / len(y)
    return loss, grad


def training_loss(catalog: Catalog, weights: FusionWeights, user_weights: FusionWeights | None = None) -> float:
    """Mean log-loss of the matching score against engagement labels.

    User vectors come from ``user_weights`` (default: ``weights``).
    """
    P, y = _training_arrays(catalog, user_weights or weights)
    return _loss_and_grad(weights.as_array(), P, y)[0]


def training_gradient(catalog: Catalog, weights: FusionWeights, user_weights: FusionWeights | None = None) -> np.ndarray:
    """Gradient of :func:`training_loss` w.r.t. (alpha, beta, gamma), users fixed."""
    P, y = _training_arrays(catalog, user_weights or weights)
    return _loss_and_grad(weights.as_array(), P, y)[1]


def train_weights(catalog: Catalog, initial: FusionWeights, config: TrainingConfig | None = None) -> FusionWeights:
    """Fit (alpha, beta, gamma) by full-batch gradient descent on log-loss.

    Weights are parameterised as ``softmax(theta)`` so every iterate lies on
    the simplex. User vectors are computed from ``initial`` and not updated.
    The best iterate seen is returned, so the training loss never exceeds
    the loss at ``initial``.

    Raises:
        DataError: the catalog lacks a positive or a negative interaction.
        TrainingError: the loss becomes non-finite.
    """
    config = config or TrainingConfig()
    if config.steps <= 0:
        return initial
    labels = {ev.label for ev in catalog.interactions}
    if labels != {True, False}:
        raise DataError("training needs at least one positive and one negative interaction")

    P, y = _training_arrays(catalog, initial)
    w0 = initial.as_array()
    best_loss, _ = _loss_and_grad(w0, P, y)
    if not math.isfinite(best_loss):
        raise TrainingError(f"non-finite training loss at initial weights: {best_loss}")
    best_w = w0

    theta = np.log(np.maximum(w0, 1e-300))
    for _ in range(config.steps):
        e = np.exp(theta - theta.max())
        w = e / e.sum()
        loss, g = _loss_and_grad(w, P, y)
        if not math.isfinite(loss) or not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite training loss ({loss}); feature magnitudes may be unbounded")
        if loss < best_loss:
            best_loss, best_w = loss, w
        # chain rule through softmax: J = diag(w) - w w^T
        theta = theta - config.learning_rate * (w * g - w * (w @ g))

    e = np.exp(theta - theta.max())
    w = e / e.sum()
    loss, _ = _loss_and_grad(w, P, y)
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite training loss ({loss})")
    if loss < best_loss:
        best_w = w
    if best_w is w0:
        return initial
    return FusionWeights.from_array(best_w / best_w.sum())
