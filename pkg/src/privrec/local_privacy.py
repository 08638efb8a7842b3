"""Client-side profile perturbation and server-side clustering.

Client: clamp each component of an interest vector to [-1, 1], add Laplace
noise with the budget split evenly over components, snap to a grid, and
upload under a random pseudonym. Server: re-quantize to a shared template
grid, measure Euclidean distance, run seeded k-means++.

The server functions only accept :class:`PerturbedProfile` objects; raw
interest vectors are rejected with ``TypeError``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError
from .dp_noise import laplace_samples

# Component range after clamping to [-1, 1].
COMPONENT_RANGE = 2.0
# Rounding slack so that e.g. 0.25 / 0.1 = 2.4999999999999996 still rounds half-up.
_ROUND_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class PerturbedProfile:
    pseudonym: str
    values: np.ndarray
    epsilon_used: float
    grid_step: float

    def __post_init__(self):
        if not self.epsilon_used > 0:
            raise ValueError("epsilon_used must be positive")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))

    def on_grid(self, step: float | None = None) -> bool:
        q = self.values / (step or self.grid_step)
        return bool(np.all(np.abs(q - np.round(q)) < 1e-6))

    def to_json(self) -> str:
        return json.dumps({
            "pseudonym": self.pseudonym,
            "values": self.values.tolist(),
            "epsilon_used": self.epsilon_used,
            "grid_step": self.grid_step,
        })

    @classmethod
    def from_json(cls, line: str) -> "PerturbedProfile":
        rec = json.loads(line)
        return cls(rec["pseudonym"], rec["values"], float(rec["epsilon_used"]), float(rec["grid_step"]))


@dataclass(frozen=True)
class Template:
    dim: int
    grid_step: float


@dataclass(frozen=True)
class ClusterAssignment:
    pseudonym: str
    cluster_id: int
    distance_to_centroid: float


@dataclass
class ClusterResult:
    assignments: list[ClusterAssignment]
    centroids: np.ndarray
    objective_history: list[float]
    iterations: int
    converged: bool

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pseudonym", "cluster_id", "distance"])
        for a in self.assignments:
            w.writerow([a.pseudonym, a.cluster_id, f"{a.distance_to_centroid:.6f}"])
        return buf.getvalue()


def quantize(x, step: float) -> np.ndarray:
    """Round to the nearest multiple of ``step``, halves rounding up."""
    if not step > 0:
        raise ValueError("grid_step must be positive")
    q = np.floor(np.asarray(x, dtype=np.float64) / step + 0.5 + _ROUND_EPS)
    # round() strips representation noise such as 0.30000000000000004
    decimals = max(0, 12 - int(math.floor(math.log10(step))))
    return np.round(q * step, decimals) + 0.0


def _pseudonym(rng: np.random.Generator) -> str:
    return rng.bytes(8).hex()


def perturb_profile(u, epsilon: float, grid_step: float, rng: np.random.Generator,
                    component_range: float = COMPONENT_RANGE) -> PerturbedProfile:
    """Client-side perturbation of one interest vector.

    Each of the ``d`` components gets Laplace noise of scale
    ``component_range / (epsilon / d)``; noise is added before quantization
    so the grid snap is pure post-processing.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not grid_step > 0:
        raise ValueError(f"grid_step must be positive, got {grid_step}")
    x = np.clip(np.asarray(getattr(u, "values", u), dtype=np.float64), -1.0, 1.0)
    d = len(x)
    scale = component_range / (epsilon / d)
    pseudonym = _pseudonym(rng)
    noisy = x + laplace_samples(scale, rng, d)
    return PerturbedProfile(pseudonym, quantize(noisy, grid_step), float(epsilon), float(grid_step))


def _require_profiles(profiles) -> list[PerturbedProfile]:
    profiles = list(profiles)
    for p in profiles:
        if not isinstance(p, PerturbedProfile):
            raise TypeError(f"server-side operations accept PerturbedProfile only, got {type(p).__name__}")
    return profiles


def standardize(profiles: Sequence[PerturbedProfile], template: Template) -> list[PerturbedProfile]:
    """Re-quantize uploaded profiles onto the template grid."""
    out = []
    for p in _require_profiles(profiles):
        if len(p.values) != template.dim:
            raise DataError(f"profile {p.pseudonym} has dimension {len(p.values)}, template expects {template.dim}")
        out.append(PerturbedProfile(p.pseudonym, quantize(p.values, template.grid_step),
                                    p.epsilon_used, template.grid_step))
    return out


def semantic_distance(a, b) -> float:
    a = np.asarray(getattr(a, "values", a), dtype=np.float64)
    b = np.asarray(getattr(b, "values", b), dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(X, X[chosen]).min(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            # every point coincides with a centre; take the first unused index
            nxt = next(i for i in range(n) if i not in chosen)
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(X, X[[nxt]])[:, 0])
    return X[chosen].copy()


def cluster_profiles(profiles: Sequence[PerturbedProfile], k: int, rng: np.random.Generator,
                     max_iters: int = 100) -> ClusterResult:
    """Lloyd's k-means under Euclidean distance, k-means++ seeded.

    Stops when assignments stop changing or after ``max_iters`` rounds.
    The objective (sum of squared distances to the assigned centroid) is
    recorded after every round and checked to be non-increasing.
    """
    profiles = _require_profiles(profiles)
    if not profiles:
        raise DataError("cannot cluster an empty profile collection")
    if not 1 <= k <= len(profiles):
        raise DataError(f"k must lie in [1, {len(profiles)}], got {k}")
    X = np.stack([p.values for p in profiles])
    C = kmeans_plusplus(X, k, rng)

    labels = _sq_dists(X, C).argmin(axis=1)
    history = [float(_sq_dists(X, C)[np.arange(len(X)), labels].sum())]
    converged = False
    iters = 0
    for iters in range(1, max_iters + 1):
        for j in range(k):
            members = labels == j
            if members.any():  # empty clusters keep their centroid
                C[j] = X[members].mean(axis=0)
        D = _sq_dists(X, C)
        new_labels = D.argmin(axis=1)
        obj = float(D[np.arange(len(X)), new_labels].sum())
        if obj > history[-1] * (1 + 1e-12) + 1e-12:
            raise RuntimeError(f"k-means objective increased: {history[-1]} -> {obj}")
        history.append(obj)
        if np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels

    D = np.sqrt(_sq_dists(X, C))
    assignments = [
        ClusterAssignment(p.pseudonym, int(labels[i]), float(D[i, labels[i]]))
        for i, p in enumerate(profiles)
    ]
    return ClusterResult(assignments, C, history, iters, converged)
