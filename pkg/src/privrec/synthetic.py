"""Topic-model generator for implicit-feedback datasets.

Topic centres are drawn uniformly on the unit sphere. A video belongs to one
topic; each of its three modal vectors is the centre plus independent
Gaussian noise, so the modalities are correlated only through the topic.
A user is a Dirichlet mixture of topics with latent preference
``affinity * sum_t w_t c_t``. Each user views ``interactions_per_user``
distinct videos at increasing timestamps and engages with video ``v`` with
probability ``sigmoid(pref . v_fused + bias)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ._rng import make_rng
from .feature_store import Catalog, InteractionEvent, ModalFeatureSet
from .fusion import FusionWeights, fuse_matrix
from .scoring import sigmoid

EPOCH = 1_700_000_000


@dataclass(frozen=True)
class SynthSpec:
    users: int = 100
    videos: int = 500
    dim: int = 16
    topics: int = 5
    noise: float = 0.1
    seed: int = 0
    interactions_per_user: int = 100
    affinity: float = 8.0
    bias: float = -3.0
    concentration: float = 0.3

    def __post_init__(self):
        for name in ("users", "videos", "dim", "topics", "interactions_per_user"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.concentration <= 0:
            raise ValueError("concentration must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SynthTruth:
    """Latent quantities behind a generated catalog (for tests and diagnostics)."""

    centers: np.ndarray
    video_topics: np.ndarray
    user_mixtures: np.ndarray
    user_preferences: np.ndarray


def synthesize(spec: SynthSpec, return_truth: bool = False):
    rng = make_rng(spec.seed)
    d, t = spec.dim, spec.topics

    centers = rng.standard_normal((t, d))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)

    topics = rng.integers(0, t, size=spec.videos)
    modal = centers[topics][:, None, :] + spec.noise * rng.standard_normal((spec.videos, 3, d))
    vwidth = len(str(spec.videos - 1))
    video_ids = [f"v{i:0{vwidth}d}" for i in range(spec.videos)]
    videos = tuple(ModalFeatureSet(video_ids[i], modal[i, 0], modal[i, 1], modal[i, 2]) for i in range(spec.videos))

    mixtures = rng.dirichlet(np.full(t, spec.concentration), size=spec.users)
    prefs = spec.affinity * mixtures @ centers

    catalog = Catalog(videos, ())
    fused = fuse_matrix(FusionWeights.uniform(), catalog)
    uwidth = len(str(spec.users - 1))
    user_ids = [f"u{i:0{uwidth}d}" for i in range(spec.users)]
    n_view = min(spec.interactions_per_user, spec.videos)
    events: list[InteractionEvent] = []
    for ui, uid in enumerate(user_ids):
        viewed = rng.choice(spec.videos, size=n_view, replace=False)
        gaps = rng.integers(1, 3600, size=n_view)
        stamps = EPOCH + np.cumsum(gaps)
        p = sigmoid(fused[viewed] @ prefs[ui] + spec.bias)
        labels = rng.random(n_view) < p
        kinds_pos = rng.choice(["like", "comment", "click", "watch"], size=n_view)
        kinds_neg = rng.choice(["click", "watch"], size=n_view)
        for j, vi in enumerate(viewed):
            kind = str(kinds_pos[j] if labels[j] else kinds_neg[j])
            events.append(InteractionEvent(uid, video_ids[vi], kind, int(stamps[j]), bool(labels[j])))

    catalog = Catalog(videos, tuple(user_ids), tuple(events))
    if return_truth:
        return catalog, SynthTruth(centers, topics, mixtures, prefs)
    return catalog
