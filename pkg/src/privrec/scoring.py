"""User interest vectors, sigmoid matching and the retrieve-then-rank pipeline."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DataError
from .feature_store import Catalog
from .fusion import FusionWeights, fuse_matrix

# privatizer(user_vector, candidate_matrix, scores) -> noisy scores
Privatizer = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]

DEFAULT_CANDIDATES = 250
COSINE_DECIMALS = 12


@dataclass(frozen=True, eq=False)
class InterestVector:
    owner_id: str
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if not np.all(np.isfinite(self.values)):
            raise DataError(f"interest vector for {self.owner_id!r} has non-finite components")


@dataclass(frozen=True)
class RankedEntry:
    video_id: str
    score: float
    """Display score, clamped to [0, 1]."""
    raw_score: float
    """Score used for ranking; may leave [0, 1] once noise is added."""


@dataclass(frozen=True)
class RankedList:
    entries: tuple[RankedEntry, ...] = field(default=())

    @property
    def video_ids(self) -> list[str]:
        return [e.video_id for e in self.entries]

    @property
    def scores(self) -> list[float]:
        return [e.score for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["rank", "video_id", "score"])
        for rank, e in enumerate(self.entries, start=1):
            writer.writerow([rank, e.video_id, f"{e.score:.6f}"])
        return buf.getvalue()


def _values(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=np.float64)


def row_dots(V, u) -> np.ndarray:
    """Dot product of ``u`` with each row of ``V``.

    Elementwise product and row sum rather than a BLAS matrix product, so
    identical rows give bit-identical results and exact ties stay exact.
    """
    return np.sum(np.asarray(V, dtype=np.float64) * np.asarray(u, dtype=np.float64), axis=-1)


def sigmoid(z):
    # tanh form is stable for large |z| and exact at 0
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def sigmoid_prime(z):
    s = sigmoid(z)
    return s * (1.0 - s)


def match_score(u, v) -> float:
    """Logistic of the dot product between a user and a fused video vector."""
    a, b = _values(u), _values(v)
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: user {a.shape[0]} vs video {b.shape[0]}")
    return float(sigmoid(row_dots(a, b)))


def _decay_weights(timestamps: np.ndarray, half_life: float) -> np.ndarray:
    if math.isinf(half_life):
        return np.ones_like(timestamps, dtype=np.float64)
    if half_life <= 0:
        raise ValueError("half_life must be positive")
    age = timestamps.max() - timestamps
    return np.exp2(-age / half_life)


def _mean_of_positives(catalog: Catalog, user_id: str, fused: np.ndarray, half_life: float) -> np.ndarray:
    pos = catalog.positives(user_id)
    if not pos:
        return np.zeros(fused.shape[1])
    idx = np.array([catalog.video_index[ev.video_id] for ev in pos], dtype=np.intp)
    ts = np.array([ev.timestamp for ev in pos], dtype=np.float64)
    w = _decay_weights(ts, half_life)
    return (w @ fused[idx]) / w.sum()


def build_user_vector(user_id: str, catalog: Catalog, weights: FusionWeights,
                      half_life: float = math.inf) -> InterestVector:
    """Recency-weighted mean of the fused vectors of a user's positive videos.

    Each positive is weighted by ``2 ** (-(t_latest - t) / half_life)``;
    the default infinite half-life gives a plain mean. A user with no
    positive interactions gets the zero vector.
    """
    catalog.require_user(user_id)
    fused = fuse_matrix(weights, catalog)
    return InterestVector(user_id, _mean_of_positives(catalog, user_id, fused, half_life))


def user_matrix(catalog: Catalog, fused: np.ndarray, half_life: float = math.inf) -> np.ndarray:
    """(n_users, d) interest vectors in ``catalog.users`` order."""
    d = fused.shape[1] if fused.ndim == 2 else catalog.dim
    out = np.zeros((len(catalog.users), d))
    for i, u in enumerate(catalog.users):
        out[i] = _mean_of_positives(catalog, u, fused, half_life)
    return out


def _snap_cosines(c: np.ndarray) -> np.ndarray:
    # Round away float noise so mathematically equal cosines (a duplicate
    # of a liked video, parallel vectors) compare equal and fall to the id
    # tie-break instead of ordering by the last bit.
    return np.round(np.clip(c, -1.0, 1.0), COSINE_DECIMALS) + 0.0


def cosine_similarities(u: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Cosine of ``u`` against each row of ``V``; 0 wherever a norm is 0."""
    un = np.linalg.norm(u)
    vn = np.linalg.norm(V, axis=1)
    denom = un * vn
    dots = row_dots(V, u)
    out = np.zeros(len(V))
    np.divide(dots, denom, out=out, where=denom > 0)
    return _snap_cosines(out)


def _top_indices(keys: np.ndarray, tie_rank: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest ``keys``; ties go to the smaller ``tie_rank``.

    Partial selection: only the ``k`` winners are fully sorted.
    """
    n = len(keys)
    if k >= n:
        sel = np.arange(n)
    else:
        neg = -keys
        cut = np.partition(neg, k - 1)[k - 1]
        better = np.flatnonzero(neg < cut)
        tied = np.flatnonzero(neg == cut)
        tied = tied[np.argsort(tie_rank[tied], kind="stable")][: k - len(better)]
        sel = np.concatenate([better, tied])
    order = np.lexsort((tie_rank[sel], -keys[sel]))
    return sel[order]


def _id_ranks(ids: Sequence[str]) -> np.ndarray:
    order = sorted(range(len(ids)), key=ids.__getitem__)
    ranks = np.empty(len(ids), dtype=np.intp)
    ranks[order] = np.arange(len(ids))
    return ranks


def retrieve_candidates(u, catalog: Catalog, weights: FusionWeights, m: int,
                        exclude: Iterable[str] = (), fused: np.ndarray | None = None) -> list[str]:
    """The ``m`` videos most cosine-similar to ``u``, best first.

    Ties (including the all-zero cosines of a zero user vector) resolve by
    ascending video_id. Videos in ``exclude`` are never returned.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if fused is None:
        fused = fuse_matrix(weights, catalog)
    ids = catalog.video_ids
    keep = np.ones(len(ids), dtype=bool)
    for vid in exclude:
        i = catalog.video_index.get(vid)
        if i is not None:
            keep[i] = False
    pool = np.flatnonzero(keep)
    if len(pool) == 0:
        return []
    cos = cosine_similarities(_values(u), fused[pool])
    pool_ids = [ids[i] for i in pool]
    top = _top_indices(cos, _id_ranks(pool_ids), m)
    return [pool_ids[i] for i in top]


def rank_top_k(u, candidates: Iterable[str], catalog: Catalog, weights: FusionWeights, k: int,
               privatizer: Privatizer | None = None, fused: np.ndarray | None = None) -> RankedList:
    """Score candidates with the matching score and keep the best ``k``.

    If ``privatizer`` is given it receives ``(u, candidate_matrix, scores)``
    and returns the noisy scores that drive the ranking. Ties resolve by
    ascending video_id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    cand = sorted(set(candidates))
    if not cand:
        return RankedList()
    if fused is None:
        fused = fuse_matrix(weights, catalog)
    uvec = _values(u)
    idx = np.array([catalog.video_index[c] for c in cand], dtype=np.intp)
    V = fused[idx]
    if V.shape[1] != uvec.shape[0]:
        raise DataError(f"dimension mismatch: user {uvec.shape[0]} vs video {V.shape[1]}")
    scores = sigmoid(row_dots(V, uvec))
    if privatizer is not None:
        scores = np.asarray(privatizer(uvec, V, scores), dtype=np.float64)
    # cand is sorted, so position doubles as the id tie-break rank
    top = _top_indices(scores, np.arange(len(cand)), k)
    return RankedList(tuple(
        RankedEntry(cand[i], float(min(1.0, max(0.0, scores[i]))), float(scores[i]))
        for i in top
    ))


def recommend(user_id: str, catalog: Catalog, weights: FusionWeights, k: int, m: int = DEFAULT_CANDIDATES,
              privatizer: Privatizer | None = None, exclude_seen: bool = True,
              half_life: float = math.inf) -> RankedList:
    """Full two-stage pipeline for one user: retrieve ``m``, rank top ``k``."""
    fused = fuse_matrix(weights, catalog)
    catalog.require_user(user_id)
    u = _mean_of_positives(catalog, user_id, fused, half_life)
    exclude = catalog.positive_set(user_id) if exclude_seen else ()
    cands = retrieve_candidates(u, catalog, weights, m, exclude=exclude, fused=fused)
    return rank_top_k(u, cands, catalog, weights, k, privatizer=privatizer, fused=fused)

