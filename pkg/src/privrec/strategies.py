"""Content-based, collaborative, hybrid and group recommendation.

Every strategy returns a :class:`~privrec.scoring.RankedList` whose display
scores lie in [0, 1]; ranking ties are broken by ascending video_id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import DataError
from .feature_store import Catalog
from .fusion import FusionWeights, fuse_matrix
from .scoring import (
    InterestVector,
    RankedEntry,
    RankedList,
    _id_ranks,
    _mean_of_positives,
    _snap_cosines,
    _top_indices,
    row_dots,
    sigmoid,
)

CHAIN_THRESHOLD = 0.95


@dataclass(frozen=True)
class UserSimilarity:
    user_a: str
    user_b: str
    similarity: float


@dataclass(frozen=True)
class GroupProfile:
    member_ids: tuple[str, ...]
    fused_interest: InterestVector


def _unit_rows(F: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(F, axis=1, keepdims=True)
    out = np.zeros_like(F)
    np.divide(F, norms, out=out, where=norms > 0)
    return out


def _ranked(ids: Sequence[str], keys: np.ndarray, display: np.ndarray, k: int) -> RankedList:
    if len(ids) == 0:
        return RankedList()
    top = _top_indices(np.asarray(keys, dtype=np.float64), _id_ranks(ids), k)
    return RankedList(tuple(RankedEntry(ids[i], float(display[i]), float(keys[i])) for i in top))


# --------------------------------------------------------------------------
# content

def content_scores(user_id: str, catalog: Catalog, weights: FusionWeights) -> dict[str, float]:
    """Max cosine between each unliked video and any of the user's liked videos."""
    liked = catalog.positive_set(user_id)
    if not liked:
        return {}
    U = _unit_rows(fuse_matrix(weights, catalog))
    liked_idx = np.array(sorted(catalog.video_index[v] for v in liked), dtype=np.intp)
    best = _snap_cosines(row_dots(U[:, None, :], U[liked_idx][None, :, :]).max(axis=1))
    return {vid: float(best[i]) for i, vid in enumerate(catalog.video_ids) if vid not in liked}


def content_recommend(user_id: str, catalog: Catalog, weights: FusionWeights, k: int) -> RankedList:
    """Unliked videos ranked by their best cosine match to a liked video.

    Display score is the cosine mapped onto [0, 1] as ``(1 + cos) / 2``.
    """
    scores = content_scores(user_id, catalog, weights)
    ids = list(scores)
    cos = np.array([scores[v] for v in ids])
    return _ranked(ids, cos, (1.0 + cos) / 2.0, k)


# --------------------------------------------------------------------------
# collaborative filtering

def _jaccard(a: frozenset, b: frozenset) -> Fraction:
    if not a or not b:
        return Fraction(0)
    return Fraction(len(a & b), len(a | b))


def user_similarity(a: str, b: str, catalog: Catalog) -> float:
    """Jaccard similarity of two users' positive video sets (0 if either is empty)."""
    return float(_jaccard(catalog.positive_set(a), catalog.positive_set(b)))


def neighbors(user_id: str, catalog: Catalog, neighbor_count: int) -> list[UserSimilarity]:
    if neighbor_count < 1:
        raise ValueError("neighbor_count must be >= 1")
    mine = catalog.positive_set(user_id)
    sims = [
        (_jaccard(mine, catalog.positive_set(other)), other)
        for other in catalog.users if other != user_id
    ]
    sims.sort(key=lambda t: (-t[0], t[1]))
    return [UserSimilarity(user_id, o, s) for s, o in sims[:neighbor_count]]


def cf_votes(user_id: str, catalog: Catalog, neighbor_count: int = 10) -> tuple[dict[str, Fraction], Fraction]:
    """Similarity-weighted votes for every video the user has not interacted with.

    Votes are exact rationals, so equal votes compare equal and fall to the
    id tie-break. Returns ``(votes, total_similarity)``; only positive votes
    are kept.
    """
    seen = catalog.interacted_set(user_id)
    near = neighbors(user_id, catalog, neighbor_count)
    votes: dict[str, Fraction] = {}
    total = Fraction(0)
    for nb in near:
        if nb.similarity == 0:
            continue
        total += nb.similarity
        for vid in catalog.positive_set(nb.user_b):
            if vid not in seen:
                votes[vid] = votes.get(vid, Fraction(0)) + nb.similarity
    return votes, total


def cf_recommend(user_id: str, catalog: Catalog, k: int, neighbor_count: int = 10) -> RankedList:
    """User-based CF over Jaccard neighbours.

    Display score is the vote divided by the neighbours' total similarity.
    """
    votes, total = cf_votes(user_id, catalog, neighbor_count)
    if not votes:
        return RankedList()
    ranked = sorted(votes.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return RankedList(tuple(RankedEntry(v, float(s / total), float(s)) for v, s in ranked))


# --------------------------------------------------------------------------
# hybrid

def _minmax(x: np.ndarray) -> np.ndarray:
    if len(x) == 0:
        return x
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def hybrid_scores(user_id: str, catalog: Catalog, weights: FusionWeights, blend: float,
                  neighbor_count: int = 10) -> dict[str, float]:
    """Blend of min-max normalised CF votes and content cosines.

    A source with zero blend weight contributes no candidates, so ``blend=1``
    and ``blend=0`` reduce to the pure strategies.
    """
    if not 0.0 <= blend <= 1.0:
        raise ValueError(f"blend must lie in [0, 1], got {blend}")
    catalog.require_user(user_id)
    votes, _ = cf_votes(user_id, catalog, neighbor_count) if blend > 0 else ({}, None)
    content = content_scores(user_id, catalog, weights) if blend < 1 else {}
    ids = sorted(set(votes) | set(content))
    cf = _minmax(np.array([float(votes.get(v, 0)) for v in ids]))
    cb = _minmax(np.array([content.get(v, 0.0) for v in ids]))
    h = blend * cf + (1.0 - blend) * cb
    return dict(zip(ids, h.tolist()))


def hybrid_recommend(user_id: str, catalog: Catalog, weights: FusionWeights, k: int, blend: float = 0.5,
                     neighbor_count: int = 10, chain: bool = False,
                     chain_threshold: float = CHAIN_THRESHOLD) -> RankedList:
    """Hybrid CF + content ranking, optionally chaining content look-alikes.

    With ``chain`` on, every selected video is immediately followed by the
    not-yet-listed, unliked videos whose fused-vector cosine to it is at
    least ``chain_threshold`` (closest first). A chained video inherits its
    parent's score.
    """
    scores = hybrid_scores(user_id, catalog, weights, blend, neighbor_count)
    ids = list(scores)
    h = np.array([scores[v] for v in ids])
    if not chain:
        return _ranked(ids, h, h, k)

    full = _ranked(ids, h, h, len(ids))
    liked = catalog.positive_set(user_id)
    U = _unit_rows(fuse_matrix(weights, catalog))
    all_ids = catalog.video_ids
    out: list[RankedEntry] = []
    listed: set[str] = set()
    for entry in full:
        if len(out) >= k:
            break
        if entry.video_id in listed:
            continue
        out.append(entry)
        listed.add(entry.video_id)
        cos = _snap_cosines(row_dots(U, U[catalog.video_index[entry.video_id]]))
        kids = [
            (float(cos[i]), vid) for i, vid in enumerate(all_ids)
            if cos[i] >= chain_threshold and vid not in listed and vid not in liked
        ]
        for _, vid in sorted(kids, key=lambda t: (-t[0], t[1])):
            if len(out) >= k:
                break
            out.append(RankedEntry(vid, entry.score, entry.raw_score))
            listed.add(vid)
    return RankedList(tuple(out))


# --------------------------------------------------------------------------
# group

def build_group_profile(member_ids: Sequence[str], catalog: Catalog, weights: FusionWeights,
                        half_life: float = math.inf) -> GroupProfile:
    members = tuple(member_ids)
    if not members:
        raise DataError("group must have at least one member")
    if len(set(members)) != len(members):
        raise DataError(f"group members must be distinct: {members}")
    for m in members:
        catalog.require_user(m)
    F = fuse_matrix(weights, catalog)
    vecs = np.stack([_mean_of_positives(catalog, m, F, half_life) for m in members])
    return GroupProfile(members, InterestVector("+".join(members), vecs.mean(axis=0)))


def group_recommend(member_ids: Sequence[str], catalog: Catalog, weights: FusionWeights, k: int) -> RankedList:
    """Rank videos for a group by matching score against the mean member vector.

    Only videos that *every* member liked are excluded.
    """
    profile = build_group_profile(member_ids, catalog, weights)
    common = frozenset.intersection(*(catalog.positive_set(m) for m in profile.member_ids))
    F = fuse_matrix(weights, catalog)
    keep = [i for i, v in enumerate(catalog.video_ids) if v not in common]
    ids = [catalog.video_ids[i] for i in keep]
    s = sigmoid(row_dots(F[keep], profile.fused_interest.values)) if keep else np.zeros(0)
    return _ranked(ids, s, s, k)
