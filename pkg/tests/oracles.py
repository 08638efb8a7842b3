"""Brute-force reference implementations in plain Python.

Each oracle enumerates its formula directly over lists and floats (or exact
fractions) without touching the numpy code paths under test.
"""

import math
from fractions import Fraction


def fused(cat, w, vid):
    v = cat.video(vid)
    return [w.alpha * a + w.beta * b + w.gamma * c
            for a, b, c in zip(v.visual.tolist(), v.text.tolist(), v.audio.tolist())]


def fused_all(cat, w):
    return {vid: fused(cat, w, vid) for vid in cat.video_ids}


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def cosine(a, b):
    na, nb = math.sqrt(dot(a, a)), math.sqrt(dot(b, b))
    if na == 0 or nb == 0:
        return 0.0
    # similarities are compared at 12 decimals
    return round(max(-1.0, min(1.0, dot(a, b) / (na * nb))), 12)


def positives(cat, user):
    return {e.video_id for e in cat.interactions if e.user_id == user and e.label}


def interacted(cat, user):
    return {e.video_id for e in cat.interactions if e.user_id == user}


def user_vector(cat, w, user, F=None):
    F = F or fused_all(cat, w)
    vids = [e.video_id for e in cat.interactions if e.user_id == user and e.label]
    if not vids:
        return [0.0] * cat.dim
    vecs = [F[v] for v in vids]
    return [sum(col) / len(vecs) for col in zip(*vecs)]


def ranked(scores: dict, k):
    return sorted(scores, key=lambda v: (-scores[v], v))[:k]


def content(cat, w, user, k):
    liked = positives(cat, user)
    if not liked:
        return []
    F = fused_all(cat, w)
    scores = {v: max(cosine(F[v], F[l]) for l in liked) for v in cat.video_ids if v not in liked}
    return ranked(scores, k)


def jaccard(a, b):
    if not a or not b:
        return Fraction(0)
    return Fraction(len(a & b), len(a | b))


def cf_votes(cat, user, neighbor_count):
    mine = positives(cat, user)
    sims = sorted(((jaccard(mine, positives(cat, o)), o) for o in cat.users if o != user),
                  key=lambda t: (-t[0], t[1]))[:neighbor_count]
    seen = interacted(cat, user)
    votes = {}
    for s, o in sims:
        if s == 0:
            continue
        for v in positives(cat, o):
            if v not in seen:
                votes[v] = votes.get(v, Fraction(0)) + s
    return votes


def cf(cat, user, k, neighbor_count=10):
    return ranked(cf_votes(cat, user, neighbor_count), k)


def _minmax(xs):
    lo, hi = min(xs), max(xs)
    if hi == lo:
        return [0.0] * len(xs)
    return [(x - lo) / (hi - lo) for x in xs]


def hybrid(cat, w, user, k, blend, neighbor_count=10):
    votes = cf_votes(cat, user, neighbor_count) if blend > 0 else {}
    liked = positives(cat, user)
    cb = {}
    if blend < 1 and liked:
        F = fused_all(cat, w)
        cb = {v: max(cosine(F[v], F[l]) for l in liked) for v in cat.video_ids if v not in liked}
    ids = sorted(set(votes) | set(cb))
    if not ids:
        return []
    cf_n = _minmax([float(votes.get(v, 0)) for v in ids])
    cb_n = _minmax([cb.get(v, 0.0) for v in ids])
    h = {v: blend * a + (1 - blend) * b for v, a, b in zip(ids, cf_n, cb_n)}
    return ranked(h, k)


def group(cat, w, members, k):
    F = fused_all(cat, w)
    vecs = [user_vector(cat, w, m, F) for m in members]
    g = [sum(col) / len(vecs) for col in zip(*vecs)]
    common = set.intersection(*(positives(cat, m) for m in members))
    scores = {v: dot(g, F[v]) for v in cat.video_ids if v not in common}
    return ranked(scores, k)


def rank_top_k(u, candidates, cat, w, k):
    F = fused_all(cat, w)
    scores = {v: sigmoid(dot(u, F[v])) for v in set(candidates)}
    return ranked(scores, k)


def precision(recommended, relevant, k):
    top = recommended[:k]
    if not top:
        return 0.0
    return sum(1 for v in top if v in relevant) / len(top)


def recall(recommended, relevant, k):
    if not relevant:
        return 0.0
    return sum(1 for v in recommended[:k] if v in relevant) / len(relevant)
