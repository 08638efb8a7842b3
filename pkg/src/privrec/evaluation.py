"""Precision/Recall@K, temporal hold-out, and the privacy-budget sweep."""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from ._rng import make_rng
from .dp_noise import NoiseConfig, PrivacyLedger, exact_rational, make_privatizer
from .feature_store import Catalog
from .fusion import FusionWeights, fuse_matrix
from .scoring import DEFAULT_CANDIDATES, _mean_of_positives, rank_top_k, retrieve_candidates

MECHANISMS = ("none", "uniform", "adaptive")


def _ids(recommended) -> list[str]:
    if hasattr(recommended, "video_ids"):
        return list(recommended.video_ids)
    return list(recommended)


def precision_at_k(recommended, relevant: Iterable[str], k: int) -> float:
    """Hits in the top ``k`` over ``min(k, len(recommended))``; 0 for an empty list."""
    if k < 1:
        raise ValueError("k must be >= 1")
    top = _ids(recommended)[:k]
    if not top:
        return 0.0
    rel = set(relevant)
    return sum(1 for v in top if v in rel) / len(top)


def recall_at_k(recommended, relevant: Iterable[str], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    rel = set(relevant)
    if not rel:
        return 0.0
    return sum(1 for v in _ids(recommended)[:k] if v in rel) / len(rel)


def holdout_split(catalog: Catalog, fraction: float = 0.3, seed: int = 0) -> tuple[Catalog, dict[str, frozenset[str]]]:
    """Hold out each user's latest positives as the relevant set.

    A user with ``n >= 2`` positives loses ``round_half_up(fraction * n)``
    of them (at least 1, at most ``n - 1``) to the relevant set; users with
    fewer than two positives stay in the training catalog but are not
    evaluated. ``seed`` only orders positives that share a timestamp.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    rng = make_rng(seed)
    tiebreak = rng.random(len(catalog.interactions))
    by_user: dict[str, list[int]] = {}
    for i, ev in enumerate(catalog.interactions):
        if ev.label:
            by_user.setdefault(ev.user_id, []).append(i)

    held: set[int] = set()
    relevant: dict[str, frozenset[str]] = {}
    for user in catalog.users:
        idx = by_user.get(user, [])
        n = len(idx)
        if n < 2:
            continue
        n_hold = min(n - 1, max(1, int(math.floor(fraction * n + 0.5))))
        idx = sorted(idx, key=lambda i: (catalog.interactions[i].timestamp, tiebreak[i]))
        out = idx[n - n_hold:]
        held.update(out)
        relevant[user] = frozenset(catalog.interactions[i].video_id for i in out)

    train = catalog.replace_interactions(ev for i, ev in enumerate(catalog.interactions) if i not in held)
    return train, relevant


@dataclass(frozen=True)
class LatencySummary:
    mean: float
    p50: float
    p95: float

    @classmethod
    def of(cls, samples_ms: Sequence[float]) -> "LatencySummary":
        a = np.asarray(samples_ms, dtype=np.float64)
        if len(a) == 0:
            return cls(0.0, 0.0, 0.0)
        p50, p95 = np.percentile(a, [50, 95])
        return cls(float(a.mean()), float(p50), float(p95))


@dataclass(frozen=True)
class EvalReport:
    epsilon: float
    mechanism: str
    precision_at_k: float
    recall_at_k: float
    privacy_loss: float
    latency_ms: LatencySummary
    trials: int
    k: int
    users: int
    per_pass_charge: Fraction = Fraction(0)
    ledger_total: Fraction = Fraction(0)
    trial_precision: tuple[float, ...] = field(default=(), repr=False)
    trial_recall: tuple[float, ...] = field(default=(), repr=False)

    def deterministic_dict(self) -> dict:
        """Everything except wall-clock timing."""
        d = asdict(self)
        d.pop("latency_ms")
        return d


@dataclass
class _Prepared:
    users: list[str]
    vectors: list[np.ndarray]
    candidates: list[list[str]]
    relevant: list[frozenset[str]]
    train: Catalog
    fused: np.ndarray
    weights: FusionWeights


def prepare(catalog: Catalog, weights: FusionWeights | None = None, m: int = DEFAULT_CANDIDATES,
            holdout_fraction: float = 0.3, seed: int = 0, half_life: float = math.inf) -> _Prepared:
    """Hold-out split plus the non-private retrieval stage for every evaluated user."""
    weights = weights or FusionWeights.uniform()
    train, relevant = holdout_split(catalog, holdout_fraction, seed)
    fused = fuse_matrix(weights, train)
    users = sorted(relevant)
    vectors, cands = [], []
    for u in users:
        vec = _mean_of_positives(train, u, fused, half_life)
        vectors.append(vec)
        cands.append(retrieve_candidates(vec, train, weights, m, exclude=train.positive_set(u), fused=fused))
    return _Prepared(users, vectors, cands, [relevant[u] for u in users], train, fused, weights)


def _run_trial(prep: _Prepared, trial: int, seed: int, k: int, mechanism: str,
               config: NoiseConfig | None, ledger: PrivacyLedger | None):
    # same stream for a given (seed, trial) whatever the epsilon or mechanism
    rng = make_rng(seed, trial)
    priv = make_privatizer(mechanism, config, rng, ledger) if mechanism != "none" else None
    precisions, recalls, latencies = [], [], []
    for vec, cands, rel in zip(prep.vectors, prep.candidates, prep.relevant):
        t0 = time.perf_counter()
        ranked = rank_top_k(vec, cands, prep.train, prep.weights, k, privatizer=priv, fused=prep.fused)
        latencies.append((time.perf_counter() - t0) * 1e3)
        precisions.append(precision_at_k(ranked, rel, k))
        recalls.append(recall_at_k(ranked, rel, k))
    return float(np.mean(precisions)), float(np.mean(recalls)), latencies


def run_sweep(catalog: Catalog, epsilon_grid: Sequence[float], k: int = 10, trials: int = 10,
              mechanism: str = "uniform", seed: int = 0, *, weights: FusionWeights | None = None,
              m: int = DEFAULT_CANDIDATES, holdout_fraction: float = 0.3, sensitivity: float = 1.0,
              omega_floor: float = 0.01, budget: float | None = None, jobs: int = 1,
              prepared: _Prepared | None = None) -> list[EvalReport]:
    """Evaluate one mechanism over a grid of privacy budgets.

    Every trial re-runs the ranking stage for all evaluated users with a
    fresh noise stream keyed by ``(seed, trial)``; retrieval and the
    hold-out split are shared. Each privatized list charges ``epsilon`` to
    a per-epsilon ledger, so ``privacy_loss == trials * users * epsilon``.
    Results are deterministic given ``seed`` apart from ``latency_ms``.
    """
    if not epsilon_grid:
        raise ValueError("epsilon_grid must be non-empty")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if mechanism not in MECHANISMS:
        raise ValueError(f"mechanism must be one of {MECHANISMS}, got {mechanism!r}")
    prep = prepared or prepare(catalog, weights, m, holdout_fraction, seed)

    reports = []
    for eps in epsilon_grid:
        config = NoiseConfig(sensitivity, float(eps), omega_floor) if mechanism != "none" else None
        ledger = PrivacyLedger(budget) if mechanism != "none" else None

        def one(t, _c=config, _l=ledger):
            return _run_trial(prep, t, seed, k, mechanism, _c, _l)

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(one, range(trials)))
        else:
            results = [one(t) for t in range(trials)]

        lat = [x for r in results for x in r[2]]
        tp = tuple(r[0] for r in results)
        tr = tuple(r[1] for r in results)
        charge = len(prep.users) * exact_rational(eps) if ledger else Fraction(0)
        reports.append(EvalReport(
            epsilon=float(eps), mechanism=mechanism,
            precision_at_k=float(np.mean(tp)), recall_at_k=float(np.mean(tr)),
            privacy_loss=ledger.consumed if ledger else 0.0,
            latency_ms=LatencySummary.of(lat), trials=trials, k=k, users=len(prep.users),
            per_pass_charge=charge, ledger_total=ledger.consumed_exact if ledger else Fraction(0),
            trial_precision=tp, trial_recall=tr,
        ))
    return reports


# --------------------------------------------------------------------------
# analysis and output

@dataclass(frozen=True)
class TrendTest:
    metric: str
    spearman_rho: float
    p_value: float
    non_decreasing: bool


def trend_test(reports: Sequence[EvalReport], metric: str = "precision") -> TrendTest:
    """Spearman correlation of epsilon with per-trial metric values (one-sided, rho > 0)."""
    attr = "trial_precision" if metric == "precision" else "trial_recall"
    mean_attr = "precision_at_k" if metric == "precision" else "recall_at_k"
    xs = [r.epsilon for r in reports for _ in getattr(r, attr)]
    ys = [v for r in reports for v in getattr(r, attr)]
    res = stats.spearmanr(xs, ys, alternative="greater")
    ordered = sorted(reports, key=lambda r: r.epsilon)
    means = [getattr(r, mean_attr) for r in ordered]
    return TrendTest(metric, float(res.statistic), float(res.pvalue),
                     all(b >= a for a, b in zip(means, means[1:])))


@dataclass(frozen=True)
class MechanismComparison:
    epsilon: float
    uniform_precision: float
    adaptive_precision: float
    mean_difference: float
    t_statistic: float
    p_value: float

    @property
    def adaptive_not_worse(self) -> bool:
        return self.adaptive_precision >= self.uniform_precision


def compare_mechanisms(uniform: Sequence[EvalReport], adaptive: Sequence[EvalReport]) -> list[MechanismComparison]:
    """Paired one-sided t-test (adaptive > uniform) on shared-seed trials, per epsilon."""
    by_eps = {r.epsilon: r for r in uniform}
    rows = []
    for a in adaptive:
        u = by_eps.get(a.epsilon)
        if u is None:
            continue
        diff = np.subtract(a.trial_precision, u.trial_precision)
        if len(diff) > 1 and np.any(diff != diff[0]):
            res = stats.ttest_rel(a.trial_precision, u.trial_precision, alternative="greater")
            t, p = float(res.statistic), float(res.pvalue)
        else:
            t, p = math.nan, math.nan
        rows.append(MechanismComparison(a.epsilon, u.precision_at_k, a.precision_at_k,
                                        float(diff.mean()), t, p))
    return rows


def _csv(rows: list[list]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _num(x: float) -> str:
    return repr(float(x))


def reports_to_csv(reports: Sequence[EvalReport]) -> str:
    rows = [["mechanism", "epsilon", "k", "trials", "users", "precision_at_k", "recall_at_k", "privacy_loss"]]
    for r in reports:
        rows.append([r.mechanism, _num(r.epsilon), r.k, r.trials, r.users,
                     _num(r.precision_at_k), _num(r.recall_at_k), _num(r.privacy_loss)])
    return _csv(rows)


def timing_to_csv(reports: Sequence[EvalReport]) -> str:
    rows = [["mechanism", "epsilon", "latency_mean_ms", "latency_p50_ms", "latency_p95_ms"]]
    for r in reports:
        rows.append([r.mechanism, _num(r.epsilon), f"{r.latency_ms.mean:.6f}",
                     f"{r.latency_ms.p50:.6f}", f"{r.latency_ms.p95:.6f}"])
    return _csv(rows)


def reports_to_long(reports: Sequence[EvalReport]) -> str:
    """Long-format plot data: one row per (mechanism, epsilon, metric)."""
    rows = [["mechanism", "epsilon", "metric", "value"]]
    for r in reports:
        for name, value in (("precision_at_k", r.precision_at_k), ("recall_at_k", r.recall_at_k),
                            ("privacy_loss", r.privacy_loss)):
            rows.append([r.mechanism, _num(r.epsilon), name, _num(value)])
    return _csv(rows)


def comparison_to_csv(rows: Sequence[MechanismComparison]) -> str:
    out = [["epsilon", "uniform_precision", "adaptive_precision", "mean_difference", "t_statistic",
            "p_value_one_sided", "adaptive_not_worse"]]
    for c in rows:
        out.append([_num(c.epsilon), _num(c.uniform_precision), _num(c.adaptive_precision),
                    _num(c.mean_difference), _num(c.t_statistic), _num(c.p_value), int(c.adaptive_not_worse)])
    return _csv(out)
