from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from privrec.evaluation import (
    LatencySummary,
    compare_mechanisms,
    holdout_split,
    precision_at_k,
    prepare,
    recall_at_k,
    reports_to_csv,
    run_sweep,
    trend_test,
)
from privrec.feature_store import make_catalog
from privrec.fusion import FusionWeights
from privrec.scoring import rank_top_k

W = FusionWeights.uniform()


class TestMetrics:
    def test_precision_examples(self):
        assert precision_at_k(["a", "b", "c"], {"a", "c", "d"}, 3) == pytest.approx(2 / 3)
        assert precision_at_k(["a", "b"], {"a", "b", "z"}, 2) == 1.0
        assert precision_at_k(["a", "b"], {"x"}, 2) == 0.0

    def test_recall_examples(self):
        assert recall_at_k(["a", "b", "c"], {"a", "c", "d", "e"}, 3) == 0.5
        assert recall_at_k(["q", "a"], {"a"}, 2) == 1.0
        assert recall_at_k(["a"], set(), 1) == 0.0

    def test_short_list_denominator(self):
        assert precision_at_k(["a"], {"a"}, 10) == 1.0
        assert precision_at_k([], {"a"}, 10) == 0.0

    def test_bad_k(self):
        with pytest.raises(ValueError):
            precision_at_k(["a"], {"a"}, 0)

    @settings(max_examples=300)
    @given(st.lists(st.sampled_from("abcdefgh"), unique=True, max_size=8),
           st.sets(st.sampled_from("abcdefghij")), st.integers(1, 10))
    def test_against_enumeration(self, rec, rel, k):
        assert precision_at_k(rec, rel, k) == oracles.precision(rec, rel, k)
        assert recall_at_k(rec, rel, k) == oracles.recall(rec, rel, k)
        assert 0.0 <= precision_at_k(rec, rel, k) <= 1.0


class TestHoldout:
    def _catalog(self, n_pos, user="u"):
        vids = [(f"v{i:02d}", [1.0], [1.0], [1.0]) for i in range(max(n_pos, 1))]
        return make_catalog(vids, [(user, f"v{i:02d}", "like", i + 1) for i in range(n_pos)])

    def test_last_three_of_ten(self):
        train, rel = holdout_split(self._catalog(10), 0.3)
        assert rel["u"] == {"v07", "v08", "v09"}
        assert train.positive_set("u") == {f"v{i:02d}" for i in range(7)}

    def test_single_positive_excluded(self):
        train, rel = holdout_split(self._catalog(1), 0.3)
        assert "u" not in rel
        assert train.counts == self._catalog(1).counts

    def test_keeps_one_training_positive(self):
        _, rel = holdout_split(self._catalog(2), 0.9)
        assert len(rel["u"]) == 1

    def test_negatives_untouched(self):
        cat = make_catalog([("a", [1.0], [1.0], [1.0]), ("b", [1.0], [1.0], [1.0]), ("c", [1.0], [1.0], [1.0])],
                           [("u", "a", "like", 1), ("u", "b", "like", 2), ("u", "c", "click", 3, 0)])
        train, rel = holdout_split(cat, 0.3)
        assert rel["u"] == {"b"}
        assert len(train.interactions) == 2

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            holdout_split(self._catalog(3), 1.0)


class TestSweep:
    def test_zero_noise_equals_non_private(self, small_synth):
        prep = prepare(small_synth, W, m=40)
        plain = run_sweep(small_synth, [1.0], trials=1, mechanism="none", prepared=prep)[0]
        huge = run_sweep(small_synth, [1e12], trials=2, mechanism="uniform", prepared=prep)[0]
        assert huge.precision_at_k == plain.precision_at_k
        assert huge.recall_at_k == plain.recall_at_k

    def test_non_private_matches_manual_pipeline(self, small_synth):
        prep = prepare(small_synth, W, m=40)
        rep = run_sweep(small_synth, [1.0], trials=1, mechanism="none", prepared=prep)[0]
        ps = []
        for vec, cands, rel in zip(prep.vectors, prep.candidates, prep.relevant):
            ranked = rank_top_k(vec, cands, prep.train, W, 10)
            ps.append(oracles.precision(ranked.video_ids, rel, 10))
        assert rep.precision_at_k == pytest.approx(np.mean(ps), abs=1e-15)

    def test_same_seed_identical(self, small_synth):
        a = run_sweep(small_synth, [0.5, 2.0], trials=3, mechanism="adaptive", seed=4, m=40)
        b = run_sweep(small_synth, [0.5, 2.0], trials=3, mechanism="adaptive", seed=4, m=40)
        assert [r.deterministic_dict() for r in a] == [r.deterministic_dict() for r in b]
        assert reports_to_csv(a) == reports_to_csv(b)

    def test_threads_match_serial(self, small_synth):
        a = run_sweep(small_synth, [1.0], trials=4, seed=1, m=40)
        b = run_sweep(small_synth, [1.0], trials=4, seed=1, m=40, jobs=3)
        assert a[0].deterministic_dict() == b[0].deterministic_dict()

    def test_privacy_accounting(self, small_synth):
        rep = run_sweep(small_synth, [0.1, 0.3], trials=7, seed=0, m=40)
        for r in rep:
            assert r.ledger_total == r.trials * r.per_pass_charge
            assert r.per_pass_charge == r.users * Fraction(str(r.epsilon))
            assert r.privacy_loss == pytest.approx(r.trials * r.users * r.epsilon)

    def test_latency_summary(self, small_synth):
        r = run_sweep(small_synth, [1.0], trials=2, m=40)[0]
        assert 0 <= r.latency_ms.p50 <= r.latency_ms.p95
        assert LatencySummary.of([]) == LatencySummary(0.0, 0.0, 0.0)

    def test_single_row_csv(self, small_synth):
        csv_text = reports_to_csv(run_sweep(small_synth, [1.0], trials=1, m=40))
        assert len(csv_text.strip().splitlines()) == 2

    def test_bad_arguments(self, small_synth):
        with pytest.raises(ValueError):
            run_sweep(small_synth, [], m=40)
        with pytest.raises(ValueError):
            run_sweep(small_synth, [1.0], mechanism="gaussian", m=40)
        with pytest.raises(ValueError):
            run_sweep(small_synth, [1.0], trials=0, m=40)


class TestAnalysis:
    def test_trend_and_comparison_shapes(self, small_synth):
        prep = prepare(small_synth, W, m=40)
        uni = run_sweep(small_synth, [0.1, 10.0], trials=5, prepared=prep)
        ada = run_sweep(small_synth, [0.1, 10.0], trials=5, mechanism="adaptive", prepared=prep)
        t = trend_test(uni)
        assert -1.0 <= t.spearman_rho <= 1.0 and 0.0 <= t.p_value <= 1.0
        rows = compare_mechanisms(uni, ada)
        assert [r.epsilon for r in rows] == [0.1, 10.0]
        for r, u, a in zip(rows, uni, ada):
            assert r.mean_difference == pytest.approx(a.precision_at_k - u.precision_at_k)

    def test_trend_detects_planted_increase(self):
        from privrec.evaluation import EvalReport

        reps = [EvalReport(e, "uniform", p, p, 0.0, LatencySummary(0, 0, 0), 3, 10, 1,
                           trial_precision=(p - 0.01, p, p + 0.01), trial_recall=(p,) * 3)
                for e, p in zip([0.1, 1, 5], [0.1, 0.2, 0.3])]
        t = trend_test(reps)
        assert t.non_decreasing and t.p_value < 0.01
        flipped = trend_test(reps[::-1], "recall")
        assert flipped.non_decreasing
