from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_catalog
from privrec.errors import DataError, UnknownEntityError
from privrec.feature_store import make_catalog
from privrec.fusion import FusionWeights, fuse
from privrec.scoring import (
    InterestVector,
    RankedEntry,
    RankedList,
    build_user_vector,
    match_score,
    rank_top_k,
    recommend,
    retrieve_candidates,
)

W = FusionWeights.uniform()


def _same(vid, x):
    return (vid, x, x, x)


def _hp_sigmoid(z: int) -> float:
    getcontext().prec = 50
    return float(1 / (1 + Decimal(-z).exp()))


class TestUserVector:
    def test_single_positive_is_fused_video(self):
        cat = make_catalog([("a", [1, 2], [3, 4], [5, 6]), _same("b", [0, 1])], [("u", "a", "like", 5)])
        w = FusionWeights(0.5, 0.3, 0.2)
        assert np.allclose(build_user_vector("u", cat, w).values, fuse(w, cat.video("a")).values)

    def test_no_positives_is_zero(self):
        cat = make_catalog([_same("a", [1, 2])], [("u", "a", "click", 5, 0)])
        assert np.array_equal(build_user_vector("u", cat, W).values, [0, 0])

    def test_equal_timestamp_mean(self):
        cat = make_catalog([_same("a", [1, 0]), _same("b", [0, 1])],
                           [("u", "a", "like", 7), ("u", "b", "like", 7)])
        assert np.allclose(build_user_vector("u", cat, W).values, [0.5, 0.5])

    def test_recency_half_life(self):
        # newest gets weight 1, an event one half-life older gets weight 1/2
        cat = make_catalog([_same("a", [1, 0]), _same("b", [0, 1])],
                           [("u", "a", "like", 0), ("u", "b", "like", 10)])
        got = build_user_vector("u", cat, W, half_life=10).values
        assert np.allclose(got, np.array([0.5, 1.0]) / 1.5)

    def test_unknown_user(self, tiny_catalog):
        with pytest.raises(UnknownEntityError):
            build_user_vector("nobody", tiny_catalog, W)

    def test_rejects_non_finite(self):
        with pytest.raises(DataError):
            InterestVector("u", np.array([np.nan, 0.0]))


class TestMatchScore:
    def test_orthogonal(self):
        assert match_score([1, 0], [0, 1]) == 0.5

    def test_sigma_one(self):
        assert match_score([1, 0], [1, 0]) == pytest.approx(_hp_sigmoid(1), abs=1e-15)
        assert match_score([1, 0], [1, 0]) == pytest.approx(0.7310585786, abs=1e-10)

    def test_zero_user(self):
        assert match_score([0, 0, 0], [5, -3, 2]) == 0.5

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_extreme_inputs_stay_in_range(self):
        assert 0.0 <= match_score([1e300], [1e300]) <= 1.0
        assert 0.0 <= match_score([-1e300], [1e300]) <= 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            match_score([1, 0], [1, 0, 0])

    @settings(max_examples=200)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=6), st.floats(0.01, 100))
    def test_scaling_user_preserves_order(self, u, c):
        rng = np.random.default_rng(len(u))
        V = rng.standard_normal((5, len(u)))
        a = np.array([match_score(u, v) for v in V])
        b = np.array([match_score(np.array(u) * c, v) for v in V])
        for i in range(5):
            for j in range(5):
                if a[i] != a[j] and b[i] != b[j]:
                    assert np.sign(a[i] - a[j]) == np.sign(b[i] - b[j])


class TestRetrieve:
    @pytest.fixture
    def three(self):
        return make_catalog([_same("a", [1, 0]), _same("b", [0, 1]), _same("c", [-1, 0])])

    def test_m_at_least_catalog(self, three):
        assert sorted(retrieve_candidates([0.3, 0.2], three, W, 10)) == ["a", "b", "c"]

    def test_nearest_by_cosine(self, three):
        assert retrieve_candidates([1, 0], three, W, 1) == ["a"]

    def test_zero_user_takes_first_ids(self, three):
        assert retrieve_candidates([0, 0], three, W, 2) == ["a", "b"]

    def test_exclude(self, three):
        assert retrieve_candidates([1, 0], three, W, 1, exclude={"a"}) == ["b"]

    def test_independent_of_catalog_order(self, small_synth):
        u = build_user_vector(small_synth.users[0], small_synth, W)
        shuffled = make_catalog(
            [(v.video_id, v.visual, v.text, v.audio) for v in reversed(small_synth.videos)])
        a = retrieve_candidates(u, small_synth, W, 17)
        b = retrieve_candidates(u, shuffled, W, 17)
        assert a == b

    def test_matches_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            cat = random_catalog(rng, int(rng.integers(1, 20)), 0, dim=2)
            u = rng.standard_normal(2).round(1)
            m = int(rng.integers(1, 25))

            def cos(vid):
                v = cat.video(vid).visual
                nu, nv = np.linalg.norm(u), np.linalg.norm(v)
                return 0.0 if nu == 0 or nv == 0 else float(u @ v / (nu * nv))

            expected = sorted(cat.video_ids, key=lambda vid: (-cos(vid), vid))[:m]
            got = retrieve_candidates(u, cat, W, m)
            assert [round(cos(v), 12) for v in got] == [round(cos(v), 12) for v in expected]


class _Fixed:
    """Privatizer stub that replaces scores with predetermined values."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def __call__(self, u, V, scores):
        return self.values.copy()


class TestRankTopK:
    def test_full_sorted_list(self, tiny_catalog):
        ranked = rank_top_k([1, 0], ["v3", "v1", "v2"], tiny_catalog, W, 10)
        assert ranked.video_ids == ["v1", "v2", "v3"]
        assert ranked.scores == sorted(ranked.scores, reverse=True)

    def test_top_two_of_five(self):
        xs = [0.1, 0.9, -0.4, 0.5, 0.3]
        cat = make_catalog([_same(f"v{i}", [x]) for i, x in enumerate(xs)])
        got = rank_top_k([1.0], cat.video_ids, cat, W, 2)
        naive = sorted(cat.video_ids, key=lambda v: -match_score([1.0], cat.video(v).visual))[:2]
        assert got.video_ids == naive == ["v1", "v3"]

    def test_zero_noise_privatizer(self, small_synth):
        from privrec.dp_noise import NoiseConfig, UniformPrivatizer
        from privrec._rng import make_rng

        u = build_user_vector(small_synth.users[1], small_synth, W)
        cands = retrieve_candidates(u, small_synth, W, 40)
        plain = rank_top_k(u, cands, small_synth, W, 10)
        noisy = rank_top_k(u, cands, small_synth, W, 10,
                           privatizer=UniformPrivatizer(NoiseConfig(epsilon=1e12), make_rng(0)))
        assert plain.video_ids == noisy.video_ids

    def test_empty_candidates(self, tiny_catalog):
        assert len(rank_top_k([1, 0], [], tiny_catalog, W, 3)) == 0

    def test_clamped_display_keeps_raw(self, tiny_catalog):
        ranked = rank_top_k([1, 0], ["v1", "v2", "v3"], tiny_catalog, W, 3, privatizer=_Fixed([2.5, -1.0, 0.3]))
        first, second, third = ranked.entries
        assert (first.video_id, first.score, first.raw_score) == ("v1", 1.0, 2.5)
        assert (third.video_id, third.score, third.raw_score) == ("v2", 0.0, -1.0)
        assert second.video_id == "v3"

    def test_selection_equals_sort_then_truncate(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            n = int(rng.integers(1, 51))
            cat = make_catalog([_same(f"c{i:02d}", [0.0]) for i in range(n)])
            ids = list(cat.video_ids)
            rng.shuffle(ids)
            # few distinct values so ties are common
            keys = rng.integers(0, 5, size=n).astype(float)
            k = int(rng.integers(1, 60))
            ranked = rank_top_k([1.0], ids, cat, W, k, privatizer=_Fixed(keys))
            sorted_ids = sorted(set(ids))
            by_id = dict(zip(sorted_ids, keys))
            oracle = sorted(sorted_ids, key=lambda v: (-by_id[v], v))[:k]
            assert ranked.video_ids == oracle

    def test_deterministic(self, small_synth):
        u = build_user_vector(small_synth.users[2], small_synth, W)
        cands = retrieve_candidates(u, small_synth, W, 30)
        assert rank_top_k(u, cands, small_synth, W, 10) == rank_top_k(u, list(reversed(cands)), small_synth, W, 10)


class TestRankedList:
    def test_csv(self):
        rl = RankedList((RankedEntry("a", 0.75, 0.75), RankedEntry("b", 0.5, 0.5)))
        assert rl.to_csv() == "rank,video_id,score\n1,a,0.750000\n2,b,0.500000\n"

    def test_recommend_excludes_seen(self, small_synth):
        user = small_synth.users[0]
        ranked = recommend(user, small_synth, W, 10, m=50)
        assert len(ranked) == 10
        assert not set(ranked.video_ids) & small_synth.positive_set(user)
        assert all(0 <= s <= 1 for s in ranked.scores)
