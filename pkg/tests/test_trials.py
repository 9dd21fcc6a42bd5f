import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scalevit.errors import (
    BadKError,
    NonFiniteError,
    OutOfRangeError,
    TooFewItemsError,
)
from scalevit.trials import (
    FoldMode,
    Labels,
    Quadrant,
    Trial,
    make_folds,
    quadrant_from_ratings,
    zscore_normalize,
)

finite_floats = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False,
                          allow_infinity=False)


def _trial(pid, vid=1, n_channels=2, n_samples=16):
    rng = np.random.default_rng(pid * 100 + vid)
    return Trial(participant_id=pid, video_id=vid,
                 samples=rng.normal(size=(n_channels, n_samples)),
                 channel_names=tuple(f"ch{i}" for i in range(n_channels)))


class TestZscore:
    def test_three_point_example(self):
        np.testing.assert_allclose(zscore_normalize([1, 2, 3]),
                                   [-1.224745, 0.0, 1.224745], atol=1e-6)

    def test_constant_input_maps_to_zeros(self):
        np.testing.assert_array_equal(zscore_normalize([5, 5, 5, 5]), [0, 0, 0, 0])

    def test_step_example(self):
        np.testing.assert_allclose(zscore_normalize([0, 0, 1, 1]), [-1, -1, 1, 1],
                                   atol=1e-12)

    def test_output_moments(self):
        rng = np.random.default_rng(1)
        z = zscore_normalize(rng.normal(3.0, 7.0, size=501))
        assert abs(z.mean()) < 1e-9
        assert abs(z.std() - 1.0) < 1e-9

    def test_nonfinite_rejected(self):
        with pytest.raises(NonFiniteError):
            zscore_normalize([1.0, np.nan, 2.0])
        with pytest.raises(NonFiniteError):
            zscore_normalize([1.0, np.inf, 2.0])

    def test_too_short(self):
        with pytest.raises(ValueError):
            zscore_normalize([1.0])

    @given(st.lists(finite_floats, min_size=2, max_size=64))
    @settings(max_examples=200)
    def test_idempotent(self, values):
        once = zscore_normalize(values)
        twice = zscore_normalize(once)
        np.testing.assert_allclose(twice, once, atol=1e-9)


class TestQuadrantFromRatings:
    @pytest.mark.parametrize("valence,arousal,expected", [
        (7, 7, Quadrant.Q1),
        (3, 7, Quadrant.Q2),
        (5, 5, Quadrant.Q3),   # boundary is low/low: "high" is strictly > 5
        (3, 3, Quadrant.Q3),
        (7, 3, Quadrant.Q4),
        (5.0001, 5.0001, Quadrant.Q1),
    ])
    def test_mapping(self, valence, arousal, expected):
        assert quadrant_from_ratings(valence, arousal) is expected

    def test_out_of_range(self):
        with pytest.raises(OutOfRangeError):
            quadrant_from_ratings(0.5, 5)
        with pytest.raises(OutOfRangeError):
            quadrant_from_ratings(5, 9.5)
        with pytest.raises(OutOfRangeError):
            quadrant_from_ratings(np.nan, 5)

    def test_codes_fixed(self):
        assert [int(q) for q in (Quadrant.Q1, Quadrant.Q2, Quadrant.Q3, Quadrant.Q4)] \
            == [0, 1, 2, 3]

    @given(st.floats(min_value=1, max_value=9), st.floats(min_value=1, max_value=9))
    @settings(max_examples=200)
    def test_invariant_under_monotone_transform(self, v, a):
        # stretch values away from the threshold point; the quadrant must not move
        def stretch(x):
            return 5.0 + np.sign(x - 5.0) * min(4.0, 2.0 * abs(x - 5.0))

        assert quadrant_from_ratings(v, a) is quadrant_from_ratings(stretch(v), stretch(a))


class TestLabels:
    def test_sam_range_enforced(self):
        with pytest.raises(OutOfRangeError):
            Labels(vaq_quadrant=Quadrant.Q1, sam_valence=0.0, sam_arousal=5.0)
        Labels(vaq_quadrant=Quadrant.Q1, sam_valence=1.0, sam_arousal=9.0)


class TestTrial:
    def test_invariants(self):
        with pytest.raises(NonFiniteError):
            Trial(participant_id=1, video_id=1,
                  samples=np.array([[1.0, np.nan]]), channel_names=("a",))
        with pytest.raises(ValueError):
            Trial(participant_id=1, video_id=1,
                  samples=np.zeros((2, 4)), channel_names=("a", "a"))
        with pytest.raises(ValueError):
            Trial(participant_id=0, video_id=1,
                  samples=np.zeros((1, 4)), channel_names=("a",))

    def test_samples_are_read_only(self):
        t = _trial(1)
        with pytest.raises(ValueError):
            t.samples[0, 0] = 99.0


class TestMakeFolds:
    def test_balanced_random_folds(self):
        trials = [_trial(1, vid=v) for v in range(1, 11)]
        fa = make_folds(trials, k=5, seed=0)
        assert sorted(fa.sizes()) == [2, 2, 2, 2, 2]

    def test_cross_person_32_participants(self):
        trials = [_trial(p, vid=1) for p in range(1, 33)]
        fa = make_folds(trials, k=5, seed=3, mode=FoldMode.CROSS_PERSON)
        assert sorted(fa.sizes()) == [6, 6, 6, 7, 7]

    def test_deterministic(self):
        trials = [_trial(1 + v % 4, vid=1 + v) for v in range(12)]
        a = make_folds(trials, k=3, seed=9)
        b = make_folds(trials, k=3, seed=9)
        assert a == b
        c = make_folds(trials, k=3, seed=10)
        assert a != c

    def test_too_few_items(self):
        with pytest.raises(TooFewItemsError):
            make_folds([_trial(1)], k=2, seed=0)
        with pytest.raises(TooFewItemsError):
            make_folds([_trial(1, vid=v) for v in range(1, 5)], k=3, seed=0,
                       mode=FoldMode.CROSS_PERSON)

    def test_bad_k(self):
        with pytest.raises(BadKError):
            make_folds([_trial(1), _trial(2)], k=1, seed=0)

    @given(st.integers(min_value=2, max_value=6), st.integers(min_value=0, max_value=50))
    @settings(max_examples=40, deadline=None)
    def test_folds_partition_all_trials(self, k, seed):
        trials = [_trial(1 + i % 8, vid=1 + i % 12) for i in range(17)]
        fa = make_folds(trials, k=k, seed=seed)
        union = sorted(i for f in range(k) for i in fa.test_indices(f))
        assert union == list(range(len(trials)))
        assert max(fa.sizes()) - min(fa.sizes()) <= 1

    @given(st.integers(min_value=0, max_value=50))
    @settings(max_examples=25, deadline=None)
    def test_cross_person_keeps_participants_together(self, seed):
        trials = [_trial(p, vid=v) for p in range(1, 9) for v in range(1, 4)]
        fa = make_folds(trials, k=4, seed=seed, mode=FoldMode.CROSS_PERSON)
        fold_of_pid = {}
        for i, t in enumerate(trials):
            fold_of_pid.setdefault(t.participant_id, set()).add(fa.fold_of[i])
        assert all(len(folds) == 1 for folds in fold_of_pid.values())
