import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from densitynet.ensemble import (
    EnsembleSpec,
    compute_weights,
    decide,
    read_predictions,
    soft_vote,
    write_predictions,
)


def random_probs(rng, b):
    p1 = rng.random(b)
    return np.stack([1 - p1, p1], axis=1)


class TestWeights:
    def test_equal_scores(self):
        np.testing.assert_array_equal(compute_weights([0.9] * 4), [0.25] * 4)

    def test_proportional(self):
        np.testing.assert_allclose(compute_weights([0.8, 0.4]), [2 / 3, 1 / 3], atol=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=8))
    def test_normalized(self, scores):
        assert compute_weights(scores).sum() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("bad", [[], [0.5, 0.0], [0.5, -0.1], [float("nan")]])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            compute_weights(bad)


class TestSoftVote:
    def test_identical_members(self):
        p = random_probs(np.random.default_rng(0), 5)
        np.testing.assert_allclose(soft_vote([p, p, p], [0.2, 0.3, 0.5]), p, atol=1e-15)

    def test_one_hot_selects(self):
        rng = np.random.default_rng(1)
        members = [random_probs(rng, 4) for _ in range(3)]
        np.testing.assert_array_equal(soft_vote(members, [0, 1, 0]), members[1])

    def test_hand_average(self):
        out = soft_vote([np.array([[0.6, 0.4]]), np.array([[0.2, 0.8]])], [0.5, 0.5])
        np.testing.assert_allclose(out, [[0.4, 0.6]])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 6))
    def test_convexity(self, seed, k):
        rng = np.random.default_rng(seed)
        members = [random_probs(rng, 7) for _ in range(k)]
        out = soft_vote(members, compute_weights(rng.random(k) + 0.01))
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        stack = np.stack(members)
        assert np.all(out >= stack.min(axis=0) - 1e-12) and np.all(out <= stack.max(axis=0) + 1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            soft_vote([np.zeros((2, 2)), np.zeros((3, 2))], [0.5, 0.5])
        with pytest.raises(ValueError):
            soft_vote([np.zeros((2, 2))], [0.5, 0.5])


class TestDecide:
    def test_examples(self):
        np.testing.assert_array_equal(decide(np.array([[0.3, 0.7], [0.7, 0.3], [0.5, 0.5]])), [1, 0, 1])


class TestFiles:
    def test_spec_round_trip(self, tmp_path):
        spec = EnsembleSpec(["models/a.ckpt", "models/b.ckpt"], [0.9, 0.6], "auc")
        spec.save(tmp_path / "e.json")
        back = EnsembleSpec.load(tmp_path / "e.json")
        assert back == spec
        np.testing.assert_allclose(back.weights, [0.6, 0.4])

    def test_unknown_metric(self):
        with pytest.raises(ValueError):
            EnsembleSpec(["a"], [0.5], "precision")

    def test_prediction_round_trip(self, tmp_path):
        p = random_probs(np.random.default_rng(2), 4)
        write_predictions(tmp_path / "p.csv", ["a", "b", "c", "d"], p, [0, 1, 1, 0])
        ids, back, labels = read_predictions(tmp_path / "p.csv")
        assert ids == ["a", "b", "c", "d"] and labels.tolist() == [0, 1, 1, 0]
        np.testing.assert_allclose(back, p, atol=1e-10)
        assert (tmp_path / "p.csv").read_text().splitlines()[0] == "image_id,p0,p1,label,pred"

    def test_missing_columns(self, tmp_path):
        (tmp_path / "p.csv").write_text("image_id,p1\nx,0.2\n")
        with pytest.raises(ValueError, match="missing"):
            read_predictions(tmp_path / "p.csv")
