import numpy as np
import pytest

from clusteralign.network import NetworkSpec, forward, init_network
from clusteralign.seeding import seeded_rng
from clusteralign.teacher import (
    corrected_probabilities,
    dump_teacher_csv,
    init_teacher,
    pi_predict,
    pseudo_labels,
    temporal_update,
)

from helpers import ewma_oracle


class TestPiPredict:
    def test_no_dropout_matches_student(self):
        net = init_network(NetworkSpec((3, 8, 2), dropout_rate=0.0), 1)
        x = seeded_rng(0).normal(size=(6, 3))
        teacher = pi_predict(net, x, noise_seed=99)
        student = forward(net, x, mode="eval").probabilities
        assert np.array_equal(teacher, student)

    def test_fixed_seed_deterministic(self):
        net = init_network(NetworkSpec((3, 8, 2), dropout_rate=0.5), 1)
        x = seeded_rng(1).normal(size=(6, 3))
        assert np.array_equal(pi_predict(net, x, 5), pi_predict(net, x, 5))
        assert not np.array_equal(pi_predict(net, x, 5), pi_predict(net, x, 6))

    def test_rows_sum_to_one(self):
        net = init_network(NetworkSpec((3, 8, 4), dropout_rate=0.3), 2)
        x = seeded_rng(2).normal(size=(10, 3))
        probs = pi_predict(net, x, 7)
        assert np.all(np.abs(probs.sum(axis=1) - 1.0) < 1e-9)


class TestTemporalEnsemble:
    def test_first_update_bias_corrected(self):
        state = init_teacher("temporal", 1, 2, decay=0.6)
        state = temporal_update(state, [0], np.array([[1.0, 0.0]]))
        assert np.allclose(state.ensemble[0], [0.4, 0.0], atol=1e-12)
        assert np.allclose(corrected_probabilities(state)[0], [1.0, 0.0], atol=1e-12)

    def test_second_update_hand_values(self):
        state = init_teacher("temporal", 1, 2, decay=0.6)
        state = temporal_update(state, [0], np.array([[1.0, 0.0]]))
        state = temporal_update(state, [0], np.array([[0.0, 1.0]]))
        assert np.allclose(state.ensemble[0], [0.24, 0.4], atol=1e-12)
        assert np.allclose(corrected_probabilities(state)[0], [0.375, 0.625], atol=1e-12)
        labels, conf = pseudo_labels(state)
        assert labels[0] == 1
        assert conf[0] == pytest.approx(0.625, abs=1e-12)

    def test_zero_decay_tracks_latest(self):
        state = init_teacher("temporal", 1, 2, decay=0.0)
        state = temporal_update(state, [0], np.array([[0.3, 0.7]]))
        state = temporal_update(state, [0], np.array([[0.9, 0.1]]))
        assert np.allclose(corrected_probabilities(state)[0], [0.9, 0.1], atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_direct_summation_oracle(self, seed):
        rng = seeded_rng(50, seed)
        decay = float(rng.uniform(0.1, 0.95))
        state = init_teacher("temporal", 1, 3, decay=decay)
        preds = []
        for _ in range(20):
            row = rng.uniform(size=3)
            row = row / row.sum()
            preds.append(row)
            state = temporal_update(state, [0], row[None, :])
        assert np.all(
            np.abs(corrected_probabilities(state)[0] - ewma_oracle(preds, decay)) < 1e-10
        )

    def test_corrected_rows_sum_to_one(self):
        rng = seeded_rng(51)
        state = init_teacher("temporal", 4, 3, decay=0.6)
        for _ in range(7):
            rows = rng.uniform(size=(2, 3))
            rows /= rows.sum(axis=1, keepdims=True)
            state = temporal_update(state, rng.choice(4, 2, replace=False), rows)
        probs = corrected_probabilities(state)
        seen = state.step_counts > 0
        assert np.all(np.abs(probs[seen].sum(axis=1) - 1.0) < 1e-6)

    def test_only_batch_rows_update(self):
        state = init_teacher("temporal", 3, 2, decay=0.6)
        state = temporal_update(state, [1], np.array([[0.5, 0.5]]))
        assert state.step_counts.tolist() == [0, 1, 0]
        assert np.all(state.ensemble[0] == 0.0)

    def test_index_out_of_range(self):
        state = init_teacher("temporal", 2, 2)
        with pytest.raises(IndexError):
            temporal_update(state, [5], np.array([[0.5, 0.5]]))

    def test_update_requires_temporal_mode(self):
        state = init_teacher("pi", 2, 2)
        with pytest.raises(ValueError):
            temporal_update(state, [0], np.array([[0.5, 0.5]]))


class TestPseudoLabels:
    def test_one_hot_confidence(self):
        labels, conf = pseudo_labels(np.array([[0.0, 1.0]]))
        assert labels[0] == 1 and conf[0] == 1.0

    def test_tie_breaks_to_smallest_class(self):
        labels, conf = pseudo_labels(np.array([[0.5, 0.5]]))
        assert labels[0] == 0
        assert conf[0] == 0.5

    def test_unseen_temporal_rows_flagged_by_zero_confidence(self):
        state = init_teacher("temporal", 2, 2)
        state = temporal_update(state, [1], np.array([[0.2, 0.8]]))
        labels, conf = pseudo_labels(state)
        assert labels[0] == 0 and conf[0] == 0.0
        assert labels[1] == 1 and conf[1] > 0.0

    def test_confidence_is_row_max(self):
        rng = seeded_rng(52)
        probs = rng.uniform(size=(20, 4))
        probs /= probs.sum(axis=1, keepdims=True)
        labels, conf = pseudo_labels(probs)
        assert np.all(conf == probs.max(axis=1))
        assert np.all((conf >= 0.0) & (conf <= 1.0))


def test_teacher_csv_dump(tmp_path):
    state = init_teacher("temporal", 2, 2, decay=0.6)
    state = temporal_update(state, [0], np.array([[1.0, 0.0]]))
    path = tmp_path / "teacher.csv"
    dump_teacher_csv(state, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "index,p0,p1,confidence"
    assert lines[1] == "0,1.0,0.0,1.0"
    assert lines[2] == "1,0.0,0.0,0.0"
