import numpy as np
import pytest

from clusteralign.losses import (
    PseudoLabeledBatch,
    alignment_loss,
    clamp_events,
    clustering_loss,
    cross_entropy,
    domain_adversarial_loss,
    reset_clamp_events,
    total_objective,
)
from clusteralign.seeding import seeded_rng

from helpers import brute_force_alignment, brute_force_clustering


def batch(features, labels, k=2, conf=None):
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if conf is None:
        conf = np.ones(len(labels))
    return PseudoLabeledBatch(features, labels, np.asarray(conf, float), k)


class TestCrossEntropy:
    def test_uniform_is_log2(self):
        loss, _ = cross_entropy(np.full((5, 2), 0.5), np.zeros(5, int))
        assert loss == pytest.approx(np.log(2.0), abs=1e-12)

    def test_one_hot_correct_is_zero(self):
        p = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss, d_logits = cross_entropy(p, np.array([0, 1]))
        assert loss == 0.0
        assert np.all(d_logits == 0.0)

    def test_hand_case(self):
        loss, d_logits = cross_entropy(np.array([[0.8, 0.2]]), np.array([0]))
        assert loss == pytest.approx(-np.log(0.8), abs=1e-12)
        assert np.allclose(d_logits, [[-0.2, 0.2]], atol=1e-12)

    def test_clamp_counter(self):
        reset_clamp_events()
        cross_entropy(np.array([[1.0, 0.0]]), np.array([1]))
        assert clamp_events() == 1
        reset_clamp_events()
        assert clamp_events() == 0


class TestClusteringLoss:
    def test_same_class_identical_features(self):
        loss, grad = clustering_loss(batch([[1.0, 2.0], [1.0, 2.0]], [0, 0]), 3.0)
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_margin_inactive_beyond_m(self):
        loss, _ = clustering_loss(batch([[0.0, 0.0], [0.0, 2.0]], [0, 1]), 3.0)
        assert loss == 0.0

    def test_hand_case_active_margin(self):
        # Ordered pairs (1,2) and (2,1) each contribute max(0, 3-1) = 2;
        # loss = 4 / 2^2 = 1.0.
        loss, _ = clustering_loss(batch([[0.0, 0.0], [1.0, 0.0]], [0, 1]), 3.0)
        assert loss == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("metric", ["sq_euclidean", "euclidean"])
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_brute_force(self, metric, seed):
        rng = seeded_rng(42, seed)
        n = int(rng.integers(2, 33))
        d = int(rng.integers(1, 9))
        feats = rng.normal(size=(n, d))
        labels = rng.integers(3, size=n)
        loss, _ = clustering_loss(batch(feats, labels, k=3), 2.5, metric)
        oracle = brute_force_clustering(feats, labels, 2.5, squared=metric == "sq_euclidean")
        assert loss == pytest.approx(oracle, abs=1e-10)

    def test_permutation_symmetry(self):
        rng = seeded_rng(7)
        feats = rng.normal(size=(12, 4))
        labels = rng.integers(2, size=12)
        perm = rng.permutation(12)
        a, _ = clustering_loss(batch(feats, labels), 3.0)
        b, _ = clustering_loss(batch(feats[perm], labels[perm]), 3.0)
        assert a == pytest.approx(b, abs=1e-10)

    def test_gradient_matches_central_differences(self):
        rng = seeded_rng(8)
        feats = rng.normal(size=(6, 3))
        labels = rng.integers(2, size=6)
        _, grad = clustering_loss(batch(feats, labels), 3.0)
        h = 1e-6
        for i in range(feats.shape[0]):
            for j in range(feats.shape[1]):
                up = feats.copy()
                up[i, j] += h
                down = feats.copy()
                down[i, j] -= h
                numeric = (
                    clustering_loss(batch(up, labels), 3.0)[0]
                    - clustering_loss(batch(down, labels), 3.0)[0]
                ) / (2 * h)
                assert grad[i, j] == pytest.approx(numeric, abs=1e-6)


class TestAlignmentLoss:
    def test_identical_means_zero(self):
        src = batch([[1.0, 0.0], [3.0, 0.0]], [0, 0])
        tgt = batch([[2.0, 0.0]], [0])
        loss, d_src, d_tgt = alignment_loss(src, tgt)
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(d_src, 0.0) and np.allclose(d_tgt, 0.0)

    def test_hand_computed_means(self):
        src = batch([[0.0, 0.0], [2.0, 0.0]], [0, 0])
        tgt = batch([[0.0, 0.0]], [0])
        loss, _, _ = alignment_loss(src, tgt)
        assert loss == pytest.approx(1.0, abs=1e-12)

    def test_absent_class_removed(self):
        # Class 1 is missing from the target batch, so the mean runs over
        # the single co-present class and the class-0 term (1.0) stands.
        src = batch([[0.0, 0.0], [2.0, 0.0], [9.0, 9.0]], [0, 0, 1])
        tgt = batch([[0.0, 0.0]], [0])
        loss, d_src, _ = alignment_loss(src, tgt)
        assert loss == pytest.approx(1.0, abs=1e-12)
        assert np.all(d_src[2] == 0.0)

    def test_no_common_class_is_zero(self):
        src = batch([[1.0, 1.0]], [0])
        tgt = batch([[5.0, 5.0]], [1])
        loss, d_src, d_tgt = alignment_loss(src, tgt)
        assert loss == 0.0
        assert np.all(d_src == 0.0) and np.all(d_tgt == 0.0)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_oracle_and_nonnegative(self, seed):
        rng = seeded_rng(100, seed)
        ns, nt = int(rng.integers(1, 20)), int(rng.integers(1, 20))
        d = int(rng.integers(1, 6))
        sf, tf = rng.normal(size=(ns, d)), rng.normal(size=(nt, d))
        sl, tl = rng.integers(3, size=ns), rng.integers(3, size=nt)
        loss, _, _ = alignment_loss(batch(sf, sl, 3), batch(tf, tl, 3))
        assert loss >= 0.0
        assert loss == pytest.approx(brute_force_alignment(sf, sl, tf, tl, 3), abs=1e-10)

    def test_quadratic_scaling(self):
        rng = seeded_rng(9)
        sf, tf = rng.normal(size=(10, 3)), rng.normal(size=(8, 3))
        sl, tl = rng.integers(2, size=10), rng.integers(2, size=8)
        base, _, _ = alignment_loss(batch(sf, sl), batch(tf, tl))
        scaled, _, _ = alignment_loss(batch(3.0 * sf, sl), batch(3.0 * tf, tl))
        assert scaled == pytest.approx(9.0 * base, rel=1e-12)

    def test_within_class_order_invariance(self):
        rng = seeded_rng(10)
        sf = rng.normal(size=(6, 2))
        sl = np.array([0, 0, 0, 1, 1, 1])
        tgt = batch(rng.normal(size=(4, 2)), [0, 1, 0, 1])
        a, _, _ = alignment_loss(batch(sf, sl), tgt)
        perm = np.array([2, 0, 1, 5, 3, 4])
        b, _, _ = alignment_loss(batch(sf[perm], sl[perm]), tgt)
        assert a == pytest.approx(b, abs=1e-12)

    def test_gradients_match_central_differences(self):
        rng = seeded_rng(11)
        sf, tf = rng.normal(size=(5, 3)), rng.normal(size=(6, 3))
        sl, tl = rng.integers(2, size=5), rng.integers(2, size=6)
        _, d_src, d_tgt = alignment_loss(batch(sf, sl), batch(tf, tl))
        h = 1e-6
        for arr, grad, other_first in ((sf, d_src, True), (tf, d_tgt, False)):
            for i in range(arr.shape[0]):
                for j in range(arr.shape[1]):
                    up, down = arr.copy(), arr.copy()
                    up[i, j] += h
                    down[i, j] -= h
                    if other_first:
                        lu = alignment_loss(batch(up, sl), batch(tf, tl))[0]
                        ld = alignment_loss(batch(down, sl), batch(tf, tl))[0]
                    else:
                        lu = alignment_loss(batch(sf, sl), batch(up, tl))[0]
                        ld = alignment_loss(batch(sf, sl), batch(down, tl))[0]
                    assert grad[i, j] == pytest.approx((lu - ld) / (2 * h), abs=1e-6)


class TestDomainAdversarialLoss:
    def test_uninformative_critic(self):
        loss, _, _, n = domain_adversarial_loss(
            np.full(4, 0.5), np.full(4, 0.5), np.ones(4), 0.9
        )
        assert loss == pytest.approx(-2.0 * np.log(2.0), abs=1e-12)
        assert n == 4

    def test_empty_selection(self):
        loss, _, d_tgt, n = domain_adversarial_loss(
            np.full(3, 0.5), np.full(3, 0.5), np.full(3, 0.9), 0.9
        )
        assert n == 0
        assert np.all(d_tgt == 0.0)
        assert loss == pytest.approx(np.log(0.5), abs=1e-12)

    def test_hand_case(self):
        loss, _, _, n = domain_adversarial_loss(
            np.array([0.8, 0.8]), np.array([0.3]), np.array([0.95]), 0.9
        )
        assert n == 1
        assert loss == pytest.approx(np.log(0.8) + np.log(0.7), abs=1e-12)

    def test_threshold_zero_reduces_to_unfiltered(self):
        rng = seeded_rng(12)
        c_src = rng.uniform(0.1, 0.9, size=6)
        c_tgt = rng.uniform(0.1, 0.9, size=5)
        conf = rng.uniform(0.01, 1.0, size=5)
        filtered = domain_adversarial_loss(c_src, c_tgt, conf, 0.0)
        unfiltered = domain_adversarial_loss(c_src, c_tgt, np.ones(5), 0.0)
        assert filtered[0] == pytest.approx(unfiltered[0], abs=1e-12)
        assert filtered[3] == 5

    def test_gradients_match_central_differences(self):
        rng = seeded_rng(13)
        c_src = rng.uniform(0.2, 0.8, size=4)
        c_tgt = rng.uniform(0.2, 0.8, size=4)
        conf = np.array([0.95, 0.5, 0.99, 0.1])
        _, d_src, d_tgt, _ = domain_adversarial_loss(c_src, c_tgt, conf, 0.9)
        h = 1e-7
        for arr, grad, is_src in ((c_src, d_src, True), (c_tgt, d_tgt, False)):
            for i in range(len(arr)):
                up, down = arr.copy(), arr.copy()
                up[i] += h
                down[i] -= h
                if is_src:
                    lu = domain_adversarial_loss(up, c_tgt, conf, 0.9)[0]
                    ld = domain_adversarial_loss(down, c_tgt, conf, 0.9)[0]
                else:
                    lu = domain_adversarial_loss(c_src, up, conf, 0.9)[0]
                    ld = domain_adversarial_loss(c_src, down, conf, 0.9)[0]
                assert grad[i] == pytest.approx((lu - ld) / (2 * h), abs=1e-5)


class TestTotalObjective:
    def test_pretraining_reduces_to_supervised(self):
        assert total_objective(0.7, 5.0, 9.0, -1.0, 0.0, 0.0) == 0.7

    def test_hand_case(self):
        assert total_objective(1.0, 2.0, 3.0, -1.0, 0.5, 0.0) == pytest.approx(3.5)

    def test_composition_identity(self):
        rng = seeded_rng(14)
        for _ in range(20):
            ly, lc, la, ld = rng.normal(size=4)
            alpha, lam = rng.uniform(0, 2, size=2)
            expected = ly + alpha * (lc + la) + lam * ld
            assert total_objective(ly, lc, la, ld, alpha, lam) == pytest.approx(
                expected, abs=1e-12
            )
