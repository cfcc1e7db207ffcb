'''
@file: test_objectives.py

Unit tests for view augmentation, NT-Xent, positive pair assembly and weighted BCE
'''

import math

import numpy as np
import pytest

from errors import BatchError, ConfigError, ConsistencyError, ShapeError
from graph import Snapshot, SparseMatrix, normalize_adjacency
from model import PROB_CLAMP, EmbeddingMatrix
from numcore import Tape, Tensor2, backward, numerical_gradient, relative_error
from objectives import (AugmentConfig, ContrastBatch, augment_view, build_positive_pairs, class_weights,
                        ntxent_loss, ntxent_value_and_grads, weighted_bce)


def loss_of(anchors, positives, temperature, anchor_negatives=True):
    return ntxent_value_and_grads(np.asarray(anchors, float), np.asarray(positives, float), temperature,
                                  anchor_negatives)[0]


@pytest.fixture
def ring_snapshot():
    rng = np.random.default_rng(0)
    n = 12
    rows = list(range(n)) + [(i + 1) % n for i in range(n)] + [0, 5]
    cols = [(i + 1) % n for i in range(n)] + list(range(n)) + [0, 7]
    adjacency = SparseMatrix.from_edges(n, rows, cols)
    return Snapshot(3, tuple(f"N{i}" for i in range(n)), adjacency, normalize_adjacency(adjacency),
                    rng.normal(size=(n, 5)), (rng.random(n) < 0.3).astype(np.int8))


class TestAugmentView:
    """Test attribute masking and edge dropping"""

    def test_zero_probabilities_identity(self, ring_snapshot):
        view = augment_view(ring_snapshot, AugmentConfig(0.0, 0.0, seed=1))
        np.testing.assert_array_equal(view.features, ring_snapshot.features)
        np.testing.assert_array_equal(view.normalized.to_dense(), ring_snapshot.normalized.to_dense())
        assert view.node_ids == ring_snapshot.node_ids

    def test_full_mask(self, ring_snapshot):
        view = augment_view(ring_snapshot, AugmentConfig(1.0, 0.0))
        assert np.all(view.features == 0.0)

    def test_same_seed_same_view(self, ring_snapshot):
        first = augment_view(ring_snapshot, AugmentConfig(0.5, 0.5, seed=9))
        second = augment_view(ring_snapshot, AugmentConfig(0.5, 0.5, seed=9))
        np.testing.assert_array_equal(first.features, second.features)
        np.testing.assert_array_equal(first.adjacency.to_dense(), second.adjacency.to_dense())

    def test_drop_all_keeps_self_loops(self, ring_snapshot):
        view = augment_view(ring_snapshot, AugmentConfig(0.0, 1.0))
        dense = view.adjacency.to_dense()
        assert dense[0, 0] == 1.0
        assert np.count_nonzero(dense) == 1
        np.testing.assert_allclose(view.normalized.to_dense(), np.eye(12))

    def test_both_directions_dropped_together(self, ring_snapshot):
        original = ring_snapshot.adjacency.to_dense()
        for seed in range(20):
            dense = augment_view(ring_snapshot, AugmentConfig(0.0, 0.5, seed=seed)).adjacency.to_dense()
            both = (original > 0) & (original.T > 0)
            assert np.array_equal(dense[both] > 0, dense.T[both] > 0)

    def test_labels_untouched_and_invariants_hold(self, ring_snapshot):
        view = augment_view(ring_snapshot, AugmentConfig(0.3, 0.3, seed=2))
        np.testing.assert_array_equal(view.labels, ring_snapshot.labels)
        assert view.normalized.check_invariants()

    def test_probability_range(self):
        with pytest.raises(ConfigError):
            AugmentConfig(feature_mask_prob=1.5)


class TestNtXent:
    """Test the contrastive loss against closed forms and finite differences"""

    def test_one_orthogonal_negative(self):
        eye = np.eye(2)
        assert loss_of(eye, eye, 1.0, anchor_negatives=False) == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-9)
        assert loss_of(eye, eye, 1.0, anchor_negatives=False) == pytest.approx(0.3133, abs=1e-4)

    def test_temperature_half(self):
        eye = np.eye(2)
        assert loss_of(eye, eye, 0.5, anchor_negatives=False) == pytest.approx(0.1269, abs=1e-4)

    def test_anchor_negatives_enlarge_denominator(self):
        eye = np.eye(2)
        assert loss_of(eye, eye, 1.0) == pytest.approx(-math.log(math.e / (math.e + 2)), abs=1e-9)

    def test_gradient_check(self):
        rng = np.random.default_rng(3)
        anchors = Tensor2(rng.normal(size=(3, 4)), requires_grad=True, name="anchors")
        positives = Tensor2(rng.normal(size=(3, 4)), requires_grad=True, name="positives")
        for anchor_negatives in (True, False):
            anchors.zero_grad()
            positives.zero_grad()
            tape = Tape()
            backward(tape, ntxent_loss(ContrastBatch(anchors, positives, 0.5), tape, anchor_negatives))
            for tensor in (anchors, positives):
                numeric = numerical_gradient(
                    lambda: loss_of(anchors.values, positives.values, 0.5, anchor_negatives), tensor)
                assert relative_error(tensor.grad, numeric) < 1e-4

    def test_row_scale_invariance(self):
        rng = np.random.default_rng(4)
        anchors = rng.normal(size=(5, 3))
        positives = rng.normal(size=(5, 3))
        scaled = anchors.copy()
        scaled[2] *= 37.5
        assert loss_of(anchors, positives, 0.5) == pytest.approx(loss_of(scaled, positives, 0.5), abs=1e-9)

    def test_closer_positive_lowers_loss(self):
        anchors = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        losses = []
        for angle in (1.2, 0.8, 0.4, 0.0):
            positives = np.array([[math.cos(angle), 0.0, math.sin(angle)], [0.0, 1.0, 0.0]])
            losses.append(loss_of(anchors, positives, 0.5))
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_needs_two_rows(self):
        single = Tensor2([[1.0, 0.0]])
        with pytest.raises(BatchError):
            ntxent_loss(ContrastBatch(single, single), Tape(enabled=False))

    def test_batch_validation(self):
        with pytest.raises(ShapeError):
            ContrastBatch(Tensor2(np.ones((2, 3))), Tensor2(np.ones((3, 3))))
        with pytest.raises(ConfigError):
            ContrastBatch(Tensor2(np.ones((2, 3))), Tensor2(np.ones((2, 3))), temperature=0.0)


class TestPositivePairs:
    """Test intra-view and temporal pair assembly"""

    def setup_method(self):
        rng = np.random.default_rng(5)
        self.one = EmbeddingMatrix(1, Tensor2(rng.normal(size=(4, 3))))
        self.two = EmbeddingMatrix(1, Tensor2(rng.normal(size=(4, 3))))
        self.prev = EmbeddingMatrix(0, Tensor2(rng.normal(size=(6, 3))))

    def test_first_window_only_intra_pairs(self):
        batch = build_positive_pairs(self.one, self.two, None, np.full(4, -1), Tape(enabled=False))
        assert batch.size == 4

    def test_all_persisting_doubles(self):
        batch = build_positive_pairs(self.one, self.two, self.prev, np.array([5, 0, 2, 1]), Tape(enabled=False))
        assert batch.size == 8
        np.testing.assert_array_equal(batch.positives.values[4:], self.prev.Z.values[[5, 0, 2, 1]])
        np.testing.assert_array_equal(batch.anchors.values[4:], self.one.Z.values)

    def test_new_node_contributes_one_pair(self):
        batch = build_positive_pairs(self.one, self.two, self.prev, np.array([3, -1, -1, 0]), Tape(enabled=False))
        assert batch.size == 6

    def test_temperature_carried(self):
        batch = build_positive_pairs(self.one, self.two, None, np.full(4, -1), Tape(enabled=False), temperature=0.2)
        assert batch.temperature == 0.2

    def test_view_misalignment(self):
        short = EmbeddingMatrix(1, Tensor2(np.zeros((3, 3))))
        with pytest.raises(ConsistencyError):
            build_positive_pairs(self.one, short, None, np.full(4, -1), Tape(enabled=False))


class TestWeightedBce:
    """Test class-weighted cross-entropy and class weights"""

    def test_single_positive_at_half(self):
        loss = weighted_bce(Tensor2([[0.5]]), np.array([1]), 2.0, 1.0, Tape(enabled=False))
        assert loss.item() == pytest.approx(math.log(2.0), abs=1e-12)

    def test_perfect_predictions_at_clamp(self):
        probs = Tensor2([[1 - PROB_CLAMP], [PROB_CLAMP], [1 - PROB_CLAMP]])
        loss = weighted_bce(probs, np.array([1, 0, 1]), 3.0, 0.6, Tape(enabled=False))
        assert loss.item() <= 1.1e-7 * 3.0

    def test_unit_weights_match_plain_mean(self):
        rng = np.random.default_rng(6)
        probs = rng.uniform(0.05, 0.95, size=(30, 1))
        labels = (rng.random(30) < 0.4).astype(int)
        expected = -np.mean(labels * np.log(probs[:, 0]) + (1 - labels) * np.log(1 - probs[:, 0]))
        loss = weighted_bce(Tensor2(probs), labels, 1.0, 1.0, Tape(enabled=False))
        assert loss.item() == pytest.approx(expected, abs=1e-12)

    def test_flipped_prediction_costs_more(self):
        labels = np.array([1, 0, 0, 1])
        good = Tensor2([[0.9], [0.1], [0.2], [0.8]])
        flipped = Tensor2([[0.9], [0.1], [0.8], [0.8]])
        for w_pos, w_neg in ((1.0, 1.0), (5.0, 0.2), (0.3, 7.0)):
            assert (weighted_bce(good, labels, w_pos, w_neg, Tape(enabled=False)).item()
                    < weighted_bce(flipped, labels, w_pos, w_neg, Tape(enabled=False)).item())

    def test_gradient_check(self):
        rng = np.random.default_rng(7)
        probs = Tensor2(rng.uniform(0.1, 0.9, size=(6, 1)), requires_grad=True, name="probs")
        labels = np.array([1, 0, 0, 1, 0, 0])
        tape = Tape()
        backward(tape, weighted_bce(probs, labels, 1.5, 0.75, tape))
        numeric = numerical_gradient(lambda: weighted_bce(probs, labels, 1.5, 0.75, Tape(enabled=False)).item(), probs)
        assert relative_error(probs.grad, numeric) < 1e-6

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            weighted_bce(Tensor2([[0.5], [0.5]]), np.array([1]), 1.0, 1.0, Tape(enabled=False))

    def test_balanced_weights_are_one(self):
        assert class_weights(np.array([1, 0, 1, 0])) == (1.0, 1.0, [])

    def test_inverse_frequency(self):
        w_pos, w_neg, warnings = class_weights(np.array([1, 1] + [0] * 8))
        assert w_pos == 2.5
        assert w_neg == 0.625
        assert warnings == []

    def test_missing_positives_fall_back(self):
        w_pos, w_neg, warnings = class_weights(np.zeros(5))
        assert w_pos == 1.0
        assert w_neg == 0.5
        assert len(warnings) == 1
