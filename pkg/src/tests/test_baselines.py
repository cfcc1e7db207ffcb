'''
@file: test_baselines.py

Unit tests for the logistic regression and MLP reference models
'''

from dataclasses import replace

import numpy as np
import pytest

from baselines import (BASELINE_LABELS, BaselineConfig, TabularDataset, TabularModel, baseline_loss, logreg_fit,
                       mlp_fit, run_baseline)
from errors import ConfigError, ProtocolError, ShapeError
from evaluation import ScoredSet, pr_auc
from graph import SparseMatrix, normalize_adjacency
from numcore import Tape, backward


def accuracy(model, dataset):
    return float(np.mean((model.predict(dataset.features) >= 0.5) == (dataset.labels == 1)))


def separable_dataset(seed=0, n=80):
    rng = np.random.default_rng(seed)
    labels = (np.arange(n) % 2).astype(int)
    features = rng.normal(size=(n, 2))
    features[:, 0] = np.where(labels == 1, 1.0, -1.0) * (2.0 + np.abs(features[:, 0]))
    return TabularDataset(features, labels, np.zeros(n))


def xor_dataset(repeats=10):
    corners = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    labels = np.array([1, 1, 0, 0])
    return TabularDataset(np.tile(corners, (repeats, 1)), np.tile(labels, repeats), np.zeros(4 * repeats))


class TestTabularDataset:
    """Test dataset assembly from snapshots"""

    def test_rows_from_assigned_windows_only(self, small_snapshots):
        snapshots, split = small_snapshots
        dataset = TabularDataset.from_snapshots(snapshots, split.val)
        assert set(dataset.window_ids) == set(split.val)
        assert len(dataset) == sum(s.num_nodes for s in snapshots if s.window_id in split.val)

    def test_no_rows(self, small_snapshots):
        snapshots, _ = small_snapshots
        with pytest.raises(ProtocolError):
            TabularDataset.from_snapshots(snapshots, [999])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            TabularDataset(np.zeros((3, 2)), [0, 1], [0, 0, 0])


class TestLogreg:
    """Test logistic regression fitting"""

    def test_separable_fixture(self):
        dataset = separable_dataset()
        model = logreg_fit(dataset, l2=1e-4, config=BaselineConfig(lr=0.05, max_epochs=500))
        assert model.kind == "logreg"
        assert accuracy(model, dataset) == 1.0

    def test_heavy_l2_shrinks_to_base_rate(self):
        dataset = separable_dataset(1)
        model = logreg_fit(dataset, l2=1e4, config=BaselineConfig(lr=0.01, max_epochs=500))
        assert np.abs(model.tensors["W"].values).max() < 0.05
        base = 1.0 / (1.0 + np.exp(-model.tensors["b"].values[0, 0]))
        np.testing.assert_allclose(model.predict(dataset.features), base, atol=0.05)

    def test_zero_variance_column_has_no_gradient(self):
        dataset = separable_dataset(2)
        features = np.column_stack([dataset.features, np.zeros(len(dataset))])
        padded = TabularDataset(features, dataset.labels, dataset.window_ids)
        model = TabularModel.initialize(3, hidden=0, seed=0)
        tape = Tape()
        backward(tape, baseline_loss(model, padded, 1.0, 1.0, 0.0, tape))
        assert model.tensors["W"].grad[2, 0] == 0.0
        assert model.tensors["W"].grad[0, 0] != 0.0

    def test_cannot_solve_xor(self):
        dataset = xor_dataset()
        model = logreg_fit(dataset, l2=1e-4, config=BaselineConfig(lr=0.05, max_epochs=500))
        assert accuracy(model, dataset) <= 0.75


class TestMlp:
    """Test the one-hidden-layer perceptron"""

    def test_solves_xor(self):
        dataset = xor_dataset()
        model = mlp_fit(dataset, BaselineConfig(hidden=16, lr=0.05, max_epochs=500))
        assert model.kind == "mlp"
        assert accuracy(model, dataset) == 1.0

    def test_zero_width_is_logreg(self):
        dataset = separable_dataset(3)
        config = BaselineConfig(hidden=0, lr=0.01, max_epochs=100)
        degenerate = mlp_fit(dataset, config)
        reference = logreg_fit(dataset, config.l2, config)
        np.testing.assert_allclose(degenerate.predict(dataset.features), reference.predict(dataset.features),
                                   atol=1e-6)

    def test_deterministic(self):
        dataset = xor_dataset()
        config = BaselineConfig(hidden=8, lr=0.01, max_epochs=50, seed=5)
        first = mlp_fit(dataset, config).predict(dataset.features)
        second = mlp_fit(dataset, config).predict(dataset.features)
        np.testing.assert_array_equal(first, second)

    def test_validation_restores_best_state(self):
        train = separable_dataset(4)
        validation = separable_dataset(5, n=40)
        model = mlp_fit(train, BaselineConfig(hidden=4, lr=0.05, max_epochs=200, patience=50),
                      validation=validation)
        scored = ScoredSet(model.predict(validation.features), validation.labels)
        assert pr_auc(scored) == 1.0

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            BaselineConfig(hidden=-1).validate()
        with pytest.raises(ConfigError):
            BaselineConfig(lr=0.0).validate()


class TestRunBaseline:
    """Test the shared split and report protocol"""

    config = BaselineConfig(hidden=8, lr=0.01, max_epochs=30, patience=5)

    def test_report_shares_split(self, small_snapshots):
        snapshots, split = small_snapshots
        for kind in ("logreg", "mlp"):
            _, report = run_baseline(kind, snapshots, split, self.config)
            assert report.split_hash == split.digest()
            assert report.label == BASELINE_LABELS[kind]
            assert report.test_windows == len(split.test)
            assert report.tp + report.fp + report.tn + report.fn == report.test_nodes

    def test_adjacency_is_never_read(self, small_snapshots):
        snapshots, split = small_snapshots
        stripped = []
        for snapshot in snapshots:
            empty = SparseMatrix.from_edges(snapshot.num_nodes, [], [])
            stripped.append(replace(snapshot, adjacency=empty, normalized=normalize_adjacency(empty)))
        _, original = run_baseline("mlp", snapshots, split, self.config)
        _, without_edges = run_baseline("mlp", stripped, split, self.config)
        assert original == without_edges

    def test_unknown_model(self, small_snapshots):
        snapshots, split = small_snapshots
        with pytest.raises(ConfigError):
            run_baseline("forest", snapshots, split, self.config)
