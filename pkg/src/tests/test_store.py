'''
@file: test_store.py

Unit tests for the on-disk snapshot store
'''

import json

import numpy as np
import pytest

from errors import ConsistencyError, SchemaError
from graph import build_snapshots, standardize_features
from ingest import WindowIndex, assign_windows, transaction_vocabulary
from store import MANIFEST, SnapshotStore, load_manifest, load_store, save_store
from trainer import chronological_split


@pytest.fixture
def stored(small_corpus, tmp_path):
    records = small_corpus.records
    window_ids, windows = assign_windows(records, small_corpus.config.bin_hours)
    vocabulary = transaction_vocabulary(records)
    snapshots = build_snapshots(records, window_ids, windows, vocabulary)
    split = chronological_split(snapshots)
    standardized, scaler = standardize_features(snapshots, split.train)
    store = SnapshotStore(standardized, windows, vocabulary, scaler, split, {"bin_hours": 24, "source": "tx.csv"})
    save_store(tmp_path / "store", store)
    return store, tmp_path / "store"


def assert_same_snapshot(actual, expected):
    assert actual.window_id == expected.window_id
    assert actual.node_ids == expected.node_ids
    np.testing.assert_array_equal(actual.adjacency.indptr, expected.adjacency.indptr)
    np.testing.assert_array_equal(actual.adjacency.indices, expected.adjacency.indices)
    np.testing.assert_array_equal(actual.adjacency.data, expected.adjacency.data)
    np.testing.assert_allclose(actual.normalized.to_dense(), expected.normalized.to_dense(), atol=1e-15)
    np.testing.assert_array_equal(actual.features, expected.features)
    np.testing.assert_array_equal(actual.labels, expected.labels)
    np.testing.assert_array_equal(actual.prev_index, expected.prev_index)


class TestStore:
    """Test saving and loading snapshot stores"""

    def test_round_trip(self, stored):
        store, directory = stored
        loaded = load_store(directory)
        assert loaded.windows == store.windows
        assert loaded.vocabulary == store.vocabulary
        assert loaded.split == store.split
        assert loaded.metadata == {"bin_hours": 24, "source": "tx.csv"}
        np.testing.assert_array_equal(loaded.scaler.mean, store.scaler.mean)
        np.testing.assert_array_equal(loaded.scaler.std, store.scaler.std)
        assert len(loaded.snapshots) == len(store.snapshots)
        for actual, expected in zip(loaded.snapshots, store.snapshots):
            assert_same_snapshot(actual, expected)

    def test_manifest_contents(self, stored):
        store, directory = stored
        manifest = load_manifest(directory)
        assert manifest["num_features"] == store.num_features
        assert len(manifest["feature_names"]) == store.num_features
        assert [w["window_id"] for w in manifest["windows"]] == [w.window_id for w in store.windows]
        assert [w["num_nodes"] for w in manifest["windows"]] == [s.num_nodes for s in store.snapshots]

    def test_partial_load(self, stored):
        store, directory = stored
        wanted = list(store.split.test)
        loaded = load_store(directory, window_ids=wanted)
        assert [s.window_id for s in loaded.snapshots] == wanted
        assert_same_snapshot(loaded.snapshots[0], store.snapshots[wanted[0]])

    def test_partial_load_ignores_other_files(self, stored):
        store, directory = stored
        first = load_manifest(directory)["windows"][0]["file"]
        (directory / first).unlink()
        loaded = load_store(directory, window_ids=store.split.test)
        assert len(loaded.snapshots) == len(store.split.test)

    def test_without_scaler_or_split(self, stored, tmp_path):
        store, _ = stored
        bare = SnapshotStore(store.snapshots, store.windows, store.vocabulary)
        loaded = load_store(save_store(tmp_path / "bare", bare).parent)
        assert loaded.scaler is None
        assert loaded.split is None
        assert loaded.metadata == {}

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(SchemaError):
            load_store(tmp_path)

    def test_unknown_format(self, stored):
        _, directory = stored
        path = directory / MANIFEST
        manifest = json.loads(path.read_text(encoding="utf-8"))
        manifest["format_version"] = 99
        path.write_text(json.dumps(manifest), encoding="utf-8")
        with pytest.raises(SchemaError):
            load_manifest(directory)

    def test_window_without_snapshot(self, stored, tmp_path):
        store, _ = stored
        windows = store.windows + [WindowIndex(99, 99 * 24, 100 * 24)]
        with pytest.raises(ConsistencyError):
            save_store(tmp_path / "broken", SnapshotStore(store.snapshots, windows, store.vocabulary))
