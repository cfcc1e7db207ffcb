'''
@file: store.py
@author: airside-tech

On-disk snapshot store: one JSON file per window plus manifest.json holding
the window list, feature width and names, the transaction-type vocabulary,
standardization statistics and the chronological split.

'''

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from errors import ConsistencyError, SchemaError
from graph import FeatureScaler, Snapshot, SparseMatrix, feature_names, normalize_adjacency
from ingest import WindowIndex
from trainer import Split

logger = logging.getLogger("stc_mixhop.store")

MANIFEST = "manifest.json"
STORE_FORMAT = 1


@dataclass
class SnapshotStore:
    snapshots: list[Snapshot]
    windows: list[WindowIndex]
    vocabulary: list[str]
    scaler: FeatureScaler | None = None
    split: Split | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def num_features(self) -> int:
        return len(feature_names(self.vocabulary))


def _window_file(window_id: int) -> str:
    return f"window_{window_id:05d}.json"


def _snapshot_payload(snapshot: Snapshot) -> dict:
    adjacency = snapshot.adjacency
    return {
        "window_id": snapshot.window_id,
        "node_ids": list(snapshot.node_ids),
        "adjacency": {
            "indptr": adjacency.indptr.tolist(),
            "indices": adjacency.indices.tolist(),
            "data": adjacency.data.tolist(),
        },
        "features": snapshot.features.tolist(),
        "labels": snapshot.labels.astype(int).tolist(),
        "prev_index": snapshot.prev_index.astype(int).tolist(),
    }


def _snapshot_from_payload(payload: dict, num_features: int) -> Snapshot:
    n = len(payload["node_ids"])
    csr = sp.csr_matrix(
        (np.array(payload["adjacency"]["data"], dtype=np.float64),
         np.array(payload["adjacency"]["indices"], dtype=np.int64),
         np.array(payload["adjacency"]["indptr"], dtype=np.int64)),
        shape=(n, n),
    )
    adjacency = SparseMatrix(csr)
    features = np.array(payload["features"], dtype=np.float64).reshape(n, num_features)
    return Snapshot(
        window_id=int(payload["window_id"]),
        node_ids=tuple(payload["node_ids"]),
        adjacency=adjacency,
        normalized=normalize_adjacency(adjacency),
        features=features,
        labels=np.array(payload["labels"], dtype=np.int8),
        prev_index=np.array(payload["prev_index"], dtype=np.int64),
    )


def save_store(directory: str | Path, store: SnapshotStore) -> Path:
    """Write every window file, then the manifest. Returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    by_id = {s.window_id: s for s in store.snapshots}
    entries = []
    for window in store.windows:
        snapshot = by_id.get(window.window_id)
        if snapshot is None:
            raise ConsistencyError(f"window {window.window_id} has no snapshot")
        name = _window_file(window.window_id)
        with open(directory / name, "w", encoding="utf-8") as f:
            json.dump(_snapshot_payload(snapshot), f)
        entries.append({"window_id": window.window_id, "start_step": window.start_step,
                        "end_step": window.end_step, "num_nodes": snapshot.num_nodes, "file": name})

    manifest = {
        "format_version": STORE_FORMAT,
        "windows": entries,
        "num_features": store.num_features,
        "feature_names": feature_names(store.vocabulary),
        "vocabulary": list(store.vocabulary),
        "standardization": None if store.scaler is None else {
            "mean": store.scaler.mean.tolist(), "std": store.scaler.std.tolist()},
        "split": None if store.split is None else store.split.to_dict(),
        **store.metadata,
    }
    path = directory / MANIFEST
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    logger.info(f"Stored {len(entries)} windows in {directory}")
    return path


def load_manifest(directory: str | Path) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise SchemaError(f"no {MANIFEST} in {directory}")
    with open(path, encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("format_version") != STORE_FORMAT:
        raise SchemaError(f"unsupported store format {manifest.get('format_version')}")
    return manifest


def load_store(directory: str | Path, window_ids: Sequence[int] | None = None) -> SnapshotStore:
    """
    Read a store written by save_store.

    Args:
        window_ids: load only these windows; files of other windows may be absent
    """
    directory = Path(directory)
    manifest = load_manifest(directory)
    wanted = None if window_ids is None else set(window_ids)
    num_features = manifest["num_features"]

    snapshots, windows = [], []
    for entry in manifest["windows"]:
        if wanted is not None and entry["window_id"] not in wanted:
            continue
        with open(directory / entry["file"], encoding="utf-8") as f:
            snapshots.append(_snapshot_from_payload(json.load(f), num_features))
        windows.append(WindowIndex(entry["window_id"], entry["start_step"], entry["end_step"]))

    stats = manifest.get("standardization")
    scaler = None if stats is None else FeatureScaler(np.array(stats["mean"]), np.array(stats["std"]))
    split = None if manifest.get("split") is None else Split.from_dict(manifest["split"])
    reserved = {"format_version", "windows", "num_features", "feature_names", "vocabulary", "standardization", "split"}
    metadata = {k: v for k, v in manifest.items() if k not in reserved}
    return SnapshotStore(snapshots, windows, manifest["vocabulary"], scaler, split, metadata)
