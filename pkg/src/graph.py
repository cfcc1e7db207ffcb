'''
@file: graph.py
@author: airside-tech

Per-window entity graphs. A Snapshot holds the accounts active in one window,
the directed transfer pattern between them, leakage-free node features and
node labels. Normalized adjacency and k-hop propagation are sparse throughout.

'''

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from errors import ConfigError, ConsistencyError, ProtocolError, ShapeError
from ingest import TransactionRecord, WindowIndex

logger = logging.getLogger("stc_mixhop.graph")

BASE_FEATURES = [
    "in_degree", "out_degree",
    "tx_count_src", "tx_count_dst",
    "sent_sum", "sent_mean", "sent_max",
    "received_sum", "received_mean", "received_max",
    "net_balance_src", "net_balance_dst",
]
STD_FLOOR = 1e-8
NO_PREVIOUS = -1


def feature_names(vocabulary: Sequence[str]) -> list[str]:
    """Column names in the fixed order used by build_snapshot."""
    return BASE_FEATURES + [f"type_frac_{token}" for token in vocabulary]


class SparseMatrix:
    '''
    Square CSR operator. Column indices are strictly increasing within each row
    and duplicates are summed on construction.
    '''

    def __init__(self, matrix: sp.spmatrix) -> None:
        csr = sp.csr_matrix(matrix, dtype=np.float64)
        if csr.shape[0] != csr.shape[1]:
            raise ShapeError(f"SparseMatrix must be square, got {csr.shape}")
        csr.sum_duplicates()
        csr.sort_indices()
        self._csr = csr

    @classmethod
    def from_edges(cls, n: int, rows: Iterable[int], cols: Iterable[int], values: Iterable[float] | None = None) -> "SparseMatrix":
        rows = np.asarray(list(rows), dtype=np.int64)
        cols = np.asarray(list(cols), dtype=np.int64)
        data = np.ones(len(rows)) if values is None else np.asarray(list(values), dtype=np.float64)
        return cls(sp.coo_matrix((data, (rows, cols)), shape=(n, n)))

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls(sp.identity(n, format="csr"))

    @property
    def n(self) -> int:
        return self._csr.shape[0]

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    @property
    def indptr(self) -> np.ndarray:
        return self._csr.indptr

    @property
    def indices(self) -> np.ndarray:
        return self._csr.indices

    @property
    def data(self) -> np.ndarray:
        return self._csr.data

    @property
    def csr(self) -> sp.csr_matrix:
        return self._csr

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix(self._csr.T)

    def matmul(self, dense: np.ndarray) -> np.ndarray:
        """Return S @ dense as a dense float64 array."""
        dense = np.asarray(dense, dtype=np.float64)
        if dense.shape[0] != self.n:
            raise ShapeError(f"cannot apply {self.n}x{self.n} operator to {dense.shape[0]} rows")
        return np.asarray(self._csr @ dense)

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def check_invariants(self) -> bool:
        """True when offsets are monotone, end at nnz and each row's columns strictly increase."""
        indptr, indices = self.indptr, self.indices
        if indptr[0] != 0 or indptr[-1] != self.nnz or np.any(np.diff(indptr) < 0):
            return False
        for row in range(self.n):
            cols = indices[indptr[row]:indptr[row + 1]]
            if np.any(np.diff(cols) <= 0) or np.any((cols < 0) | (cols >= self.n)):
                return False
        return True

    def __repr__(self) -> str:
        return f"SparseMatrix(n={self.n}, nnz={self.nnz})"


@dataclass(frozen=True)
class Snapshot:
    '''
    Graph of one window. `adjacency` is the raw directed binary pattern,
    `normalized` the symmetric propagation operator built from it.
    `prev_index[i]` is the row of the same entity in the previous window or -1.
    '''
    window_id: int
    node_ids: tuple[str, ...]
    adjacency: SparseMatrix
    normalized: SparseMatrix
    features: np.ndarray
    labels: np.ndarray
    prev_index: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        if self.prev_index is None:
            object.__setattr__(self, "prev_index", np.full(len(self.node_ids), NO_PREVIOUS, dtype=np.int64))

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def is_empty(self) -> bool:
        return len(self.node_ids) == 0


def normalize_adjacency(adjacency: SparseMatrix) -> SparseMatrix:
    """
    Symmetric normalization D^-1/2 (A + I) D^-1/2 of the symmetrized binary pattern.

    Self-transfers are absorbed by the added identity, so every diagonal entry is 1/d_i.
    """
    n = adjacency.n
    pattern = (adjacency.csr != 0).astype(np.float64)
    symmetric = pattern.maximum(pattern.T).tolil()
    symmetric.setdiag(0)
    with_loops = sp.csr_matrix(symmetric) + sp.identity(n, format="csr")
    with_loops.eliminate_zeros()
    with_loops.sum_duplicates()
    with_loops.sort_indices()

    degree = np.asarray(with_loops.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(degree)
    rows = np.repeat(np.arange(n), np.diff(with_loops.indptr))
    values = inv_sqrt[rows] * inv_sqrt[with_loops.indices]
    return SparseMatrix(sp.csr_matrix((values, with_loops.indices.copy(), with_loops.indptr.copy()), shape=(n, n)))


def khop_apply(normalized: SparseMatrix, features: np.ndarray, k: int) -> np.ndarray:
    """Apply the operator k times to `features` by repeated sparse products (A^k is never formed)."""
    if k < 0:
        raise ConfigError(f"hop count must be >= 0, got {k}")
    out = np.asarray(features, dtype=np.float64)
    if out.shape[0] != normalized.n:
        raise ShapeError(f"operator is {normalized.n}x{normalized.n} but features have {out.shape[0]} rows")
    for _ in range(k):
        out = normalized.matmul(out)
    return out


def derive_labels(records: Sequence[TransactionRecord], node_ids: Sequence[str]) -> np.ndarray:
    """y_i = 1 iff entity i sent or received at least one fraudulent transaction in the window."""
    index = {node: i for i, node in enumerate(node_ids)}
    labels = np.zeros(len(node_ids), dtype=np.int8)
    for record in records:
        for entity in (record.src_id, record.dst_id):
            if entity not in index:
                raise ConsistencyError(f"entity '{entity}' missing from the node index")
        if record.is_fraud:
            labels[index[record.src_id]] = 1
            labels[index[record.dst_id]] = 1
    return labels


def _node_features(records: Sequence[TransactionRecord], index: dict[str, int], vocabulary: Sequence[str]) -> np.ndarray:
    n = len(index)
    src = np.array([index[r.src_id] for r in records], dtype=np.int64)
    dst = np.array([index[r.dst_id] for r in records], dtype=np.int64)
    amount = np.array([r.amount for r in records], dtype=np.float64)
    src_delta = np.array([r.src_balance_after - r.src_balance_before for r in records], dtype=np.float64)
    dst_delta = np.array([r.dst_balance_after - r.dst_balance_before for r in records], dtype=np.float64)

    edges = np.unique(src * n + dst)
    out_degree = np.bincount(edges // n, minlength=n).astype(np.float64)
    in_degree = np.bincount(edges % n, minlength=n).astype(np.float64)

    count_src = np.bincount(src, minlength=n).astype(np.float64)
    count_dst = np.bincount(dst, minlength=n).astype(np.float64)
    sent_sum = np.bincount(src, weights=amount, minlength=n)
    received_sum = np.bincount(dst, weights=amount, minlength=n)
    sent_max = np.zeros(n)
    received_max = np.zeros(n)
    np.maximum.at(sent_max, src, amount)
    np.maximum.at(received_max, dst, amount)
    sent_mean = np.divide(sent_sum, count_src, out=np.zeros(n), where=count_src > 0)
    received_mean = np.divide(received_sum, count_dst, out=np.zeros(n), where=count_dst > 0)

    net_src = np.bincount(src, weights=src_delta, minlength=n)
    net_dst = np.bincount(dst, weights=dst_delta, minlength=n)

    involvement = count_src + count_dst
    token_index = {token: j for j, token in enumerate(vocabulary)}
    type_counts = np.zeros((n, len(vocabulary)))
    tokens = np.array([token_index[r.tx_type] for r in records], dtype=np.int64)
    np.add.at(type_counts, (src, tokens), 1.0)
    np.add.at(type_counts, (dst, tokens), 1.0)
    type_fractions = type_counts / involvement[:, None]

    base = np.column_stack([
        in_degree, out_degree, count_src, count_dst,
        sent_sum, sent_mean, sent_max,
        received_sum, received_mean, received_max,
        net_src, net_dst,
    ])
    return np.hstack([base, type_fractions])


def build_snapshot(records: Sequence[TransactionRecord], vocabulary: Sequence[str], window_id: int = 0) -> Snapshot:
    """
    Build the entity graph of one window.

    Args:
        records: transactions that all fall in `window_id`
        vocabulary: global transaction-type tokens (fixes the feature width)
        window_id: window the records belong to

    Returns:
        Snapshot with nodes sorted lexicographically. An empty window yields a
        snapshot with zero nodes.
    """
    width = len(BASE_FEATURES) + len(vocabulary)
    unknown = {r.tx_type for r in records} - set(vocabulary)
    if unknown:
        raise ConsistencyError(f"transaction types outside the vocabulary: {sorted(unknown)}")
    if not records:
        empty = SparseMatrix.from_edges(0, [], [])
        return Snapshot(window_id, (), empty, empty, np.zeros((0, width)), np.zeros(0, dtype=np.int8))

    node_ids = tuple(sorted({r.src_id for r in records} | {r.dst_id for r in records}))
    index = {node: i for i, node in enumerate(node_ids)}
    pairs = sorted({(index[r.src_id], index[r.dst_id]) for r in records})
    adjacency = SparseMatrix.from_edges(len(node_ids), [p[0] for p in pairs], [p[1] for p in pairs])

    return Snapshot(
        window_id=window_id,
        node_ids=node_ids,
        adjacency=adjacency,
        normalized=normalize_adjacency(adjacency),
        features=_node_features(records, index, vocabulary),
        labels=derive_labels(records, node_ids),
    )


def link_temporal(prev: Snapshot | None, curr: Snapshot) -> Snapshot:
    """Return `curr` with prev_index pointing at each entity's row in `prev` (or -1)."""
    if prev is None:
        return replace(curr, prev_index=np.full(curr.num_nodes, NO_PREVIOUS, dtype=np.int64))
    if prev.window_id + 1 != curr.window_id:
        raise ProtocolError(f"cannot link window {prev.window_id} to window {curr.window_id}")
    previous_rows = {node: i for i, node in enumerate(prev.node_ids)}
    prev_index = np.array([previous_rows.get(node, NO_PREVIOUS) for node in curr.node_ids], dtype=np.int64)
    return replace(curr, prev_index=prev_index)


def build_snapshots(records: Sequence[TransactionRecord], window_ids: Sequence[int],
                    windows: Sequence[WindowIndex], vocabulary: Sequence[str]) -> list[Snapshot]:
    """Build and temporally link one snapshot per window, empty windows included."""
    grouped: dict[int, list[TransactionRecord]] = {w.window_id: [] for w in windows}
    for record, w in zip(records, window_ids):
        grouped[w].append(record)

    snapshots: list[Snapshot] = []
    prev = None
    for window in windows:
        snapshot = link_temporal(prev, build_snapshot(grouped[window.window_id], vocabulary, window.window_id))
        snapshots.append(snapshot)
        prev = snapshot
    logger.info(f"Built {len(snapshots)} snapshots ({sum(s.is_empty for s in snapshots)} empty)")
    return snapshots


@dataclass(frozen=True)
class FeatureScaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std


def fit_scaler(snapshots: Sequence[Snapshot], train_window_ids: Iterable[int]) -> FeatureScaler:
    train_ids = set(train_window_ids)
    if not train_ids:
        raise ConfigError("standardization needs at least one training window")
    rows = [s.features for s in snapshots if s.window_id in train_ids and not s.is_empty]
    if not rows:
        raise ConfigError("training windows contain no nodes")
    stacked = np.vstack(rows)
    return FeatureScaler(stacked.mean(axis=0), np.maximum(stacked.std(axis=0), STD_FLOOR))


def standardize_features(snapshots: Sequence[Snapshot], train_window_ids: Iterable[int]) -> tuple[list[Snapshot], FeatureScaler]:
    """z-score every snapshot with statistics taken from training windows only."""
    scaler = fit_scaler(snapshots, train_window_ids)
    return [replace(s, features=scaler.transform(s.features)) for s in snapshots], scaler
