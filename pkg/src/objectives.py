'''
@file: objectives.py
@author: airside-tech

Training objectives.

Stage I contrasts two stochastic views of each snapshot (attribute masking and
edge dropping) plus same-entity pairs across consecutive windows, using an
NT-Xent loss with in-batch negatives. Stage II uses binary cross-entropy
weighted inversely to class frequency.

'''

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from errors import BatchError, ConfigError, ConsistencyError, ShapeError
from graph import Snapshot, SparseMatrix, normalize_adjacency
from model import EmbeddingMatrix
from numcore import Tape, Tensor2

logger = logging.getLogger("stc_mixhop.objectives")

NORM_EPS = 1e-12


@dataclass(frozen=True)
class AugmentConfig:
    feature_mask_prob: float = 0.2
    edge_drop_prob: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("feature_mask_prob", "edge_drop_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")


@dataclass
class ContrastBatch:
    '''
    Row i of `positives` is the positive for row i of `anchors`; every other
    row of either matrix is a negative for it.
    '''
    anchors: Tensor2
    positives: Tensor2
    temperature: float = 0.5

    def __post_init__(self) -> None:
        if self.anchors.shape != self.positives.shape:
            raise ShapeError(f"anchors {self.anchors.shape} and positives {self.positives.shape} differ")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")

    @property
    def size(self) -> int:
        return self.anchors.rows


def augment_view(snapshot: Snapshot, config: AugmentConfig) -> Snapshot:
    """
    Stochastic view: each feature entry zeroed with feature_mask_prob, each
    undirected edge (both directions together) dropped with edge_drop_prob,
    then the adjacency is re-normalized. Node ids and labels are untouched.
    """
    rng = np.random.default_rng(config.seed)
    masked = rng.random(snapshot.features.shape) < config.feature_mask_prob
    features = np.where(masked, 0.0, snapshot.features)

    coo = snapshot.adjacency.csr.tocoo()
    rows, cols = coo.row.astype(np.int64), coo.col.astype(np.int64)
    low, high = np.minimum(rows, cols), np.maximum(rows, cols)
    n = snapshot.num_nodes
    pair_keys = low * max(n, 1) + high
    off_diagonal = np.unique(pair_keys[rows != cols])
    kept_pairs = off_diagonal[rng.random(len(off_diagonal)) >= config.edge_drop_prob]
    keep = (rows == cols) | np.isin(pair_keys, kept_pairs)

    adjacency = SparseMatrix(sp.coo_matrix((coo.data[keep], (rows[keep], cols[keep])), shape=(n, n)))
    return replace(snapshot, adjacency=adjacency, normalized=normalize_adjacency(adjacency), features=features)


def _normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    return x / (norms + NORM_EPS), norms


def _normalize_rows_backward(x: np.ndarray, norms: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    denom = norms + NORM_EPS
    projection = (grad_unit * x).sum(axis=1, keepdims=True)
    safe_norms = np.where(norms > 0, norms, 1.0)
    correction = np.where(norms > 0, projection / (denom * denom * safe_norms), 0.0)
    return grad_unit / denom - x * correction


def ntxent_value_and_grads(anchors: np.ndarray, positives: np.ndarray, temperature: float,
                           anchor_negatives: bool = True) -> tuple[float, np.ndarray, np.ndarray]:
    """
    NT-Xent loss and its gradients with respect to both inputs.

    For anchor i the denominator holds every positive row j (the true
    positive included) and, when anchor_negatives is set, every other anchor row.
    """
    n = anchors.shape[0]
    a_unit, a_norm = _normalize_rows(anchors)
    p_unit, p_norm = _normalize_rows(positives)

    cross = a_unit @ p_unit.T / temperature
    logits = [cross]
    if anchor_negatives:
        within = a_unit @ a_unit.T / temperature
        np.fill_diagonal(within, -np.inf)
        logits.append(within)
    stacked = np.hstack(logits)
    row_max = stacked.max(axis=1, keepdims=True)
    exp = np.exp(stacked - row_max)
    total = exp.sum(axis=1, keepdims=True)
    log_denominator = np.log(total) + row_max
    loss = float(np.mean(log_denominator.ravel() - np.diag(cross)))

    soft = exp / total / n
    grad_cross = soft[:, :n] - np.eye(n) / n
    grad_a_unit = grad_cross @ p_unit / temperature
    grad_p_unit = grad_cross.T @ a_unit / temperature
    if anchor_negatives:
        grad_within = soft[:, n:]
        grad_a_unit += (grad_within + grad_within.T) @ a_unit / temperature

    return (loss,
            _normalize_rows_backward(anchors, a_norm, grad_a_unit),
            _normalize_rows_backward(positives, p_norm, grad_p_unit))


def ntxent_loss(batch: ContrastBatch, tape: Tape, anchor_negatives: bool = True) -> Tensor2:
    """Mean NT-Xent over the batch as a 1x1 tensor recorded on `tape`."""
    if batch.size < 2:
        raise BatchError(f"contrastive batch needs at least 2 rows for negatives, got {batch.size}")
    loss, grad_a, grad_p = ntxent_value_and_grads(
        batch.anchors.values, batch.positives.values, batch.temperature, anchor_negatives)
    return tape.apply(np.array([[loss]]), (batch.anchors, batch.positives),
                      lambda g: (g[0, 0] * grad_a, g[0, 0] * grad_p))


def build_positive_pairs(view_one: EmbeddingMatrix, view_two: EmbeddingMatrix,
                         prev: EmbeddingMatrix | None, prev_index: np.ndarray,
                         tape: Tape, temperature: float = 0.5) -> ContrastBatch:
    """
    Stack intra-snapshot pairs (view_one_i, view_two_i) for every node and
    temporal pairs (view_one_i, prev_row) for nodes present in the previous window.
    """
    if view_one.Z.shape != view_two.Z.shape:
        raise ConsistencyError(f"view shapes differ: {view_one.Z.shape} vs {view_two.Z.shape}")
    prev_index = np.asarray(prev_index, dtype=np.int64)
    if len(prev_index) != view_one.Z.rows:
        raise ConsistencyError(f"prev_index has {len(prev_index)} entries for {view_one.Z.rows} nodes")

    anchors = [view_one.Z]
    positives = [view_two.Z]
    if prev is not None:
        persisting = np.flatnonzero(prev_index >= 0)
        if len(persisting):
            anchors.append(tape.gather_rows(view_one.Z, persisting))
            positives.append(tape.gather_rows(prev.Z, prev_index[persisting]))

    if len(anchors) == 1:
        return ContrastBatch(view_one.Z, view_two.Z, temperature)
    return ContrastBatch(tape.concat_rows(anchors), tape.concat_rows(positives), temperature)


def class_weights(labels: np.ndarray) -> tuple[float, float, list[str]]:
    """
    w_pos = N / (2 N_pos), w_neg = N / (2 N_neg).

    A class that is absent falls back to weight 1.0 and a warning string is returned.
    """
    labels = np.asarray(labels).ravel()
    n = len(labels)
    n_pos = int((labels == 1).sum())
    n_neg = n - n_pos
    warnings: list[str] = []
    if n_pos == 0:
        warnings.append("no positive nodes in training windows; w_pos fell back to 1.0")
        w_pos = 1.0
    else:
        w_pos = n / (2.0 * n_pos)
    if n_neg == 0:
        warnings.append("no negative nodes in training windows; w_neg fell back to 1.0")
        w_neg = 1.0
    else:
        w_neg = n / (2.0 * n_neg)
    for message in warnings:
        logger.warning(message)
    return w_pos, w_neg, warnings


def weighted_bce_value_and_grad(probs: np.ndarray, labels: np.ndarray, w_pos: float, w_neg: float) -> tuple[float, np.ndarray]:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64).reshape(probs.shape)
    weights = np.where(labels == 1, w_pos, w_neg)
    total = weights.sum()
    log_likelihood = labels * np.log(probs) + (1.0 - labels) * np.log(1.0 - probs)
    loss = float(-(weights * log_likelihood).sum() / total)
    grad = -weights * (labels / probs - (1.0 - labels) / (1.0 - probs)) / total
    return loss, grad


def weighted_bce(probs: Tensor2, labels: np.ndarray, w_pos: float, w_neg: float, tape: Tape) -> Tensor2:
    """Class-weighted BCE normalized by the total applied weight, as a 1x1 tensor."""
    labels = np.asarray(labels).ravel()
    if probs.cols != 1 or probs.rows != len(labels):
        raise ShapeError(f"{probs.rows}x{probs.cols} probabilities for {len(labels)} labels")
    if len(labels) == 0:
        raise ShapeError("weighted_bce needs at least one labeled node")
    loss, grad = weighted_bce_value_and_grad(probs.values, labels, w_pos, w_neg)
    return tape.apply(np.array([[loss]]), (probs,), lambda g: (g[0, 0] * grad,))
