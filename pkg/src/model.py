'''
@file: model.py
@author: airside-tech

STC-MixHop forward pass.

    mixhop_encode   relu(A^k X W_k) for k = 0..K, concatenated and projected by W_mix
    temporal_fuse   attention over [z_t ; z_t-1] for each node, with an optional
                    additive decay penalty -lambda on the previous-window logit
    classify        sigmoid(z W_c + b_c), clamped away from 0 and 1

'''

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from errors import ConfigError, ConsistencyError, ProtocolError, ShapeError
from graph import Snapshot
from numcore import Tape, Tensor2

logger = logging.getLogger("stc_mixhop.model")

VARIANTS = ("full", "no_structure", "no_decay", "no_temporal_attn", "no_contrastive")
VARIANT_LABELS = {
    "full": "STC-MixHop (full)",
    "no_structure": "w/o same-step structure",
    "no_decay": "w/o time-decay weighting",
    "no_temporal_attn": "w/o temporal attention",
    "no_contrastive": "w/o contrastive learning",
}
PROB_CLAMP = 1e-7
CHECKPOINT_FORMAT = 1


def check_variant(variant: str) -> str:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant '{variant}', expected one of {VARIANTS}")
    return variant


@dataclass(frozen=True)
class ModelConfig:
    K: int = 2
    d: int = 64
    d_k: int = 128
    decay_init: float = 0.5
    hop_width: int | None = None  # per-hop width; ceil(d / (K + 1)) when unset

    @property
    def d_hop(self) -> int:
        if self.hop_width is not None:
            return self.hop_width
        return math.ceil(self.d / (self.K + 1))

    def validate(self) -> "ModelConfig":
        if self.K < 0:
            raise ConfigError(f"K must be >= 0, got {self.K}")
        if self.d <= 0:
            raise ConfigError(f"d must be positive, got {self.d}")
        if self.d_k <= 0:
            raise ConfigError(f"d_k must be positive, got {self.d_k}")
        if self.decay_init < 0:
            raise ConfigError(f"decay_init must be >= 0, got {self.decay_init}")
        if self.hop_width is not None and self.hop_width <= 0:
            raise ConfigError(f"hop_width must be positive, got {self.hop_width}")
        return self


class ModelParams:
    '''
    All trainable tensors of the encoder, temporal attention and classifier.
    '''

    def __init__(self, num_features: int, config: ModelConfig, tensors: dict[str, Tensor2], seed: int = 0) -> None:
        self.num_features = num_features
        self.config = config
        self.tensors = tensors
        self.seed = seed

    @classmethod
    def initialize(cls, num_features: int, config: ModelConfig, seed: int = 0) -> "ModelParams":
        """Glorot-uniform weights drawn in a fixed order from one seeded generator."""
        config.validate()
        rng = np.random.default_rng(seed)

        def glorot(name: str, fan_in: int, fan_out: int) -> Tensor2:
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            return Tensor2(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True, name=name)

        K, d, d_k, d_hop = config.K, config.d, config.d_k, config.d_hop
        tensors = {f"W_hop_{k}": glorot(f"W_hop_{k}", num_features, d_hop) for k in range(K + 1)}
        tensors["W_mix"] = glorot("W_mix", (K + 1) * d_hop, d)
        tensors["W_q"] = glorot("W_q", d, d_k)
        tensors["W_k"] = glorot("W_k", d, d_k)
        tensors["W_v"] = glorot("W_v", d, d)
        tensors["decay"] = Tensor2([[config.decay_init]], requires_grad=True, name="decay")
        tensors["W_c"] = glorot("W_c", d, 1)
        tensors["b_c"] = Tensor2([[0.0]], requires_grad=True, name="b_c")
        return cls(num_features, config, tensors, seed)

    def __getitem__(self, name: str) -> Tensor2:
        return self.tensors[name]

    @property
    def diffusion_names(self) -> list[str]:
        return [f"W_hop_{k}" for k in range(self.config.K + 1)] + ["W_mix"]

    @property
    def encoder_names(self) -> list[str]:
        return self.diffusion_names + ["W_q", "W_k", "W_v", "decay"]

    @property
    def classifier_names(self) -> list[str]:
        return ["W_c", "b_c"]

    def subset(self, names: Sequence[str]) -> dict[str, Tensor2]:
        return {name: self.tensors[name] for name in names}

    def zero_grad(self) -> None:
        for tensor in self.tensors.values():
            tensor.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: tensor.values.copy() for name, tensor in self.tensors.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, values in state.items():
            if self.tensors[name].shape != values.shape:
                raise ShapeError(f"{name}: checkpoint shape {values.shape} != {self.tensors[name].shape}")
            self.tensors[name].values = np.array(values, dtype=np.float64)

    def clone(self) -> "ModelParams":
        tensors = {name: Tensor2(t.values.copy(), requires_grad=True, name=name) for name, t in self.tensors.items()}
        return ModelParams(self.num_features, self.config, tensors, self.seed)

    def project(self) -> None:
        """Keep the decay rate non-negative after an optimizer step."""
        decay = self.tensors["decay"].values
        np.maximum(decay, 0.0, out=decay)


@dataclass
class EmbeddingMatrix:
    window_id: int
    Z: Tensor2
    attention: np.ndarray | None = None  # n x 2 weights over (t, t-1) after temporal fusion


def mixhop_encode(snapshot: Snapshot, params: ModelParams, tape: Tape, hops: int | None = None) -> EmbeddingMatrix:
    """
    Multi-hop diffusion encoding of one snapshot.

    Args:
        hops: number of propagation hops to use; defaults to params K. With
            fewer hops than K only the matching leading row block of W_mix is used.
    """
    K = params.config.K if hops is None else hops
    if K < 0 or K > params.config.K:
        raise ConfigError(f"hops must lie in [0, {params.config.K}], got {K}")
    if snapshot.num_features != params.num_features:
        raise ShapeError(f"snapshot has {snapshot.num_features} features, encoder expects {params.num_features}")

    propagated = Tensor2(snapshot.features)
    hop_outputs = []
    for k in range(K + 1):
        if k > 0:
            propagated = tape.spmm(snapshot.normalized, propagated)
        hop_outputs.append(tape.activation(tape.matmul(propagated, params[f"W_hop_{k}"]), "relu"))

    mixed = tape.concat_cols(hop_outputs)
    W_mix = params["W_mix"]
    if K < params.config.K:
        W_mix = tape.slice_rows(W_mix, 0, (K + 1) * params.config.d_hop)
    return EmbeddingMatrix(snapshot.window_id, tape.matmul(mixed, W_mix))


def temporal_fuse(curr: EmbeddingMatrix, prev: EmbeddingMatrix | None, prev_index: np.ndarray,
                  params: ModelParams, tape: Tape, use_decay: bool = True) -> EmbeddingMatrix:
    """
    Attention over each node's current and previous-window embedding.

    Nodes without a previous row keep z_t W_v (single-element context).
    """
    d_k = params.config.d_k
    if d_k <= 0:
        raise ConfigError(f"d_k must be positive, got {d_k}")
    prev_index = np.asarray(prev_index, dtype=np.int64)
    n = curr.Z.rows
    if len(prev_index) != n:
        raise ConsistencyError(f"prev_index has {len(prev_index)} entries for {n} nodes")

    values_curr = tape.matmul(curr.Z, params["W_v"])
    has_prev = prev_index >= 0
    if prev is None or not has_prev.any():
        attention = np.column_stack([np.ones(n), np.zeros(n)])
        return EmbeddingMatrix(curr.window_id, values_curr, attention)
    if prev_index.max() >= prev.Z.rows:
        raise ConsistencyError("prev_index points past the previous window's rows")

    query = tape.matmul(curr.Z, params["W_q"])
    key_curr = tape.matmul(curr.Z, params["W_k"])
    z_prev = tape.gather_rows(prev.Z, prev_index)
    key_prev = tape.matmul(z_prev, params["W_k"])
    values_prev = tape.matmul(z_prev, params["W_v"])

    scale = 1.0 / math.sqrt(d_k)
    logit_curr = tape.scale(tape.rowdot(query, key_curr), scale)
    logit_prev = tape.scale(tape.rowdot(query, key_prev), scale)
    if use_decay:
        logit_prev = tape.sub(logit_prev, params["decay"])

    mask = np.column_stack([np.ones(n, dtype=bool), has_prev])
    weights = tape.activation(tape.concat_cols([logit_curr, logit_prev]), "softmax_rows", mask=mask)
    fused = tape.add(
        tape.mul(tape.slice_cols(weights, 0, 1), values_curr),
        tape.mul(tape.slice_cols(weights, 1, 2), values_prev),
    )
    return EmbeddingMatrix(curr.window_id, fused, weights.values.copy())


def classify(embedding: EmbeddingMatrix, params: ModelParams, tape: Tape) -> Tensor2:
    """Fraud probability per node, n x 1, clamped to [1e-7, 1 - 1e-7]."""
    if embedding.Z.cols != params.config.d:
        raise ShapeError(f"embedding width {embedding.Z.cols} != d={params.config.d}")
    logits = tape.affine(embedding.Z, params["W_c"], params["b_c"])
    return tape.clamp(tape.activation(logits, "sigmoid"), PROB_CLAMP, 1.0 - PROB_CLAMP)


def _check_chronology(snapshots: Sequence[Snapshot]) -> None:
    ids = [s.window_id for s in snapshots]
    if any(b <= a for a, b in zip(ids, ids[1:])):
        raise ProtocolError(f"snapshots must be in strictly increasing window order, got {ids}")
    for i, snapshot in enumerate(snapshots):
        if len(snapshot.prev_index) != snapshot.num_nodes:
            raise ProtocolError(f"window {snapshot.window_id} is not linked (prev_index length mismatch)")
        if not (snapshot.prev_index >= 0).any():
            continue
        prev = snapshots[i - 1] if i > 0 else None
        if prev is None or prev.window_id + 1 != snapshot.window_id:
            raise ProtocolError(f"window {snapshot.window_id} is linked to a window missing from the sequence")
        if snapshot.prev_index.max() >= prev.num_nodes:
            raise ProtocolError(f"window {snapshot.window_id} linkage does not match window {prev.window_id}")


def forward_sequence(snapshots: Sequence[Snapshot], params: ModelParams, variant: str = "full",
                     tape: Tape | None = None, score_window_ids: Sequence[int] | None = None) -> dict[int, Tensor2]:
    """
    Fraud probabilities for each non-empty window of a chronological sequence.

    Window t reads only windows t and t-1. When `score_window_ids` is given,
    only those windows (and their predecessors as context) are computed.

    Returns:
        window_id -> n x 1 probability tensor
    """
    check_variant(variant)
    tape = tape if tape is not None else Tape(enabled=False)
    snapshots = list(snapshots)
    _check_chronology(snapshots)

    by_id = {s.window_id: s for s in snapshots}
    wanted = [s.window_id for s in snapshots if not s.is_empty]
    if score_window_ids is not None:
        requested = set(score_window_ids)
        wanted = [w for w in wanted if w in requested]

    hops = 0 if variant == "no_structure" else None
    temporal = variant != "no_temporal_attn"
    use_decay = variant != "no_decay"

    encoded: dict[int, EmbeddingMatrix] = {}

    def encode(window_id: int) -> EmbeddingMatrix:
        if window_id not in encoded:
            encoded[window_id] = mixhop_encode(by_id[window_id], params, tape, hops=hops)
        return encoded[window_id]

    outputs: dict[int, Tensor2] = {}
    for window_id in wanted:
        snapshot = by_id[window_id]
        embedding = encode(window_id)
        if temporal:
            prev_snapshot = by_id.get(window_id - 1)
            prev = None
            if prev_snapshot is not None and not prev_snapshot.is_empty:
                prev = encode(window_id - 1)
            embedding = temporal_fuse(embedding, prev, snapshot.prev_index, params, tape, use_decay)
        outputs[window_id] = classify(embedding, params, tape)
    return outputs


def save_checkpoint(params: ModelParams, path: str | Path, stage: str) -> Path:
    """Write a versioned JSON checkpoint (shapes, values, hyperparameters, seed, stage tag)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT,
        "stage": stage,
        "seed": params.seed,
        "hyperparameters": {
            "K": params.config.K,
            "d_hop": params.config.d_hop,
            "d": params.config.d,
            "d_k": params.config.d_k,
            "decay_init": params.config.decay_init,
            "decay": float(params["decay"].values[0, 0]),
            "num_features": params.num_features,
        },
        "tensors": {
            name: {"shape": list(t.shape), "values": t.values.ravel().tolist()}
            for name, t in params.tensors.items()
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)
    logger.info(f"Saved {stage} checkpoint to {path}")
    return path


def load_checkpoint(path: str | Path) -> tuple[ModelParams, str]:
    """Return (params, stage tag) from a checkpoint written by save_checkpoint."""
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("format_version") != CHECKPOINT_FORMAT:
        raise ConfigError(f"unsupported checkpoint format {payload.get('format_version')}")
    hyper = payload["hyperparameters"]
    config = ModelConfig(K=hyper["K"], d=hyper["d"], d_k=hyper["d_k"], decay_init=hyper["decay_init"],
                         hop_width=hyper["d_hop"])
    tensors = {
        name: Tensor2(np.array(entry["values"], dtype=np.float64).reshape(entry["shape"]), requires_grad=True, name=name)
        for name, entry in payload["tensors"].items()
    }
    return ModelParams(hyper["num_features"], config, tensors, payload["seed"]), payload["stage"]
