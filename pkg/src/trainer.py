'''
@file: trainer.py
@author: airside-tech

Chronological splitting and the two-stage training protocol:

    Stage I   contrastive pretraining of the diffusion encoder on training windows
    Stage II  class-weighted fine-tuning of encoder + classifier, with a lower
              encoder learning rate and early stopping on validation PR-AUC

Validation windows only choose the returned epoch and the operating threshold;
test windows are touched once, for the final report.

'''

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from errors import ConfigError, NonFiniteError, ProtocolError, TrainingAbortedError
from evaluation import EvalReport, ScoredSet, assemble_report, confusion_at, pr_auc, save_report, select_threshold
from graph import Snapshot
from model import (VARIANT_LABELS, ModelConfig, ModelParams, check_variant, forward_sequence,
                   mixhop_encode, save_checkpoint)
from numcore import Adam, Tape, backward
from objectives import (AugmentConfig, augment_view, build_positive_pairs, class_weights,
                        ntxent_loss, weighted_bce)

logger = logging.getLogger("stc_mixhop.trainer")


@dataclass(frozen=True)
class TrainConfig:
    train_fraction: float = 0.70
    val_fraction: float = 0.15
    lr_pretrain: float = 1e-3
    lr_classifier: float = 1e-3
    lr_encoder_finetune: float = 1e-4  # 0 freezes the encoder
    pretrain_epochs: int = 30
    finetune_max_epochs: int = 200
    early_stop_patience: int = 10
    temperature: float = 0.5
    feature_mask_prob: float = 0.2
    edge_drop_prob: float = 0.2
    K: int = 2
    d: int = 64
    d_k: int = 128
    decay_init: float = 0.5
    seed: int = 0
    variant: str = "full"

    def validate(self) -> "TrainConfig":
        if self.train_fraction <= 0 or self.val_fraction <= 0 or self.train_fraction + self.val_fraction >= 1:
            raise ConfigError(f"split fractions must be positive with sum < 1, got "
                              f"{self.train_fraction}/{self.val_fraction}")
        if self.lr_pretrain <= 0 or self.lr_classifier <= 0 or self.lr_encoder_finetune < 0:
            raise ConfigError("learning rates must be positive (encoder fine-tune rate may be 0)")
        if self.pretrain_epochs < 0 or self.finetune_max_epochs < 1 or self.early_stop_patience < 1:
            raise ConfigError("epoch counts must be non-negative and patience >= 1")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        check_variant(self.variant)
        self.model_config.validate()
        AugmentConfig(self.feature_mask_prob, self.edge_drop_prob, self.seed)
        return self

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(K=self.K, d=self.d, d_k=self.d_k, decay_init=self.decay_init)

    @property
    def encoder_hops(self) -> int | None:
        return 0 if self.variant == "no_structure" else None


@dataclass(frozen=True)
class Split:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]

    def digest(self) -> str:
        """SHA-256 of the three sorted window-id sets."""
        payload = json.dumps({"train": sorted(self.train), "val": sorted(self.val), "test": sorted(self.test)})
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_dict(self) -> dict:
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}

    @classmethod
    def from_dict(cls, payload: dict) -> "Split":
        return cls(tuple(payload["train"]), tuple(payload["val"]), tuple(payload["test"]))


@dataclass
class RunRecord:
    seed: int
    variant: str
    pretrain_losses: list[float] = field(default_factory=list)
    finetune_losses: list[float] = field(default_factory=list)
    val_trace: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_checkpoint: str | None = None
    val_monitor: str = "pr_auc"
    w_pos: float = 1.0
    w_neg: float = 1.0
    warnings: list[str] = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


class EarlyStopper:
    '''
    Tracks the best value of a maximized validation metric.

    Ties keep the earliest epoch; should_stop turns true after `patience`
    epochs without a strict improvement.
    '''

    def __init__(self, patience: int) -> None:
        self.patience = patience
        self.best_metric = -math.inf
        self.best_epoch = 0
        self.epochs_since_best = 0

    def update(self, epoch: int, metric: float) -> bool:
        """Record `metric` for `epoch`; return True when it is a new best."""
        if metric > self.best_metric:
            self.best_metric = metric
            self.best_epoch = epoch
            self.epochs_since_best = 0
            return True
        self.epochs_since_best += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.epochs_since_best >= self.patience


def chronological_split(snapshots: Sequence[Snapshot], train_fraction: float = 0.70, val_fraction: float = 0.15) -> Split:
    """
    Contiguous train/val/test prefixes over non-empty windows in window order.

    n_train = floor(train_fraction T), n_val = max(1, floor(val_fraction T)),
    test = the rest; n_train shrinks if that would leave no test window.
    """
    ids = sorted(s.window_id for s in snapshots if not s.is_empty)
    total = len(ids)
    if total < 3:
        raise ProtocolError(f"chronological split needs >= 3 non-empty snapshots, got {total}")
    n_train = int(math.floor(train_fraction * total + 1e-9))
    n_val = max(1, int(math.floor(val_fraction * total + 1e-9)))
    while n_train + n_val >= total and n_train > 1:
        n_train -= 1
    if n_train < 1 or n_train + n_val >= total:
        raise ProtocolError(f"cannot split {total} snapshots into train/val/test")
    return Split(tuple(ids[:n_train]), tuple(ids[n_train:n_train + n_val]), tuple(ids[n_train + n_val:]))


def _sequence_until(snapshots: Sequence[Snapshot], last_window: int) -> list[Snapshot]:
    return sorted((s for s in snapshots if s.window_id <= last_window), key=lambda s: s.window_id)


def _view_seed(seed: int, epoch: int, window_id: int, view: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, window_id, view]).generate_state(1)[0])


def pretrain(params: ModelParams, train_snapshots: Sequence[Snapshot], config: TrainConfig) -> tuple[ModelParams, list[float]]:
    """
    Stage I: contrastive pretraining of W_hop_* and W_mix on training windows.

    Labels are never read. Returns the updated params and the mean loss per epoch.
    """
    by_id = {s.window_id: s for s in train_snapshots}
    windows = [s for s in sorted(train_snapshots, key=lambda s: s.window_id) if s.num_nodes >= 2]
    optimizer = Adam(params.subset(params.diffusion_names), lr=config.lr_pretrain)
    hops = config.encoder_hops
    epoch_losses: list[float] = []

    for epoch in range(1, config.pretrain_epochs + 1):
        window_losses = []
        for snapshot in windows:
            tape = Tape()
            views = [
                augment_view(snapshot, AugmentConfig(config.feature_mask_prob, config.edge_drop_prob,
                                                     _view_seed(config.seed, epoch, snapshot.window_id, v)))
                for v in (1, 2)
            ]
            first = mixhop_encode(views[0], params, tape, hops=hops)
            second = mixhop_encode(views[1], params, tape, hops=hops)
            prev_snapshot = by_id.get(snapshot.window_id - 1)
            prev = None
            if prev_snapshot is not None and not prev_snapshot.is_empty:
                prev = mixhop_encode(prev_snapshot, params, tape, hops=hops)

            batch = build_positive_pairs(first, second, prev, snapshot.prev_index, tape, config.temperature)
            loss = ntxent_loss(batch, tape)
            diagnostics = {"stage": "pretrain", "epoch": epoch, "window": snapshot.window_id}
            if not math.isfinite(loss.item()):
                raise TrainingAbortedError(f"non-finite contrastive loss at epoch {epoch}, window {snapshot.window_id}", diagnostics)

            optimizer.zero_grad()
            backward(tape, loss)
            try:
                optimizer.step()
            except NonFiniteError as exc:
                raise TrainingAbortedError(str(exc), {**diagnostics, **exc.diagnostics}) from exc
            window_losses.append(loss.item())

        epoch_losses.append(float(np.mean(window_losses)) if window_losses else 0.0)
        logger.info(f"pretrain epoch {epoch}/{config.pretrain_epochs}: loss {epoch_losses[-1]:.5f}")
    return params, epoch_losses


def score_windows(snapshots: Sequence[Snapshot], params: ModelParams, variant: str, window_ids: Sequence[int]) -> ScoredSet:
    """Scores for the nodes of `window_ids`, computed causally from the snapshots up to them."""
    window_ids = sorted(window_ids)
    sequence = _sequence_until(snapshots, window_ids[-1])
    outputs = forward_sequence(sequence, params, variant, score_window_ids=window_ids)
    by_id = {s.window_id: s for s in sequence}
    scores, labels, provenance = [], [], []
    for window_id, probs in outputs.items():
        scores.append(probs.values.ravel())
        labels.append(by_id[window_id].labels)
        provenance.append(np.full(probs.rows, window_id))
    if not scores:
        return ScoredSet(np.zeros(0), np.zeros(0), np.zeros(0))
    return ScoredSet(np.concatenate(scores), np.concatenate(labels), np.concatenate(provenance))


def validation_monitor(scored: ScoredSet) -> tuple[float, str]:
    value = pr_auc(scored)
    if value is not None:
        return value, "pr_auc"
    probs = np.clip(scored.scores, 1e-7, 1 - 1e-7)
    bce = -np.mean(scored.labels * np.log(probs) + (1 - scored.labels) * np.log(1 - probs))
    return float(-bce), "neg_bce"


def finetune(params: ModelParams, snapshots: Sequence[Snapshot], split: Split,
             config: TrainConfig) -> tuple[ModelParams, RunRecord]:
    """
    Stage II: weighted-BCE fine-tuning with early stopping on validation PR-AUC.

    Returns params restored to the best validation epoch and the run record.
    """
    record = RunRecord(seed=config.seed, variant=config.variant)
    train_ids = sorted(split.train)
    train_sequence = _sequence_until(snapshots, train_ids[-1])
    train_labels = np.concatenate([s.labels for s in train_sequence if s.window_id in set(train_ids) and not s.is_empty])
    if len(train_labels) == 0:
        raise ProtocolError("training windows contain no nodes")

    record.w_pos, record.w_neg, weight_warnings = class_weights(train_labels)
    record.warnings.extend(weight_warnings)
    if not any(s.labels.any() for s in snapshots if s.window_id in set(split.val)):
        record.val_monitor = "neg_bce"
        record.warnings.append("validation windows hold no positives; early stopping monitors negative BCE")

    lrs = {name: config.lr_encoder_finetune for name in params.encoder_names}
    lrs.update({name: config.lr_classifier for name in params.classifier_names})
    optimizer = Adam(params.subset(params.encoder_names + params.classifier_names), lr=lrs)
    stopper = EarlyStopper(config.early_stop_patience)
    best_state = params.state_dict()

    for epoch in range(1, config.finetune_max_epochs + 1):
        tape = Tape()
        outputs = forward_sequence(train_sequence, params, config.variant, tape, score_window_ids=train_ids)
        probs = list(outputs.values())
        stacked = probs[0] if len(probs) == 1 else tape.concat_rows(probs)
        loss = weighted_bce(stacked, train_labels, record.w_pos, record.w_neg, tape)
        diagnostics = {"stage": "finetune", "epoch": epoch}
        if not math.isfinite(loss.item()):
            raise TrainingAbortedError(f"non-finite supervised loss at epoch {epoch}", diagnostics)

        optimizer.zero_grad()
        backward(tape, loss)
        try:
            optimizer.step()
        except NonFiniteError as exc:
            raise TrainingAbortedError(str(exc), {**diagnostics, **exc.diagnostics}) from exc
        params.project()
        record.finetune_losses.append(loss.item())

        metric, _ = validation_monitor(score_windows(snapshots, params, config.variant, split.val))
        record.val_trace.append(metric)
        if stopper.update(epoch, metric):
            best_state = params.state_dict()
        logger.debug(f"finetune epoch {epoch}: loss {loss.item():.5f}, val {record.val_monitor} {metric:.5f}")
        if stopper.should_stop:
            logger.info(f"early stop at epoch {epoch}; best epoch {stopper.best_epoch}")
            break

    params.load_state_dict(best_state)
    record.best_epoch = stopper.best_epoch
    return params, record


def evaluate_split(snapshots: Sequence[Snapshot], params: ModelParams, split: Split,
                   config: TrainConfig, model_name: str = "stc_mixhop") -> EvalReport:
    """Select the threshold on validation, then report test metrics at it."""
    validation = score_windows(snapshots, params, config.variant, split.val)
    threshold = select_threshold(validation)
    test = score_windows(snapshots, params, config.variant, split.test)
    metadata = {
        "model": model_name,
        "variant": config.variant,
        "label": VARIANT_LABELS[config.variant],
        "seed": config.seed,
        "validation_f_beta": confusion_at(validation, threshold).f_beta,
        "train_windows": len(split.train),
        "val_windows": len(split.val),
        "test_windows": len(split.test),
        "split_hash": split.digest(),
    }
    return assemble_report(test, threshold, metadata)


def train_model(snapshots: Sequence[Snapshot], config: TrainConfig, split: Split | None = None,
                run_dir: str | Path | None = None) -> tuple[ModelParams, RunRecord, Split]:
    """Initialize, pretrain (unless no_contrastive) and fine-tune one model."""
    config.validate()
    started = time.perf_counter()
    split = split or chronological_split(snapshots, config.train_fraction, config.val_fraction)
    train_ids = set(split.train)
    train_snapshots = [s for s in snapshots if s.window_id in train_ids]
    num_features = next(s.num_features for s in snapshots)

    params = ModelParams.initialize(num_features, config.model_config, config.seed)
    pretrain_losses: list[float] = []
    if config.variant != "no_contrastive" and config.pretrain_epochs > 0:
        params, pretrain_losses = pretrain(params, train_snapshots, config)
        if run_dir is not None:
            save_checkpoint(params, Path(run_dir) / "checkpoints" / "pretrained.json", "pretrained")

    params, record = finetune(params, snapshots, split, config)
    record.pretrain_losses = pretrain_losses
    if run_dir is not None:
        record.best_checkpoint = str(save_checkpoint(params, Path(run_dir) / "checkpoints" / "finetuned.json", "finetuned"))
    record.wall_time = time.perf_counter() - started
    return params, record, split


def run_ablation(variant: str, snapshots: Sequence[Snapshot], config: TrainConfig,
                 split: Split | None = None, run_dir: str | Path | None = None) -> tuple[EvalReport, RunRecord]:
    """
    Train and evaluate one variant with every other setting held fixed.

    Writes checkpoints/, run_record.json and report.json when run_dir is given.
    """
    config = replace(config, variant=check_variant(variant))
    params, record, split = train_model(snapshots, config, split, run_dir)
    report = evaluate_split(snapshots, params, split, config)
    if run_dir is not None:
        run_dir = Path(run_dir)
        with open(run_dir / "run_record.json", "w", encoding="utf-8") as f:
            json.dump(record.to_dict(), f, indent=2)
        save_report(report, run_dir / "report.json")
    logger.info(f"[{variant}] test ROC-AUC {report.roc_auc}, PR-AUC {report.pr_auc}, threshold {report.threshold:.4f}")
    return report, record
