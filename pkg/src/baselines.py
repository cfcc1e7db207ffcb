'''
@file: baselines.py
@author: airside-tech

Tabular reference models fitted on node attributes alone: logistic regression
and a one-hidden-layer MLP. They share the graph model's optimizer, class
weighting, early stopping and threshold protocol, and never see adjacency.

'''

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from errors import ConfigError, ProtocolError, ShapeError
from evaluation import EvalReport, ScoredSet, assemble_report, confusion_at, select_threshold
from graph import Snapshot
from numcore import Adam, Tape, Tensor2, backward
from objectives import class_weights, weighted_bce
from model import PROB_CLAMP
from trainer import EarlyStopper, Split, validation_monitor

logger = logging.getLogger("stc_mixhop.baselines")

BASELINE_MODELS = ("logreg", "mlp")
BASELINE_LABELS = {"logreg": "LogReg", "mlp": "MLP"}


@dataclass(frozen=True)
class BaselineConfig:
    hidden: int = 64
    l2: float = 1e-4
    lr: float = 1e-3
    max_epochs: int = 500
    patience: int = 20
    seed: int = 0

    def validate(self) -> "BaselineConfig":
        if self.hidden < 0:
            raise ConfigError(f"hidden width must be >= 0, got {self.hidden}")
        if self.l2 < 0 or self.lr <= 0:
            raise ConfigError("l2 must be >= 0 and lr > 0")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("max_epochs and patience must be >= 1")
        return self


@dataclass
class TabularDataset:
    features: np.ndarray
    labels: np.ndarray
    window_ids: np.ndarray

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels).ravel().astype(np.int64)
        self.window_ids = np.asarray(self.window_ids, dtype=np.int64).ravel()
        if self.features.ndim != 2 or not (len(self.features) == len(self.labels) == len(self.window_ids)):
            raise ShapeError(f"features {self.features.shape}, {len(self.labels)} labels, "
                             f"{len(self.window_ids)} window ids")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @classmethod
    def from_snapshots(cls, snapshots: Sequence[Snapshot], window_ids: Sequence[int]) -> "TabularDataset":
        """Stack node rows of the listed windows; features and labels only."""
        wanted = set(window_ids)
        chosen = [s for s in sorted(snapshots, key=lambda s: s.window_id) if s.window_id in wanted and not s.is_empty]
        if not chosen:
            raise ProtocolError(f"no nodes in windows {sorted(wanted)}")
        return cls(
            np.vstack([s.features for s in chosen]),
            np.concatenate([s.labels for s in chosen]),
            np.concatenate([np.full(s.num_nodes, s.window_id) for s in chosen]),
        )


class TabularModel:
    '''
    Sigmoid head over either the raw features (logreg) or one relu hidden layer (mlp).
    '''

    def __init__(self, kind: str, tensors: dict[str, Tensor2]) -> None:
        self.kind = kind
        self.tensors = tensors

    @classmethod
    def initialize(cls, num_features: int, hidden: int, seed: int = 0) -> "TabularModel":
        """Glorot weights, zero biases. hidden=0 gives logistic regression."""
        rng = np.random.default_rng(seed)

        def glorot(name: str, fan_in: int, fan_out: int) -> Tensor2:
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            return Tensor2(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True, name=name)

        if hidden == 0:
            return cls("logreg", {
                "W": glorot("W", num_features, 1),
                "b": Tensor2([[0.0]], requires_grad=True, name="b"),
            })
        return cls("mlp", {
            "W_1": glorot("W_1", num_features, hidden),
            "b_1": Tensor2(np.zeros((1, hidden)), requires_grad=True, name="b_1"),
            "W_2": glorot("W_2", hidden, 1),
            "b_2": Tensor2([[0.0]], requires_grad=True, name="b_2"),
        })

    @property
    def weight_names(self) -> list[str]:
        return [name for name in self.tensors if name.startswith("W")]

    def forward(self, features: np.ndarray, tape: Tape) -> Tensor2:
        x = Tensor2(features)
        if self.kind == "logreg":
            logits = tape.affine(x, self.tensors["W"], self.tensors["b"])
        else:
            hidden = tape.activation(tape.affine(x, self.tensors["W_1"], self.tensors["b_1"]), "relu")
            logits = tape.affine(hidden, self.tensors["W_2"], self.tensors["b_2"])
        return tape.clamp(tape.activation(logits, "sigmoid"), PROB_CLAMP, 1.0 - PROB_CLAMP)

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.forward(features, Tape(enabled=False)).values.ravel()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self.tensors.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, values in state.items():
            self.tensors[name].values = values.copy()


def baseline_loss(model: TabularModel, dataset: TabularDataset, w_pos: float, w_neg: float,
                  l2: float, tape: Tape) -> Tensor2:
    """Class-weighted BCE plus l2 * ||W||^2 / 2 over the weight matrices (biases excluded)."""
    loss = weighted_bce(model.forward(dataset.features, tape), dataset.labels, w_pos, w_neg, tape)
    if l2 > 0:
        for name in model.weight_names:
            weight = model.tensors[name]
            penalty = tape.scale(tape.sum_all(tape.mul(weight, weight)), l2 / 2.0)
            loss = tape.add(loss, penalty)
    return loss


def _fit(model: TabularModel, dataset: TabularDataset, config: BaselineConfig,
         validation: TabularDataset | None) -> TabularModel:
    w_pos, w_neg, _ = class_weights(dataset.labels)
    optimizer = Adam(model.tensors, lr=config.lr)
    stopper = EarlyStopper(config.patience)
    best_state = model.state_dict()

    for epoch in range(1, config.max_epochs + 1):
        tape = Tape()
        loss = baseline_loss(model, dataset, w_pos, w_neg, config.l2, tape)
        optimizer.zero_grad()
        backward(tape, loss)
        optimizer.step()
        if validation is None:
            continue
        metric, _ = validation_monitor(ScoredSet(model.predict(validation.features), validation.labels))
        if stopper.update(epoch, metric):
            best_state = model.state_dict()
        if stopper.should_stop:
            logger.info(f"{model.kind} early stop at epoch {epoch}; best epoch {stopper.best_epoch}")
            break

    if validation is not None:
        model.load_state_dict(best_state)
    return model


def logreg_fit(dataset: TabularDataset, l2: float, config: BaselineConfig,
               validation: TabularDataset | None = None) -> TabularModel:
    """
    Logistic regression by Adam on class-weighted BCE with an l2 penalty.

    Without a validation set all max_epochs steps are taken; with one, the
    best-validation weights are returned.
    """
    config.validate()
    model = TabularModel.initialize(dataset.num_features, hidden=0, seed=config.seed)
    return _fit(model, dataset, BaselineConfig(0, l2, config.lr, config.max_epochs, config.patience, config.seed), validation)


def mlp_fit(dataset: TabularDataset, config: BaselineConfig, hidden: int | None = None,
            validation: TabularDataset | None = None) -> TabularModel:
    """One relu hidden layer (default width from config) and a sigmoid head."""
    config.validate()
    hidden = config.hidden if hidden is None else hidden
    if hidden == 0:
        return logreg_fit(dataset, config.l2, config, validation)
    model = TabularModel.initialize(dataset.num_features, hidden=hidden, seed=config.seed)
    return _fit(model, dataset, config, validation)


def baseline_evaluate(model: TabularModel, snapshots: Sequence[Snapshot], split: Split, seed: int = 0) -> EvalReport:
    """Threshold on validation windows, report on test windows; same schema as the graph model."""
    validation = TabularDataset.from_snapshots(snapshots, split.val)
    test = TabularDataset.from_snapshots(snapshots, split.test)
    val_scored = ScoredSet(model.predict(validation.features), validation.labels, validation.window_ids)
    threshold = select_threshold(val_scored)
    metadata = {
        "model": model.kind,
        "variant": model.kind,
        "label": BASELINE_LABELS[model.kind],
        "seed": seed,
        "validation_f_beta": confusion_at(val_scored, threshold).f_beta,
        "train_windows": len(split.train),
        "val_windows": len(split.val),
        "test_windows": len(split.test),
        "split_hash": split.digest(),
    }
    return assemble_report(ScoredSet(model.predict(test.features), test.labels, test.window_ids), threshold, metadata)


def run_baseline(kind: str, snapshots: Sequence[Snapshot], split: Split,
                 config: BaselineConfig) -> tuple[TabularModel, EvalReport]:
    """Fit `kind` on the training windows with validation early stopping, then evaluate."""
    if kind not in BASELINE_MODELS:
        raise ConfigError(f"unknown baseline '{kind}', expected one of {BASELINE_MODELS}")
    train = TabularDataset.from_snapshots(snapshots, split.train)
    validation = TabularDataset.from_snapshots(snapshots, split.val)
    if kind == "logreg":
        model = logreg_fit(train, config.l2, config, validation)
    else:
        model = mlp_fit(train, config, validation=validation)
    report = baseline_evaluate(model, snapshots, split, config.seed)
    logger.info(f"[{kind}] test ROC-AUC {report.roc_auc}, PR-AUC {report.pr_auc}")
    return model, report
