'''
@file: evaluation.py
@author: airside-tech

Ranking metrics (ROC-AUC, average precision), thresholded metrics at a single
operating point, validation-quantile threshold selection and the report
written for every run.

Metrics that are undefined for the given labels (single class) are returned
as None and written as "n/a", never as 0.

'''

import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from errors import ShapeError

logger = logging.getLogger("stc_mixhop.evaluation")

NOT_APPLICABLE = "n/a"
DEFAULT_BETA = 0.5
QUANTILE_GRID = np.round(np.arange(1, 100) * 0.01, 2)


@dataclass
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray
    window_ids: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.labels = np.asarray(self.labels).ravel().astype(np.int64)
        if self.window_ids is None:
            self.window_ids = np.zeros(len(self.scores), dtype=np.int64)
        self.window_ids = np.asarray(self.window_ids, dtype=np.int64).ravel()
        if not (len(self.scores) == len(self.labels) == len(self.window_ids)):
            raise ShapeError(f"scores/labels/window_ids lengths differ: "
                             f"{len(self.scores)}, {len(self.labels)}, {len(self.window_ids)}")
        if not np.all(np.isfinite(self.scores)):
            raise ShapeError("scores must be finite")

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def positives(self) -> int:
        return int(self.labels.sum())


def roc_auc(scored: ScoredSet) -> float | None:
    """Probability that a random positive outranks a random negative, ties counted 1/2."""
    n_pos = scored.positives
    n_neg = len(scored) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scored.scores, method="average")
    rank_sum = ranks[scored.labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def pr_auc(scored: ScoredSet) -> float | None:
    """Average precision over descending scores, ties kept in original order."""
    n_pos = scored.positives
    if n_pos == 0:
        return None
    order = np.argsort(-scored.scores, kind="stable")
    hits = scored.labels[order]
    precision_at_rank = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(precision_at_rank[hits == 1].sum() / n_pos)


@dataclass(frozen=True)
class Confusion:
    precision: float
    recall: float
    f_beta: float
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int


def f_beta_score(precision: float, recall: float, beta: float = DEFAULT_BETA) -> float:
    denom = beta * beta * precision + recall
    if denom == 0:
        return 0.0
    return (1.0 + beta * beta) * precision * recall / denom


def confusion_at(scored: ScoredSet, threshold: float, beta: float = DEFAULT_BETA) -> Confusion:
    """Predict positive iff score >= threshold."""
    predicted = scored.scores >= threshold
    actual = scored.labels == 1
    tp = int((predicted & actual).sum())
    fp = int((predicted & ~actual).sum())
    fn = int((~predicted & actual).sum())
    tn = int((~predicted & ~actual).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    accuracy = (tp + tn) / len(scored) if len(scored) else 0.0
    return Confusion(precision, recall, f_beta_score(precision, recall, beta), accuracy, tp, fp, tn, fn)


def threshold_candidates(scores: np.ndarray) -> np.ndarray:
    """Empirical quantiles at 0.01..0.99 plus min and max, ascending and de-duplicated."""
    scores = np.asarray(scores, dtype=np.float64)
    grid = np.quantile(scores, QUANTILE_GRID)
    return np.unique(np.concatenate([grid, [scores.min(), scores.max()]]))


def select_threshold(validation: ScoredSet, beta: float = DEFAULT_BETA) -> float:
    """
    Candidate maximizing validation F_beta; ties go to the smallest threshold.

    Only the validation set is consulted.
    """
    if len(validation) == 0:
        raise ShapeError("threshold selection needs a non-empty validation set")
    best_threshold, best_score = None, -1.0
    for candidate in threshold_candidates(validation.scores):
        score = confusion_at(validation, candidate, beta).f_beta
        if score > best_score:
            best_threshold, best_score = float(candidate), score
    return best_threshold


@dataclass
class EvalReport:
    '''
    Test-split metrics at the validation-selected threshold plus run metadata.
    '''
    model: str
    variant: str
    label: str
    seed: int
    roc_auc: float | None
    pr_auc: float | None
    precision: float
    recall: float
    f_beta: float
    accuracy: float
    threshold: float
    validation_f_beta: float
    tp: int
    fp: int
    tn: int
    fn: int
    train_windows: int
    val_windows: int
    test_windows: int
    test_nodes: int
    positive_rate: float
    split_hash: str

    def to_dict(self) -> dict:
        return {key: (NOT_APPLICABLE if value is None else value) for key, value in asdict(self).items()}

    @classmethod
    def from_dict(cls, payload: dict) -> "EvalReport":
        return cls(**{f.name: (None if payload[f.name] == NOT_APPLICABLE else payload[f.name]) for f in fields(cls)})


REPORT_COLUMNS = [f.name for f in fields(EvalReport)]


def assemble_report(test: ScoredSet, threshold: float, metadata: dict, beta: float = DEFAULT_BETA) -> EvalReport:
    """
    Populate every report column for the test split at a threshold chosen on validation.

    Args:
        metadata: model, variant, label, seed, validation_f_beta, split window
            counts (train_windows, val_windows, test_windows) and split_hash
    """
    confusion = confusion_at(test, threshold, beta)
    return EvalReport(
        model=metadata.get("model", "stc_mixhop"),
        variant=metadata.get("variant", "full"),
        label=metadata.get("label", metadata.get("variant", "full")),
        seed=int(metadata.get("seed", 0)),
        roc_auc=roc_auc(test),
        pr_auc=pr_auc(test),
        precision=confusion.precision,
        recall=confusion.recall,
        f_beta=confusion.f_beta,
        accuracy=confusion.accuracy,
        threshold=float(threshold),
        validation_f_beta=float(metadata.get("validation_f_beta", 0.0)),
        tp=confusion.tp,
        fp=confusion.fp,
        tn=confusion.tn,
        fn=confusion.fn,
        train_windows=int(metadata.get("train_windows", 0)),
        val_windows=int(metadata.get("val_windows", 0)),
        test_windows=int(metadata.get("test_windows", 0)),
        test_nodes=len(test),
        positive_rate=float(test.labels.mean()) if len(test) else 0.0,
        split_hash=str(metadata.get("split_hash", "")),
    )


def save_report(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=False)
        f.write("\n")
    return path


def load_report(path: str | Path) -> EvalReport:
    with open(path, encoding="utf-8") as f:
        return EvalReport.from_dict(json.load(f))


def reports_to_frame(reports: Sequence[EvalReport], extra: Sequence[dict] | None = None) -> pd.DataFrame:
    """One row per report, fixed column order; optional extra leading columns per row."""
    rows = []
    for i, report in enumerate(reports):
        row = dict(extra[i]) if extra else {}
        row.update(report.to_dict())
        rows.append(row)
    leading = list(extra[0].keys()) if extra else []
    return pd.DataFrame(rows, columns=leading + REPORT_COLUMNS)


def write_reports_csv(reports: Sequence[EvalReport], path: str | Path, extra: Sequence[dict] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    reports_to_frame(reports, extra).to_csv(path, index=False, encoding="utf-8")
    logger.info(f"Wrote {len(reports)} report rows to {path}")
    return path
