"""
Test configuration: puts src/ on sys.path so `from graph import ...` resolves
to the local modules, and provides small shared fixtures.
"""

import os
import sys

import pytest

# Add the parent directory (src) to sys.path
CURRENT_DIR = os.path.dirname(__file__)
SRC_DIR = os.path.abspath(os.path.join(CURRENT_DIR, ".."))
if SRC_DIR not in sys.path:
    sys.path.insert(0, SRC_DIR)

from graph import build_snapshots, standardize_features  # noqa: E402
from ingest import PAYSIM_TX_TYPES, TransactionRecord, assign_windows, transaction_vocabulary  # noqa: E402
from synthgen import GenConfig, generate  # noqa: E402
from trainer import TrainConfig, chronological_split  # noqa: E402

PAYSIM_HEADER = ("step,type,amount,nameOrig,oldbalanceOrg,newbalanceOrig,"
                 "nameDest,oldbalanceDest,newbalanceDest,isFraud,isFlaggedFraud")


@pytest.fixture
def make_tx():
    """Factory for TransactionRecord with sensible balances."""
    def _make(step, src, dst, amount=100.0, tx_type="TRANSFER", fraud=False):
        return TransactionRecord(step, tx_type, float(amount), src, dst,
                                 1000.0, 1000.0 - amount, 50.0, 50.0 + amount, fraud)
    return _make


@pytest.fixture
def write_csv(tmp_path):
    """Write PaySim-layout rows (list of strings) under a header and return the path."""
    def _write(rows, name="tx.csv", header=PAYSIM_HEADER):
        path = tmp_path / name
        path.write_text("\n".join([header] + list(rows)) + "\n", encoding="utf-8")
        return path
    return _write


@pytest.fixture
def vocabulary():
    return list(PAYSIM_TX_TYPES)


@pytest.fixture(scope="session")
def small_corpus():
    """Structure-regime corpus small enough for unit tests."""
    return generate(GenConfig(n_accounts=240, n_windows=6, tx_per_window=160,
                              fraud_rate=0.05, regime="structure", motif_hops=1, bin_hours=24, seed=3))


@pytest.fixture(scope="session")
def small_snapshots(small_corpus):
    """Linked, standardized snapshots of small_corpus and their split."""
    records = small_corpus.records
    window_ids, windows = assign_windows(records, small_corpus.config.bin_hours)
    snapshots = build_snapshots(records, window_ids, windows, transaction_vocabulary(records))
    split = chronological_split(snapshots)
    standardized, _ = standardize_features(snapshots, split.train)
    return standardized, split


@pytest.fixture
def tiny_train_config():
    return TrainConfig(K=2, d=8, d_k=8, pretrain_epochs=2, finetune_max_epochs=6,
                       early_stop_patience=3, seed=0)
