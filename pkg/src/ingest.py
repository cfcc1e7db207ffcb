'''
@file: ingest.py
@author: airside-tech

Transaction log ingestion: parse PaySim-layout CSV files, bin records into
uniform hour windows and subsample with per-window quotas so every period of
the log stays represented.

'''

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, TextIO

import numpy as np
import pandas as pd

from errors import ConfigError, RecordValidationError, RowFormatError, SchemaError

logger = logging.getLogger("stc_mixhop.ingest")

PAYSIM_COLUMNS = [
    "step", "type", "amount",
    "nameOrig", "oldbalanceOrg", "newbalanceOrig",
    "nameDest", "oldbalanceDest", "newbalanceDest",
    "isFraud", "isFlaggedFraud",
]
# isFlaggedFraud is accepted but never read
REQUIRED_COLUMNS = PAYSIM_COLUMNS[:-1]
NUMERIC_COLUMNS = ["step", "amount", "oldbalanceOrg", "newbalanceOrig", "oldbalanceDest", "newbalanceDest"]

PAYSIM_TX_TYPES = ("CASH_IN", "CASH_OUT", "DEBIT", "PAYMENT", "TRANSFER")
DEFAULT_BIN_HOURS = 168
DEFAULT_CAP = 200_000


@dataclass(frozen=True, slots=True)
class TransactionRecord:
    """One parsed transaction event."""
    step: int               # hours since simulation start
    tx_type: str
    amount: float
    src_id: str
    dst_id: str
    src_balance_before: float
    src_balance_after: float
    dst_balance_before: float
    dst_balance_after: float
    is_fraud: bool


@dataclass(frozen=True, slots=True)
class WindowIndex:
    window_id: int
    start_step: int
    end_step: int  # exclusive


def _undecodable_line(source: str | Path | BinaryIO | TextIO) -> int:
    """1-based line holding the first invalid UTF-8 byte; 0 when the source is a stream."""
    if not isinstance(source, (str, Path)):
        return 0
    raw = Path(source).read_bytes()
    try:
        raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        return raw.count(b"\n", 0, exc.start) + 1
    return 0


def parse_transactions(source: str | BinaryIO | TextIO) -> list[TransactionRecord]:
    """
    Parse a PaySim-layout CSV into records, in file order.

    Args:
        source: path or open stream of UTF-8 CSV text with a header row

    Returns:
        list[TransactionRecord]: one record per data row

    Raises:
        SchemaError: header missing or a required column absent
        RowFormatError: a row has the wrong field count, an unparsable value or invalid UTF-8
        RecordValidationError: negative amount/step or empty entity id
    """
    try:
        frame = pd.read_csv(source, dtype=str, keep_default_na=False, skip_blank_lines=False, encoding="utf-8")
    except pd.errors.EmptyDataError as exc:
        raise SchemaError("input has no header row") from exc
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        raise RowFormatError(int(match.group(1)) if match else 0, "unexpected number of fields") from exc
    except UnicodeDecodeError as exc:
        raise RowFormatError(_undecodable_line(source), f"invalid UTF-8 ({exc.reason})") from exc

    missing = [col for col in REQUIRED_COLUMNS if col not in frame.columns]
    if missing:
        raise SchemaError(f"missing required columns: {missing}")
    if frame.empty:
        return []

    # header is line 1, first data row is line 2; blank lines keep their line number and are dropped
    lines = np.arange(len(frame)) + 2
    blank_line = frame.fillna("").astype(str).apply(lambda col: col.str.strip() == "").all(axis=1).to_numpy()
    if blank_line.any():
        frame = frame[~blank_line].reset_index(drop=True)
        lines = lines[~blank_line]
    if frame.empty:
        return []

    for col in REQUIRED_COLUMNS:
        blank = frame[col].isna() | (frame[col].astype(str).str.strip() == "")
        if blank.any():
            raise RowFormatError(int(lines[blank.to_numpy().argmax()]), f"empty field '{col}'")

    numeric = {}
    for col in NUMERIC_COLUMNS:
        values = pd.to_numeric(frame[col].str.strip(), errors="coerce").to_numpy(dtype=float)
        bad = ~np.isfinite(values)
        if bad.any():
            raise RowFormatError(int(lines[bad.argmax()]), f"non-numeric value in '{col}'")
        numeric[col] = values

    steps = numeric["step"]
    fractional = steps != np.floor(steps)
    if fractional.any():
        raise RowFormatError(int(lines[fractional.argmax()]), "step must be an integer")
    negative_step = steps < 0
    if negative_step.any():
        raise RecordValidationError(int(lines[negative_step.argmax()]), "step must be >= 0")
    negative_amount = numeric["amount"] < 0
    if negative_amount.any():
        raise RecordValidationError(int(lines[negative_amount.argmax()]), "amount must be >= 0")

    src = frame["nameOrig"].str.strip().to_numpy()
    dst = frame["nameDest"].str.strip().to_numpy()
    tx_type = frame["type"].str.strip().to_numpy()
    fraud = (frame["isFraud"].str.strip() == "1").to_numpy()

    records = [
        TransactionRecord(
            step=int(steps[i]),
            tx_type=str(tx_type[i]),
            amount=float(numeric["amount"][i]),
            src_id=str(src[i]),
            dst_id=str(dst[i]),
            src_balance_before=float(numeric["oldbalanceOrg"][i]),
            src_balance_after=float(numeric["newbalanceOrig"][i]),
            dst_balance_before=float(numeric["oldbalanceDest"][i]),
            dst_balance_after=float(numeric["newbalanceDest"][i]),
            is_fraud=bool(fraud[i]),
        )
        for i in range(len(frame))
    ]
    logger.info(f"Parsed {len(records):,} transactions ({int(fraud.sum()):,} fraudulent)")
    return records


def assign_windows(records: Iterable[TransactionRecord], bin_hours: int = DEFAULT_BIN_HOURS) -> tuple[list[int], list[WindowIndex]]:
    """
    Map each record to window floor(step / bin_hours).

    Returns:
        (window id per record in input order, windows covering [0, max_step]).
        Windows without records are kept as placeholders.
    """
    if bin_hours < 1:
        raise ConfigError(f"bin_hours must be >= 1, got {bin_hours}")
    window_ids = [record.step // bin_hours for record in records]
    if not window_ids:
        return [], []
    n_windows = max(window_ids) + 1
    windows = [WindowIndex(w, w * bin_hours, (w + 1) * bin_hours) for w in range(n_windows)]
    return window_ids, windows


def _allocate_quotas(counts: dict[int, int], cap: int) -> dict[int, int]:
    """Largest-remainder allocation; ties on the fractional part go to the lower window id."""
    total = sum(counts.values())
    exact = {w: cap * c / total for w, c in counts.items()}
    quotas = {w: int(np.floor(x)) for w, x in exact.items()}
    leftover = cap - sum(quotas.values())
    order = sorted(counts, key=lambda w: (-(exact[w] - quotas[w]), w))
    for w in order[:leftover]:
        quotas[w] += 1

    # every non-empty window keeps a record when the cap allows it
    if cap >= len(counts):
        for w in sorted(counts):
            if quotas[w] == 0:
                donor = min((v for v in quotas if quotas[v] > 1), key=lambda v: (-quotas[v], v))
                quotas[donor] -= 1
                quotas[w] = 1
    return quotas


def stratified_subsample(records: list[TransactionRecord], cap: int = DEFAULT_CAP,
                         seed: int = 0, bin_hours: int = DEFAULT_BIN_HOURS) -> list[TransactionRecord]:
    """
    Keep at most `cap` records with per-window quotas proportional to window size.

    Selection inside a window is a seeded uniform draw without replacement and
    the output keeps the original record order.
    """
    if cap <= 0:
        raise ConfigError(f"cap must be positive, got {cap}")
    if cap >= len(records):
        return list(records)

    window_ids, _ = assign_windows(records, bin_hours)
    members: dict[int, list[int]] = {}
    for position, w in enumerate(window_ids):
        members.setdefault(w, []).append(position)

    quotas = _allocate_quotas({w: len(p) for w, p in members.items()}, cap)
    rng = np.random.default_rng(seed)
    keep: list[int] = []
    for w in sorted(members):
        positions = members[w]
        chosen = rng.choice(len(positions), size=quotas[w], replace=False)
        keep.extend(positions[i] for i in chosen)
    keep.sort()
    logger.info(f"Subsampled {len(records):,} -> {len(keep):,} records over {len(members)} windows")
    return [records[i] for i in keep]


def transaction_vocabulary(records: Iterable[TransactionRecord]) -> list[str]:
    """PaySim transaction types plus any other token seen in the input, sorted."""
    return sorted(set(PAYSIM_TX_TYPES) | {record.tx_type for record in records})
