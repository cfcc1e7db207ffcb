'''
@file: synthgen.py
@author: airside-tech

Deterministic synthetic transaction corpus in the PaySim CSV layout.

Two fraud regimes are planted on top of random benign traffic:

    attribute   fraudulent transfers have inflated amounts and drain the sender,
                so node attributes alone separate the classes
    structure   fraud is a chain A -> ... -> mule -> ... -> B with the mule at
                distance motif_hops from both endpoints, plus a flagged A -> B
                transfer. Benign "relay" chains of the same shape exist with an
                ordinary account in the centre, so the endpoints look alike and
                only the multi-hop neighbourhood tells them apart.

`mixed` plants half of the fraud each way.

'''

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from errors import GenerationError
from ingest import PAYSIM_COLUMNS, TransactionRecord

logger = logging.getLogger("stc_mixhop.synthgen")

REGIMES = ("attribute", "structure", "mixed")
MOTIF_HOPS = (1, 2, 3)
MAX_FRAUD_RATE = 0.1

BENIGN_TYPES = ("PAYMENT", "CASH_IN", "CASH_OUT", "TRANSFER", "DEBIT")
BENIGN_TYPE_PROBS = (0.40, 0.22, 0.22, 0.10, 0.06)
BENIGN_LOG_MEAN = 7.0
BENIGN_LOG_SIGMA = 1.0
FRAUD_AMOUNT_FACTOR = 30.0
FRAUD_LOG_SIGMA = 0.5
BALANCE_LOG_MEAN = 8.5
RELAYS_PER_MOTIF = 3
MULE_SHARE = 20  # one mule per this many accounts


@dataclass(frozen=True)
class GenConfig:
    n_accounts: int = 2000
    n_windows: int = 20
    tx_per_window: int = 2000
    fraud_rate: float = 0.02
    regime: str = "structure"
    motif_hops: int = 2
    bin_hours: int = 168
    seed: int = 0

    def validate(self) -> "GenConfig":
        if self.regime not in REGIMES:
            raise GenerationError(f"unknown regime '{self.regime}', expected one of {REGIMES}")
        if self.motif_hops not in MOTIF_HOPS:
            raise GenerationError(f"motif_hops must be one of {MOTIF_HOPS}, got {self.motif_hops}")
        if not 0.0 <= self.fraud_rate <= MAX_FRAUD_RATE:
            raise GenerationError(f"fraud_rate must lie in [0, {MAX_FRAUD_RATE}], got {self.fraud_rate}")
        if self.n_windows < 4:
            raise GenerationError(f"n_windows must be >= 4, got {self.n_windows}")
        if self.tx_per_window < 1 or self.bin_hours < 1:
            raise GenerationError("tx_per_window and bin_hours must be positive")
        return self

    @property
    def n_mules(self) -> int:
        return max(1, self.n_accounts // MULE_SHARE)

    @property
    def n_ordinary(self) -> int:
        return self.n_accounts - self.n_mules

    @property
    def chain_length(self) -> int:
        """Transactions per chain episode: 2 * motif_hops links plus the direct transfer."""
        return 2 * self.motif_hops + 1

    def fraud_counts(self) -> tuple[int, int]:
        """(structure motifs, attribute frauds) planted per window."""
        n_fraud = int(round(self.fraud_rate * self.tx_per_window))
        if self.regime == "structure":
            return n_fraud, 0
        if self.regime == "attribute":
            return 0, n_fraud
        n_motifs = n_fraud // 2
        return n_motifs, n_fraud - n_motifs


@dataclass
class WindowRoles:
    '''
    Accounts playing each planted role in one window.
    '''
    window_id: int
    fraud_endpoints: list[str] = field(default_factory=list)
    relay_endpoints: list[str] = field(default_factory=list)
    mules: list[str] = field(default_factory=list)
    attribute_fraud: list[str] = field(default_factory=list)


@dataclass
class GeneratedCorpus:
    config: GenConfig
    records: list[TransactionRecord]
    roles: list[WindowRoles]

    @property
    def fraud_rate(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.is_fraud for r in self.records) / len(self.records)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            (r.step, r.tx_type, r.amount, r.src_id, r.src_balance_before, r.src_balance_after,
             r.dst_id, r.dst_balance_before, r.dst_balance_after, int(r.is_fraud), 0)
            for r in self.records
        ]
        return pd.DataFrame(rows, columns=PAYSIM_COLUMNS)

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.2f", encoding="utf-8", lineterminator="\n")
        logger.info(f"Wrote {len(self.records):,} transactions to {path}")
        return path


def account_id(index: int) -> str:
    return f"C{index:07d}"


class _WindowBuilder:
    '''
    Accumulates the transactions of one window before steps are drawn.
    '''

    def __init__(self, rng: np.random.Generator, config: GenConfig, window_id: int) -> None:
        self.rng = rng
        self.config = config
        self.roles = WindowRoles(window_id)
        self.rows: list[tuple] = []

    def _amount(self, fraud: bool = False) -> float:
        if fraud:
            value = self.rng.lognormal(BENIGN_LOG_MEAN + math.log(FRAUD_AMOUNT_FACTOR), FRAUD_LOG_SIGMA)
        else:
            value = self.rng.lognormal(BENIGN_LOG_MEAN, BENIGN_LOG_SIGMA)
        return round(float(value), 2)

    def _balance(self) -> float:
        return round(float(self.rng.lognormal(BALANCE_LOG_MEAN, 1.0)), 2)

    def add(self, tx_type: str, src: int, dst: int, amount: float, is_fraud: bool = False,
            src_is_mule: bool = False, dst_is_mule: bool = False, drain: bool = False) -> None:
        if src_is_mule:
            src_before = src_after = 0.0
        elif drain:
            src_before, src_after = amount, 0.0
        else:
            src_before = round(amount + self._balance(), 2)
            src_after = round(src_before - amount, 2)
        if dst_is_mule or drain:
            dst_before = dst_after = 0.0
        else:
            dst_before = self._balance()
            dst_after = round(dst_before + amount, 2)
        self.rows.append((tx_type, amount, account_id(src), account_id(dst),
                          src_before, src_after, dst_before, dst_after, is_fraud))

    def chain(self, fraudulent: bool) -> None:
        hops = self.config.motif_hops
        ordinary_needed = 2 * hops if fraudulent else 2 * hops + 1
        members = [int(i) for i in self.rng.choice(self.config.n_ordinary, size=ordinary_needed, replace=False)]
        if fraudulent:
            centre = self.config.n_ordinary + int(self.rng.integers(self.config.n_mules))
            path = members[:hops] + [centre] + members[hops:]
        else:
            path = members
        for position, (src, dst) in enumerate(zip(path, path[1:])):
            endpoint_link = position == 0 or position == len(path) - 2
            into_centre = position == hops - 1
            if endpoint_link:
                tx_type = "TRANSFER"
            elif fraudulent:
                tx_type = "TRANSFER" if into_centre else "CASH_OUT"
            else:
                tx_type = "PAYMENT"
            self.add(tx_type, src, dst, self._amount(),
                     src_is_mule=fraudulent and position == hops,
                     dst_is_mule=fraudulent and into_centre)
        first, last = path[0], path[-1]
        self.add("TRANSFER", first, last, self._amount(), is_fraud=fraudulent)

        endpoints = [account_id(first), account_id(last)]
        if fraudulent:
            self.roles.fraud_endpoints.extend(endpoints)
            self.roles.mules.append(account_id(path[hops]))
        else:
            self.roles.relay_endpoints.extend(endpoints)

    def attribute_fraud(self) -> None:
        src, dst = (int(i) for i in self.rng.choice(self.config.n_ordinary, size=2, replace=False))
        self.add("TRANSFER", src, dst, self._amount(fraud=True), is_fraud=True, drain=True)
        self.roles.attribute_fraud.extend([account_id(src), account_id(dst)])

    def background(self, count: int) -> None:
        if count <= 0:
            return
        n = self.config.n_ordinary
        src = self.rng.integers(n, size=count)
        dst = (src + self.rng.integers(1, n, size=count)) % n
        types = self.rng.choice(len(BENIGN_TYPES), size=count, p=BENIGN_TYPE_PROBS)
        for s, d, t in zip(src, dst, types):
            self.add(BENIGN_TYPES[t], int(s), int(d), self._amount())

    def records(self) -> list[TransactionRecord]:
        start = self.roles.window_id * self.config.bin_hours
        steps = self.rng.integers(start, start + self.config.bin_hours, size=len(self.rows))
        order = np.argsort(steps, kind="stable")
        return [TransactionRecord(int(steps[i]), *self.rows[i]) for i in order]


def generate(config: GenConfig) -> GeneratedCorpus:
    """
    Generate `n_windows` windows of `tx_per_window` transactions each.

    Raises:
        GenerationError: invalid config, or more planted fraud than the
            account pool or transaction budget can hold
    """
    config.validate()
    n_motifs, n_attribute = config.fraud_counts()
    if config.n_ordinary < config.chain_length or config.n_ordinary < 2:
        raise GenerationError(f"{config.n_accounts} accounts cannot hold a {config.motif_hops}-hop chain")
    if n_attribute > config.n_ordinary * (config.n_ordinary - 1):
        raise GenerationError(f"{n_attribute} fraudulent transfers exceed the available account pairs")
    fraud_budget = n_motifs * config.chain_length + n_attribute
    if fraud_budget > config.tx_per_window:
        raise GenerationError(f"{n_motifs} motifs and {n_attribute} transfers need {fraud_budget} transactions, "
                              f"window budget is {config.tx_per_window}")

    n_relays = 0
    if config.regime != "attribute":
        spare = (config.tx_per_window - fraud_budget) // config.chain_length
        n_relays = min(RELAYS_PER_MOTIF * max(n_motifs, 1), spare)

    rng = np.random.default_rng(config.seed)
    records: list[TransactionRecord] = []
    roles: list[WindowRoles] = []
    for window_id in range(config.n_windows):
        builder = _WindowBuilder(rng, config, window_id)
        for _ in range(n_motifs):
            builder.chain(fraudulent=True)
        for _ in range(n_relays):
            builder.chain(fraudulent=False)
        for _ in range(n_attribute):
            builder.attribute_fraud()
        builder.background(config.tx_per_window - len(builder.rows))
        records.extend(builder.records())
        roles.append(builder.roles)

    corpus = GeneratedCorpus(config, records, roles)
    logger.info(f"Generated {len(records):,} transactions over {config.n_windows} windows "
                f"({config.regime} regime, fraud rate {corpus.fraud_rate:.4f})")
    return corpus
