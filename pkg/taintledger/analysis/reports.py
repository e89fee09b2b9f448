from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

import pandas as pd

from taintledger.analysis.base_analysis import BaseAnalysis
from taintledger.core.history_store import HistoryStore
from taintledger.errors import ValidationError
from taintledger.models.data_frame_builder import DataFrameBuilder
from taintledger.models.tx_graph import TxGraph
from taintledger.models.types import BASE_UNITS, Address, BalanceOp, Block, ImpurityRecord, OpKind, SanctionSet

# [low, high) score buckets; the last one includes 1
SCORE_BUCKETS = (
    ("[0%,5%)", Fraction(0), Fraction(1, 20)),
    ("[5%,50%)", Fraction(1, 20), Fraction(1, 2)),
    ("[50%,95%)", Fraction(1, 2), Fraction(19, 20)),
    ("[95%,100%]", Fraction(19, 20), Fraction(2)),
)

DUST_CAP = BASE_UNITS // 10


def _bucket(score: Fraction) -> str:
    for name, low, high in SCORE_BUCKETS:
        if low <= score < high:
            return name
    raise ValueError(f"score out of range: {score}")


def score_distribution(
    records: Iterable[tuple[Address, ImpurityRecord]], include_clean: bool = False
) -> pd.DataFrame:
    """Address count, impurity and balance per score bucket, with each bucket's share of the totals."""
    totals = {name: [0, 0, 0] for name, _, _ in SCORE_BUCKETS}
    for _address, record in records:
        if record.impurity == 0 and not include_clean:
            continue
        bucket = totals[_bucket(record.score)]
        bucket[0] += 1
        bucket[1] += record.impurity
        bucket[2] += record.balance or 0
    count_sum = sum(v[0] for v in totals.values())
    impurity_sum = sum(v[1] for v in totals.values())
    balance_sum = sum(v[2] for v in totals.values())

    def share(part: int, whole: int) -> Fraction:
        return Fraction(part, whole) if whole else Fraction(0)

    rows = [
        {
            "bucket": name,
            "addresses": count,
            "impurity": impurity,
            "balance": balance,
            "address_share": share(count, count_sum),
            "impurity_share": share(impurity, impurity_sum),
            "balance_share": share(balance, balance_sum),
        }
        for name, (count, impurity, balance) in totals.items()
    ]
    columns = ["bucket", "addresses", "impurity", "balance", "address_share", "impurity_share", "balance_share"]
    return DataFrameBuilder().build(rows, columns)


def top_holders(records: Iterable[tuple[Address, ImpurityRecord]], n: int = 10) -> pd.DataFrame:
    """The ``n`` largest impurity holders."""
    ranked = sorted(
        ((a, r) for a, r in records if r.impurity > 0), key=lambda item: (-item[1].impurity, item[0])
    )[:n]
    rows = [
        {"rank": i, "address": a, "impurity": r.impurity, "balance": r.balance or 0, "score": r.score}
        for i, (a, r) in enumerate(ranked, start=1)
    ]
    return DataFrameBuilder().build(rows, ["rank", "address", "impurity", "balance", "score"])


@dataclass(frozen=True)
class DustingSummary:
    dust_transfers: int
    dust_spent: int
    recipients: int
    recipient_balance: int

    @property
    def amplification(self) -> Fraction:
        return Fraction(self.recipient_balance, self.dust_spent) if self.dust_spent else Fraction(0)


def dusting_quantification(
    graph: TxGraph,
    store: HistoryStore,
    sanctions: SanctionSet,
    first_block: int,
    last_block: int,
    dust_cap: int = DUST_CAP,
) -> DustingSummary:
    """Dust sent from sanctioned addresses within a block window versus what its recipients hold."""
    spent = transfers = 0
    recipients: set[Address] = set()
    for transfer in graph.transfers(until=last_block):
        if transfer.block < first_block or transfer.amount > dust_cap:
            continue
        if not sanctions.is_sanctioned(transfer.sender, transfer.block):
            continue
        if sanctions.is_sanctioned(transfer.receiver, transfer.block):
            continue
        transfers += 1
        spent += transfer.amount
        recipients.add(transfer.receiver)
    held = sum(store.query_at(r, last_block).balance or 0 for r in recipients)
    return DustingSummary(transfers, spent, len(recipients), held)


@dataclass
class PoolActivity:
    """Deposits into and withdrawals out of a set of pools within one block window."""

    deposits: int = 0
    withdrawals: int = 0
    deposit_volume: int = 0
    withdrawal_volume: int = 0
    depositors: set[Address] = field(default_factory=set)
    withdrawers: set[Address] = field(default_factory=set)

    def add(self, op: BalanceOp, pools: set[Address]) -> None:
        if op.receiver in pools and op.sender not in pools:
            self.deposits += 1
            self.deposit_volume += op.sent
            self.depositors.add(op.sender)
        elif op.sender in pools and op.receiver not in pools:
            self.withdrawals += 1
            self.withdrawal_volume += op.received
            self.withdrawers.add(op.receiver)

    def metrics(self) -> dict[tuple[str, str], int]:
        return {
            ("transactions", "deposit"): self.deposits,
            ("transactions", "withdraw"): self.withdrawals,
            ("addresses", "deposit"): len(self.depositors),
            ("addresses", "withdraw"): len(self.withdrawers),
            ("volume", "deposit"): self.deposit_volume,
            ("volume", "withdraw"): self.withdrawal_volume,
        }


def pool_activity(
    blocks: Iterable[Block], pools: set[Address], sanction_block: int, window: int | None = None
) -> tuple[PoolActivity, PoolActivity]:
    """Pool activity in equally long windows right before and from ``sanction_block``.

    Without ``window`` both windows take the longest length the block range allows.
    """
    if not pools:
        raise ValidationError("sanction impact needs at least one pool contract")
    blocks = list(blocks)
    if not blocks:
        raise ValidationError("sanction impact needs at least one block")
    first, last = blocks[0].number, blocks[-1].number
    if not first < sanction_block <= last:
        raise ValidationError(f"sanction block {sanction_block} must fall in ({first}, {last}]")
    if window is None:
        window = min(sanction_block - first, last - sanction_block + 1)
    if window < 1:
        raise ValidationError(f"window must be positive, got {window}")

    before, after = PoolActivity(), PoolActivity()
    for block in blocks:
        if sanction_block - window <= block.number < sanction_block:
            period = before
        elif sanction_block <= block.number < sanction_block + window:
            period = after
        else:
            continue
        for op in block.ops:
            if op.kind is OpKind.TRANSFER:
                period.add(op, pools)
    return before, after


def sanction_impact(
    blocks: Iterable[Block], pools: Iterable[Address], sanction_block: int, window: int | None = None
) -> pd.DataFrame:
    """Transactions, distinct addresses and volume of pool deposits and withdrawals before and after a sanction."""
    before, after = pool_activity(blocks, set(pools), sanction_block, window)
    post = after.metrics()
    rows = [
        {
            "metric": metric,
            "action": action,
            "pre": pre,
            "post": post[metric, action],
            "change": Fraction(post[metric, action] - pre, pre) if pre else None,
        }
        for (metric, action), pre in before.metrics().items()
    ]
    return DataFrameBuilder().build(rows, ["metric", "action", "pre", "post", "change"])


class ImpurityReport(BaseAnalysis):
    """Score distribution, top holders and dusting summary of a committed store.

    Given the block stream, pools and a sanction height it also compares pool
    activity before and after the sanction.
    """

    name = "report"

    def run(
        self,
        store: HistoryStore,
        graph: TxGraph | None = None,
        sanctions: SanctionSet | None = None,
        top: int = 10,
        dust_cap: int = DUST_CAP,
        blocks: Iterable[Block] | None = None,
        pools: Iterable[Address] | None = None,
        sanction_block: int | None = None,
    ) -> dict[str, pd.DataFrame]:
        records = list(store.iter_latest())
        report = {
            "score_distribution": score_distribution(records),
            "top_holders": top_holders(records, top),
        }
        if graph is not None and sanctions is not None and store.last_block is not None:
            summary = dusting_quantification(graph, store, sanctions, 0, store.last_block, dust_cap)
            report["dusting"] = DataFrameBuilder().build(
                [{**vars(summary), "amplification": summary.amplification}],
                ["dust_transfers", "dust_spent", "recipients", "recipient_balance", "amplification"],
            )
        if blocks is not None and pools and sanction_block is not None:
            report["sanction_impact"] = sanction_impact(blocks, pools, sanction_block)
        self.logger.info(f"Report over {len(records)} addresses at block {store.last_block}")
        return report
