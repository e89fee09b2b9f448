from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, NamedTuple

import pandas as pd

from taintledger.analysis.base_analysis import BaseAnalysis
from taintledger.core.history_store import HistoryStore
from taintledger.models.data_frame_builder import DataFrameBuilder
from taintledger.models.tx_graph import TxGraph, motif_census, motif_frequencies
from taintledger.models.types import BASE_UNITS, Address, Block, SanctionSet

SMALL_CAP = BASE_UNITS // 2
LARGE_FLOOR = 5 * BASE_UNITS
MAX_GAP_BLOCKS = 50_000


class Deposit(NamedTuple):
    depositor: Address
    service: Address
    amount: int
    block: int


def deposits_into(graph: TxGraph, services: Iterable[Address]) -> list[Deposit]:
    """Every transfer into a service address, in execution order."""
    services = set(services)
    return [
        Deposit(t.sender, t.receiver, t.amount, t.block)
        for t in graph.transfers()
        if t.receiver in services and t.sender != t.receiver
    ]


def _by_pair(deposits: Iterable[Deposit]) -> dict[tuple[Address, Address], list[Deposit]]:
    pairs: dict[tuple[Address, Address], list[Deposit]] = defaultdict(list)
    for deposit in deposits:
        pairs[(deposit.depositor, deposit.service)].append(deposit)
    return pairs


def detect_test_deposits(
    deposits: Iterable[Deposit],
    small_cap: int = SMALL_CAP,
    large_floor: int = LARGE_FLOOR,
    max_gap_blocks: int = MAX_GAP_BLOCKS,
) -> set[Address]:
    """Depositors whose first deposit to a service is a small probe followed by a large one within the gap."""
    flagged = set()
    for (depositor, _service), sequence in _by_pair(deposits).items():
        probe = sequence[0]
        if probe.amount > small_cap:
            continue
        if any(
            d.amount >= large_floor and 0 <= d.block - probe.block <= max_gap_blocks
            for d in sequence[1:]
        ):
            flagged.add(depositor)
    return flagged


def deposit_probe_share(
    deposits: list[Deposit],
    labels: Mapping[Address, str],
    small_cap: int = SMALL_CAP,
    large_floor: int = LARGE_FLOOR,
    max_gap_blocks: int = MAX_GAP_BLOCKS,
) -> pd.DataFrame:
    """Per service: depositors with more than one deposit, and the share of them that test-deposited."""
    rows = []
    for service in sorted({d.service for d in deposits}):
        own = [d for d in deposits if d.service == service]
        repeat = {pair[0] for pair, seq in _by_pair(own).items() if len(seq) > 1}
        flagged = detect_test_deposits(own, small_cap, large_floor, max_gap_blocks) & repeat
        rows.append({
            "service": service,
            "label": labels.get(service, ""),
            "repeat_depositors": len(repeat),
            "test_depositors": len(flagged),
            "share": Fraction(len(flagged), len(repeat)) if repeat else Fraction(0),
        })
    return DataFrameBuilder().build(rows, ["service", "label", "repeat_depositors", "test_depositors", "share"])


@dataclass
class ProducerCounts:
    blocks: int = 0
    direct: int = 0
    score_full: int = 0
    score_half: int = 0


@dataclass
class ProducerCensus:
    producers: dict[Address, ProducerCounts] = field(default_factory=dict)

    @property
    def total_blocks(self) -> int:
        return sum(c.blocks for c in self.producers.values())

    def to_frame(self) -> pd.DataFrame:
        totals = ProducerCounts(
            self.total_blocks,
            sum(c.direct for c in self.producers.values()),
            sum(c.score_full for c in self.producers.values()),
            sum(c.score_half for c in self.producers.values()),
        )

        def share(part: int, whole: int) -> Fraction:
            return Fraction(part, whole) if whole else Fraction(0)

        rows = [
            {
                "producer": producer,
                "blocks": c.blocks,
                "direct": c.direct,
                "score_full": c.score_full,
                "score_half": c.score_half,
                "block_share": share(c.blocks, totals.blocks),
                "direct_share": share(c.direct, totals.direct),
                "full_share": share(c.score_full, totals.score_full),
                "half_share": share(c.score_half, totals.score_half),
            }
            for producer, c in sorted(self.producers.items())
        ]
        columns = ["producer", "blocks", "direct", "score_full", "score_half",
                   "block_share", "direct_share", "full_share", "half_share"]
        return DataFrameBuilder().build(rows, columns)


def producer_census(
    blocks: Iterable[Block], store: HistoryStore, sanctions: SanctionSet, pools: set[Address] | None = None
) -> ProducerCensus:
    """Per-producer block counts under each inclusion condition.

    Sender scores come from the parent block's state. Sanctioned senders only
    count as direct interactions, not as score conditions.
    """
    census = ProducerCensus()
    for block in blocks:
        n = block.number
        counts = census.producers.setdefault(block.producer, ProducerCounts())
        counts.blocks += 1
        direct = full = half = False
        for op in block.ops:
            touched = (op.sender, op.receiver)
            if pools is not None:
                direct = direct or any(a in pools for a in touched)
            else:
                direct = direct or any(a is not None and sanctions.is_sanctioned(a, n) for a in touched)
            if op.sender is None or sanctions.is_sanctioned(op.sender, n):
                continue
            if full and half:
                continue
            parent_score = store.query_at(op.sender, n - 1).score
            full = full or parent_score == 1
            half = half or parent_score >= Fraction(1, 2)
        counts.direct += direct
        counts.score_full += full
        counts.score_half += half
    return census


class MotifAnalysis(BaseAnalysis):
    """Connected triad census of a transfer graph."""

    name = "motifs"

    def run(self, graph: TxGraph) -> dict[str, dict]:
        counts = motif_census(graph)
        self.logger.info(f"Motif census over {len(graph.nodes)} nodes and {len(graph)} transfers")
        return {"counts": counts, "frequencies": motif_frequencies(counts)}


class DepositProbeAnalysis(BaseAnalysis):
    """Test-then-transfer detection over deposits into labeled services."""

    name = "test-deposits"

    def run(
        self,
        graph: TxGraph,
        labels: Mapping[Address, str],
        small_cap: int = SMALL_CAP,
        large_floor: int = LARGE_FLOOR,
        max_gap_blocks: int = MAX_GAP_BLOCKS,
    ) -> tuple[set[Address], pd.DataFrame]:
        deposits = deposits_into(graph, labels)
        flagged = detect_test_deposits(deposits, small_cap, large_floor, max_gap_blocks)
        self.logger.info(f"{len(flagged)} test depositors among {len(deposits)} deposits")
        return flagged, deposit_probe_share(deposits, labels, small_cap, large_floor, max_gap_blocks)


class ProducerCensusAnalysis(BaseAnalysis):
    name = "census"

    def run(
        self, blocks: Iterable[Block], store: HistoryStore, sanctions: SanctionSet, pools: set[Address] | None = None
    ) -> ProducerCensus:
        return producer_census(blocks, store, sanctions, pools)
