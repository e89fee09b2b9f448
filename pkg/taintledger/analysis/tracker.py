"""Threshold-terminated fund tracking from seed withdrawers.

Starting at the seeds, the tracker follows outgoing transfers breadth-first.
A recipient is flagged and expanded when its score right after the receiving
block is at least the threshold; otherwise the trail ends there. Deposits
into labeled services also add to that service's impurity volume, and the
service itself is scored like any other recipient. Prune-set addresses
(privacy tools) end the trail outright and are never flagged.
"""
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

import pandas as pd

from taintledger.analysis.base_analysis import BaseAnalysis
from taintledger.core.ledger import ceil_div
from taintledger.core.pipeline import ChainView
from taintledger.errors import SeedNotFound, ValidationError
from taintledger.models.data_frame_builder import DataFrameBuilder
from taintledger.models.types import Address

BLOCKS_PER_DAY = 7200

SWEEP_COLUMNS = [
    "threshold", "flagged", "true_positives", "precision", "recall",
    "fp_service", "fp_unlabeled", "zero_support",
]


@dataclass(frozen=True)
class TrackConfig:
    threshold: Fraction = Fraction(1, 20)
    super_account_tx_floor: int = 1000
    prune_set: frozenset[Address] = frozenset()
    service_labels: Mapping[Address, str] = field(default_factory=dict)

    def __post_init__(self):
        threshold = Fraction(self.threshold)
        if not 0 <= threshold <= 1:
            raise ValidationError(f"threshold must lie in [0, 1], got {threshold}")
        if self.super_account_tx_floor < 1:
            raise ValidationError("super_account_tx_floor must be positive")
        object.__setattr__(self, "threshold", threshold)
        object.__setattr__(self, "prune_set", frozenset(self.prune_set))

    def with_threshold(self, threshold: Fraction) -> "TrackConfig":
        return TrackConfig(threshold, self.super_account_tx_floor, self.prune_set, self.service_labels)


@dataclass
class FlaggedEntry:
    address: Address
    first_seen: int
    entry_score: Fraction
    peak_score: Fraction
    super_account: bool = False


@dataclass(frozen=True)
class TrackEdge:
    sender: Address
    receiver: Address
    amount: int
    block: int


@dataclass
class TrackState:
    frontier: set[Address] = field(default_factory=set)
    flagged: dict[Address, FlaggedEntry] = field(default_factory=dict)
    pruned: set[Address] = field(default_factory=set)
    impurity_volume: dict[str, int] = field(default_factory=dict)
    active_days: dict[str, set[int]] = field(default_factory=dict)
    edges: list[TrackEdge] = field(default_factory=list)

    @property
    def flagged_addresses(self) -> set[Address]:
        return set(self.flagged)

    @property
    def super_accounts(self) -> set[Address]:
        return {a for a, entry in self.flagged.items() if entry.super_account}

    def flagged_frame(self) -> pd.DataFrame:
        rows = [vars(self.flagged[a]) for a in sorted(self.flagged)]
        return DataFrameBuilder().build(
            rows, ["address", "first_seen", "entry_score", "peak_score", "super_account"]
        )

    def edges_frame(self) -> pd.DataFrame:
        return DataFrameBuilder().build((vars(e) for e in self.edges), ["sender", "receiver", "amount", "block"])

    def volume_frame(self) -> pd.DataFrame:
        rows = [
            {"label": label, "impurity_volume": volume, "active_days": len(self.active_days.get(label, ()))}
            for label, volume in sorted(self.impurity_volume.items())
        ]
        return DataFrameBuilder().build(rows, ["label", "impurity_volume", "active_days"])


@dataclass(frozen=True)
class Evaluation:
    precision: Fraction
    recall: Fraction
    true_positives: int
    false_positives: int
    fp_service: int
    fp_unlabeled: int
    zero_support: bool


def seeds_from_withdrawals(withdrawals: Iterable[tuple[Address, int, int]]) -> set[tuple[Address, int]]:
    """Earliest withdrawal height of every beneficiary."""
    first: dict[Address, int] = {}
    for beneficiary, _amount, block in withdrawals:
        first[beneficiary] = min(block, first.get(beneficiary, block))
    return set(first.items())


class FundTracker(BaseAnalysis):
    """Breadth-first tracking over a chain view."""

    name = "track"

    def __init__(self, view: ChainView, config: TrackConfig):
        super().__init__()
        self.view = view
        self.config = config

    def run(self, seeds: Iterable[tuple[Address, int]]) -> TrackState:
        config, store, graph = self.config, self.view.store, self.view.graph
        labels = config.service_labels
        state = TrackState()
        queue: deque[Address] = deque()
        expand_from: dict[Address, int] = {}
        # lowest block each address was already expanded from
        expanded_from: dict[Address, int] = {}

        def schedule(address: Address, block: int) -> None:
            if block < expand_from.get(address, block + 1):
                expand_from[address] = block
                if address not in state.frontier:
                    state.frontier.add(address)
                    queue.append(address)

        for address, height in sorted(seeds, key=lambda s: (s[1], s[0])):
            if not store.has_record(address, height):
                raise SeedNotFound(f"seed {address} has no stored record at or before block {height}")
            record_score = store.query_at(address, height).score
            entry = state.flagged.get(address)
            if entry is None or height < entry.first_seen:
                state.flagged[address] = FlaggedEntry(
                    address, height, record_score, record_score,
                    graph.tx_count(address) >= config.super_account_tx_floor,
                )
            schedule(address, height)

        expanded = 0
        while queue:
            sender = queue.popleft()
            state.frontier.discard(sender)
            since, covered = expand_from[sender], expanded_from.get(sender)
            expanded_from[sender] = since
            expanded += 1
            if expanded % 1000 == 0:
                self.logger.info(f"Expanded {expanded} addresses, frontier size {len(queue)}")
            for transfer in graph.outgoing(sender, since):
                receiver, block = transfer.receiver, transfer.block
                if covered is not None and block >= covered:
                    break
                state.edges.append(TrackEdge(sender, receiver, transfer.amount, block))
                if receiver in labels:
                    self._deposit(state, sender, transfer.amount, block, labels[receiver])
                if receiver in config.prune_set and receiver not in state.flagged:
                    state.pruned.add(receiver)
                    continue
                arrival = store.query_at(receiver, block).score
                entry = state.flagged.get(receiver)
                if entry is not None:
                    entry.peak_score = max(entry.peak_score, arrival)
                    if arrival >= config.threshold:
                        schedule(receiver, block)
                    continue
                if arrival >= config.threshold:
                    state.flagged[receiver] = FlaggedEntry(
                        receiver, block, arrival, arrival,
                        graph.tx_count(receiver) >= config.super_account_tx_floor,
                    )
                    schedule(receiver, block)

        self.logger.info(
            f"Tracking at threshold {float(config.threshold):.4f}: {len(state.flagged)} flagged, "
            f"{len(state.pruned)} pruned, {len(state.edges)} edges"
        )
        return state

    def _deposit(self, state: TrackState, sender: Address, amount: int, block: int, label: str) -> None:
        parent = self.view.store.query_at(sender, block - 1)
        balance = parent.balance or 0
        carried = ceil_div(amount * parent.impurity, balance) if balance else 0
        state.impurity_volume[label] = state.impurity_volume.get(label, 0) + min(carried, parent.impurity)
        if parent.score > self.config.threshold:
            state.active_days.setdefault(label, set()).add(block // BLOCKS_PER_DAY)


def track(view: ChainView, seeds: Iterable[tuple[Address, int]], config: TrackConfig) -> TrackState:
    return FundTracker(view, config).run(seeds)


def evaluate(
    flagged: Iterable[Address], ground_truth: Iterable[Address], service_labels: Mapping[Address, str]
) -> Evaluation:
    """Precision and recall of a flagged set; an empty flagged set has precision 1 with zero support."""
    flagged, truth = set(flagged), set(ground_truth)
    if not truth:
        raise ValidationError("ground truth must not be empty")
    hits = flagged & truth
    misses = flagged - truth
    fp_service = sum(1 for a in misses if a in service_labels)
    return Evaluation(
        precision=Fraction(len(hits), len(flagged)) if flagged else Fraction(1),
        recall=Fraction(len(hits), len(truth)),
        true_positives=len(hits),
        false_positives=len(misses),
        fp_service=fp_service,
        fp_unlabeled=len(misses) - fp_service,
        zero_support=not flagged,
    )


def sweep_rows(
    view: ChainView,
    seeds: Iterable[tuple[Address, int]],
    ground_truth: Iterable[Address],
    grid: list[Fraction],
    config: TrackConfig | None = None,
) -> list[dict]:
    """One tracking run and evaluation per threshold, with exact values."""
    grid = [Fraction(g) for g in grid]
    if grid != sorted(grid):
        raise ValidationError("threshold grid must be sorted ascending")
    config = config or TrackConfig()
    seeds, truth = list(seeds), set(ground_truth)
    rows = []
    for threshold in grid:
        state = track(view, seeds, config.with_threshold(threshold))
        result = evaluate(state.flagged, truth, config.service_labels)
        rows.append({
            "threshold": threshold,
            "flagged": len(state.flagged),
            "true_positives": result.true_positives,
            "precision": result.precision,
            "recall": result.recall,
            "fp_service": result.fp_service,
            "fp_unlabeled": result.fp_unlabeled,
            "zero_support": result.zero_support,
        })
    return rows


def threshold_sweep(
    view: ChainView,
    seeds: Iterable[tuple[Address, int]],
    ground_truth: Iterable[Address],
    grid: list[Fraction],
    config: TrackConfig | None = None,
) -> pd.DataFrame:
    """The sweep as a (threshold, precision, recall, ...) table for CSV output."""
    return DataFrameBuilder().build(sweep_rows(view, seeds, ground_truth, grid, config), SWEEP_COLUMNS)
