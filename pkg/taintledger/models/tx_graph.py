from bisect import bisect_left, bisect_right
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Iterator

import networkx as nx

from taintledger.models.types import Address, Block, OpKind
from taintledger.utils.logger import setup_logger

# Directed triad classes in which all three nodes are connected.
CONNECTED_TRIADS = (
    "021D", "021U", "021C", "111D", "111U", "030T", "030C",
    "201", "120D", "120U", "120C", "210", "300",
)
DISCONNECTED_TRIADS = ("003", "012", "102")


@dataclass(frozen=True, slots=True)
class Transfer:
    """One value-transfer edge, annotated with the sender's pre-op record.

    ``taint`` is the impurity the transfer carried (0 for graphs built
    without a ledger).
    """

    sender: Address
    receiver: Address
    amount: int
    block: int
    seq: int
    taint: int = 0
    sender_impurity: int = 0
    sender_balance: int = 0


class TxGraph:
    """Directed multigraph of value transfers, ordered by (block, position)."""

    def __init__(self):
        self.graph = nx.MultiDiGraph()
        self.logger = setup_logger(__name__)
        self._transfers: list[Transfer] = []
        self._outgoing: dict[Address, list[Transfer]] = defaultdict(list)
        self._incoming: dict[Address, list[Transfer]] = defaultdict(list)
        self._seq = 0

    @classmethod
    def from_blocks(cls, blocks: Iterable[Block]) -> "TxGraph":
        """Structure-only graph (no taint annotations) from transfer ops."""
        graph = cls()
        for block in blocks:
            for op in block.ops:
                if op.kind is OpKind.TRANSFER:
                    graph.add_transfer(op.sender, op.receiver, op.sent, block.number)
        return graph

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[Address, Address]], block: int = 0) -> "TxGraph":
        graph = cls()
        for sender, receiver in edges:
            graph.add_transfer(sender, receiver, 1, block)
        return graph

    def add_transfer(
        self,
        sender: Address,
        receiver: Address,
        amount: int,
        block: int,
        taint: int = 0,
        sender_impurity: int = 0,
        sender_balance: int = 0,
    ) -> Transfer:
        """Append a transfer; blocks must be added in non-decreasing order."""
        transfer = Transfer(sender, receiver, amount, block, self._seq, taint, sender_impurity, sender_balance)
        self._seq += 1
        self._transfers.append(transfer)
        self._outgoing[sender].append(transfer)
        self._incoming[receiver].append(transfer)
        self.graph.add_edge(sender, receiver, key=transfer.seq, amount=amount, block=block)
        return transfer

    def transfers(self, until: int | None = None) -> Iterator[Transfer]:
        """All transfers in execution order, optionally up to and including block ``until``."""
        for transfer in self._transfers:
            if until is not None and transfer.block > until:
                break
            yield transfer

    def outgoing(self, address: Address, since: int = 0) -> list[Transfer]:
        """Transfers sent by ``address`` at or after block ``since``."""
        sent = self._outgoing.get(address, [])
        start = bisect_left(sent, since, key=lambda t: t.block)
        return sent[start:]

    def incoming(self, address: Address, until: int | None = None) -> list[Transfer]:
        """Transfers received by ``address`` up to and including block ``until``."""
        received = self._incoming.get(address, [])
        if until is None:
            return list(received)
        return received[: bisect_right(received, until, key=lambda t: t.block)]

    def tx_count(self, address: Address) -> int:
        if address not in self.graph:
            return 0
        return self.graph.in_degree(address) + self.graph.out_degree(address)

    @property
    def nodes(self) -> set[Address]:
        return set(self.graph.nodes)

    def __len__(self) -> int:
        return len(self._transfers)

    def census_view(self) -> nx.DiGraph:
        """Simple digraph: parallel edges collapsed, self-transfers dropped."""
        view = nx.DiGraph()
        view.add_nodes_from(self.graph.nodes)
        view.add_edges_from((u, v) for u, v in self.graph.edges() if u != v)
        return view


def motif_census(graph: TxGraph | nx.DiGraph, include_disconnected: bool = False) -> dict[str, int]:
    """Directed triad census restricted to connected three-node classes."""
    view = graph.census_view() if isinstance(graph, TxGraph) else graph
    if len(view) < 3:
        census = {code: 0 for code in CONNECTED_TRIADS + DISCONNECTED_TRIADS}
    else:
        census = nx.triadic_census(view)
    codes = CONNECTED_TRIADS + (DISCONNECTED_TRIADS if include_disconnected else ())
    return {code: census[code] for code in codes}


def motif_frequencies(census: dict[str, int]) -> dict[str, float]:
    """Counts normalized to sum to 1 (all zeros when the census is empty)."""
    total = sum(census.values())
    if total == 0:
        return {code: 0.0 for code in census}
    return {code: count / total for code, count in census.items()}
