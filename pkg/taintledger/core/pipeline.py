import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

from taintledger.core.history_store import HistoryStore
from taintledger.core.ledger import BlockJournal, LedgerState, apply_block_traced, genesis_deltas, initialize
from taintledger.errors import ConfigError, StreamOrderError
from taintledger.models.tx_graph import TxGraph
from taintledger.models.types import Address, BalanceOp, Block, DeltaSet, ImpurityRecord, OpKind, SanctionSet
from taintledger.utils.logger import setup_logger

LAB_PRODUCER = Address("0x" + "00" * 19 + "01")


@dataclass(frozen=True)
class IngestMetrics:
    blocks: int
    ops: int
    seconds: float

    @property
    def blocks_per_second(self) -> float:
        return self.blocks / self.seconds if self.seconds > 0 else float("inf")

    @property
    def ops_per_second(self) -> float:
        return self.ops / self.seconds if self.seconds > 0 else float("inf")


@dataclass(frozen=True)
class ChainView:
    """Read-only access to committed history plus the transfer graph that produced it."""

    store: HistoryStore
    graph: TxGraph
    sanctions: SanctionSet

    @property
    def last_block(self) -> int | None:
        return self.store.last_block

    def record_at(self, address: Address, block: int) -> ImpurityRecord:
        return self.store.query_at(address, block)

    def score_at(self, address: Address, block: int) -> Fraction:
        return self.store.query_at(address, block).score

    def impurity_at(self, address: Address, block: int) -> int:
        return self.store.query_at(address, block).impurity


class LedgerPipeline:
    """The single writer: applies blocks, commits their deltas, and records transfers."""

    def __init__(
        self,
        state: LedgerState,
        store: HistoryStore,
        sanctions: SanctionSet,
        graph: TxGraph | None = None,
        progress_every: int = 1000,
    ):
        self.logger = setup_logger(__name__)
        self.state = state
        self.store = store
        self.sanctions = sanctions
        self.graph = graph
        self.progress_every = progress_every

    @classmethod
    def create(
        cls,
        genesis: Mapping[Address, int],
        sanctions: SanctionSet,
        start_block: int,
        store: HistoryStore,
        graph: TxGraph | None = None,
        zero_on_delist: bool = False,
        progress_every: int = 1000,
    ) -> "LedgerPipeline":
        """Initialize the ledger and commit the genesis snapshot at ``start_block - 1``."""
        if start_block < 1:
            raise ConfigError(f"persisted chains must start at block >= 1, got {start_block}")
        if store.last_block is not None:
            raise StreamOrderError(f"store already holds blocks up to {store.last_block}")
        state = initialize(genesis, sanctions, start_block, zero_on_delist=zero_on_delist)
        store.commit_block(genesis_deltas(state), start_block - 1, start_block=start_block)
        return cls(state, store, sanctions, graph, progress_every)

    @classmethod
    def resume(
        cls,
        store: HistoryStore,
        sanctions: SanctionSet,
        graph: TxGraph | None = None,
        zero_on_delist: bool = False,
        progress_every: int = 1000,
    ) -> "LedgerPipeline":
        state = store.load_state(zero_on_delist=zero_on_delist)
        return cls(state, store, sanctions, graph, progress_every)

    @property
    def next_block(self) -> int:
        return self.state.next_block

    def apply(self, block: Block, validate: bool = True) -> DeltaSet:
        """Apply one block to the ledger, persist its deltas and record its transfers.

        The in-memory state only advances once the store has committed the block.
        """
        journal = BlockJournal()
        self.state, deltas, trace = apply_block_traced(
            self.state, block, self.sanctions, validate=validate, journal=journal
        )
        try:
            self.store.commit_block(deltas, block.number)
        except Exception:
            self.state.rollback(journal, block.number)
            self.logger.error(f"Commit of block {block.number} failed; ledger state rolled back")
            raise
        if self.graph is not None:
            for op, step in zip(block.ops, trace):
                if op.kind is OpKind.TRANSFER:
                    self.graph.add_transfer(
                        op.sender, op.receiver, op.sent, block.number,
                        taint=step.carried,
                        sender_impurity=step.sender_impurity,
                        sender_balance=step.sender_balance,
                    )
        return deltas

    def run(self, blocks: Iterable[Block], validate: bool = False) -> IngestMetrics:
        """Apply a block stream; blocks read through chain_ingest are already validated."""
        started = time.perf_counter()
        block_count = op_count = 0
        for block in blocks:
            if block.number < self.state.next_block:
                raise StreamOrderError(
                    f"block {block.number} is already committed (store at {self.state.last_block})"
                )
            self.apply(block, validate=validate)
            block_count += 1
            op_count += len(block.ops)
            if self.progress_every and block_count % self.progress_every == 0:
                elapsed = time.perf_counter() - started
                self.logger.info(
                    f"Applied {block_count} blocks ({block_count / elapsed:.1f} blocks/s, {op_count / elapsed:.0f} ops/s)"
                )
        metrics = IngestMetrics(block_count, op_count, time.perf_counter() - started)
        self.logger.info(f"Ingested {metrics.blocks} blocks / {metrics.ops} ops in {metrics.seconds:.2f}s")
        return metrics

    def advance_to(self, block: int, producer: Address = LAB_PRODUCER) -> None:
        """Commit empty blocks until ``block`` is the next block to apply."""
        while self.state.next_block < block:
            self.apply(Block(self.state.next_block, producer, ()))

    def append(self, ops: Iterable[BalanceOp], producer: Address = LAB_PRODUCER) -> DeltaSet:
        """Apply ``ops`` as the next block."""
        return self.apply(Block(self.state.next_block, producer, tuple(ops)))

    def view(self) -> ChainView:
        if self.graph is None:
            raise ConfigError("pipeline was created without a transfer graph")
        return ChainView(self.store, self.graph, self.sanctions)
