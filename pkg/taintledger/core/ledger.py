"""Impurity state machine.

A sender always loses ``ceil(sent * I / B)`` of impurity, computed from its
pre-op record; the receiver gains ``ceil(received * I / B)`` from the same
pre-op sender record, or is reset to I = B while it is sanctioned. Rewards carry
no impurity. The difference between the two ceilings on a fee is burned.
"""
from fractions import Fraction
from types import MappingProxyType
from typing import Iterable, Mapping, NamedTuple

from taintledger.errors import InvalidChainData, StreamOrderError, ValidationError
from taintledger.models.types import (
    Address,
    BalanceOp,
    Block,
    DeltaSet,
    ImpurityRecord,
    SanctionSet,
    check_amount,
    ratio,
)
from taintledger.utils.logger import setup_logger

logger = setup_logger(__name__)


class OpTrace(NamedTuple):
    carried: int
    sender_impurity: int
    sender_balance: int


class BlockJournal(dict):
    """Pre-block (impurity, balance) of every address a block touched.

    ``created`` holds the addresses the block brought into the state, so a
    rollback can drop them again.
    """

    def __init__(self):
        super().__init__()
        self.created: set[Address] = set()

    def note(self, state: "LedgerState", address: Address) -> None:
        if address in self:
            return
        if address not in state.balance:
            self.created.add(address)
        self[address] = (state.impurity.get(address, 0), state.balance.get(address, 0))


def ceil_div(numerator: int, denominator: int) -> int:
    return -(-numerator // denominator)


class LedgerState:
    """Mutable per-address (impurity, balance) table owned by a single writer.

    Readers should take ``snapshot()`` at a block boundary instead of sharing
    the live state.
    """

    __slots__ = ("impurity", "balance", "start_block", "next_block", "zero_on_delist")

    def __init__(self, start_block: int, zero_on_delist: bool = False):
        self.impurity: dict[Address, int] = {}
        self.balance: dict[Address, int] = {}
        self.start_block = start_block
        self.next_block = start_block
        self.zero_on_delist = zero_on_delist

    @property
    def last_block(self) -> int:
        """Height of the last applied block (start_block - 1 right after initialization)."""
        return self.next_block - 1

    def record(self, address: Address) -> ImpurityRecord:
        return ImpurityRecord(self.impurity.get(address, 0), self.balance.get(address, 0))

    def __contains__(self, address: object) -> bool:
        return address in self.balance

    def __len__(self) -> int:
        return len(self.balance)

    def addresses(self) -> list[Address]:
        return sorted(self.balance)

    def total_impurity(self) -> int:
        return sum(self.impurity.values())

    def total_balance(self) -> int:
        return sum(self.balance.values())

    def snapshot(self) -> Mapping[Address, ImpurityRecord]:
        """Immutable copy of every record, safe to hand to concurrent readers."""
        return MappingProxyType({a: ImpurityRecord(self.impurity.get(a, 0), b) for a, b in self.balance.items()})

    def transition(
        self,
        op: BalanceOp,
        sanctions: SanctionSet,
        block: int,
        touched: BlockJournal | None = None,
    ) -> int:
        """Apply one op in place; returns the impurity credited to the receiver by proportion."""
        sender, receiver = op.sender, op.receiver
        sent, received = op.sent, op.received
        impurity, balance = self.impurity, self.balance

        if touched is not None:
            for address in (sender, receiver):
                if address is not None:
                    touched.note(self, address)

        taint_out = taint_in = 0
        if sender is not None:
            b_sender = balance.get(sender, 0)
            i_sender = impurity.get(sender, 0)
            if b_sender < sent:
                raise InvalidChainData(f"block {block}: {sender} balance {b_sender} < sent {sent}")
            if b_sender and i_sender:
                taint_out = ceil_div(sent * i_sender, b_sender)
                taint_in = ceil_div(received * i_sender, b_sender)

        if sender is not None and sender == receiver:
            # both roles evaluated against the pre-op record
            new_balance = b_sender - sent + received
            new_impurity = i_sender - taint_out + taint_in
        else:
            if sender is not None and (sent or b_sender):
                balance[sender] = b_sender - sent
                impurity[sender] = i_sender - taint_out
            new_balance = balance.get(receiver, 0) + received
            new_impurity = impurity.get(receiver, 0) + taint_in

        if sanctions.is_sanctioned(receiver, block):
            new_impurity = new_balance
        balance[receiver] = new_balance
        impurity[receiver] = new_impurity
        return taint_in

    def set_impurity(self, address: Address, value: int, touched: BlockJournal | None = None) -> None:
        if address not in self.balance:
            return
        if touched is not None:
            touched.note(self, address)
        self.impurity[address] = value

    def rollback(self, journal: BlockJournal, block: int) -> None:
        """Undo a partly or fully applied ``block`` from its journal."""
        for address, (impurity, balance) in journal.items():
            if address in journal.created:
                self.impurity.pop(address, None)
                self.balance.pop(address, None)
            else:
                self.impurity[address] = impurity
                self.balance[address] = balance
        self.next_block = block


def initialize(
    balances: Mapping[Address, int] | Iterable[tuple[Address, int]],
    sanctions: SanctionSet,
    start_block: int,
    zero_on_delist: bool = False,
) -> LedgerState:
    """Build the state right before ``start_block``: sanctioned addresses hold I = B, everyone else I = 0."""
    state = LedgerState(start_block, zero_on_delist=zero_on_delist)
    pairs = balances.items() if isinstance(balances, Mapping) else balances
    for address, amount in pairs:
        if address in state.balance:
            raise ValidationError(f"duplicate address in initial balances: {address}")
        check_amount(amount, f"balance of {address}")
        state.balance[address] = amount
        state.impurity[address] = amount if sanctions.is_sanctioned(address, start_block) else 0
    logger.debug(f"Initialized ledger with {len(state)} addresses at block {start_block}")
    return state


def genesis_deltas(state: LedgerState) -> DeltaSet:
    """Records of every initialized address, committed as height start_block - 1."""
    return DeltaSet(state.last_block, {a: state.record(a) for a in state.addresses()})


def apply_op(state: LedgerState, op: BalanceOp, sanctions: SanctionSet, block: int) -> LedgerState:
    """Validate and apply one op to ``state`` (in place); returns the same state."""
    op.validate()
    state.transition(op, sanctions, block)
    return state


def apply_block(state: LedgerState, block: Block, sanctions: SanctionSet) -> tuple[LedgerState, DeltaSet]:
    """Apply a whole block in order and report every record it changed."""
    state, deltas, _ = apply_block_traced(state, block, sanctions)
    return state, deltas


def apply_block_traced(
    state: LedgerState,
    block: Block,
    sanctions: SanctionSet,
    validate: bool = True,
    journal: BlockJournal | None = None,
) -> tuple[LedgerState, DeltaSet, list["OpTrace"]]:
    """apply_block that also returns, per op, the impurity it carried and the sender's pre-op record.

    A block that fails part way is rolled back before the error propagates.
    Pass ``journal`` to keep the undo record for a later ``state.rollback``.
    """
    n = block.number
    if n != state.next_block:
        raise StreamOrderError(f"expected block {state.next_block}, got {n}")

    touched = journal if journal is not None else BlockJournal()
    trace: list[OpTrace] = []
    try:
        if n > state.start_block:
            for address in sanctions.activations_at(n):
                if sanctions.is_sanctioned(address, n):
                    state.set_impurity(address, state.balance.get(address, 0), touched)
            if state.zero_on_delist:
                for address in sanctions.deactivations_at(n):
                    state.set_impurity(address, 0, touched)

        for op in block.ops:
            if validate:
                op.validate()
            sender = op.sender
            i_pre = state.impurity.get(sender, 0) if sender is not None else 0
            b_pre = state.balance.get(sender, 0) if sender is not None else 0
            carried = state.transition(op, sanctions, n, touched)
            trace.append(OpTrace(carried, i_pre, b_pre))
    except Exception:
        state.rollback(touched, n)
        raise
    state.next_block = n + 1

    records = {}
    for address in sorted(touched):
        after = (state.impurity.get(address, 0), state.balance.get(address, 0))
        if after != touched[address]:
            records[address] = ImpurityRecord(*after)
    return state, DeltaSet(n, records), trace


def score(record: ImpurityRecord) -> Fraction:
    """Exact impurity score I/B (0 when B is 0)."""
    return ratio(record.impurity, record.balance)
