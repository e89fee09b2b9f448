import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_address
from rational_oracle import RationalLedger, haircut
from taintledger.core.ledger import apply_block, apply_op, ceil_div, initialize
from taintledger.errors import InvalidChainData, StreamOrderError, ValidationError
from taintledger.models.types import MAX_AMOUNT, BalanceOp, Block, ImpurityRecord, OpKind, SanctionEntry, SanctionSet

S, A, B, C = (make_address(i) for i in (1, 2, 3, 4))
PRODUCER = make_address(99)
UNIVERSE = [make_address(i) for i in range(1, 9)]


def sanctioned(*entries) -> SanctionSet:
    return SanctionSet(e if isinstance(e, SanctionEntry) else SanctionEntry(e, 0) for e in entries)


def test_ceil_div_rounds_up():
    assert ceil_div(1, 3) == 1
    assert ceil_div(6, 3) == 2
    assert ceil_div(0, 7) == 0


def test_initialize_sets_sanctioned_fixed_point():
    state = initialize({S: 100, A: 50}, sanctioned(S), start_block=1)
    assert state.record(S) == ImpurityRecord(100, 100)
    assert state.record(A) == ImpurityRecord(0, 50)
    assert state.last_block == 0


def test_initialize_rejects_duplicates():
    with pytest.raises(ValidationError):
        initialize([(A, 1), (A, 2)], SanctionSet(), start_block=1)


def test_transfer_haircut_rounds_against_the_sender():
    state = initialize({A: 3}, SanctionSet(), start_block=1)
    state.impurity[A] = 1
    apply_op(state, BalanceOp.transfer(A, B, 1), SanctionSet(), 1)
    assert state.record(A) == ImpurityRecord(0, 2)
    assert state.record(B) == ImpurityRecord(1, 1)


def test_snapshot_is_frozen_at_the_block_boundary():
    state = initialize({S: 10, A: 100}, sanctioned(S), start_block=1)
    snap = state.snapshot()
    apply_op(state, BalanceOp.transfer(S, A, 4), sanctioned(S), 1)
    assert snap[S] == ImpurityRecord(10, 10) and snap[A] == ImpurityRecord(0, 100)
    assert state.record(A) == ImpurityRecord(4, 104)
    with pytest.raises(TypeError):
        snap[A] = ImpurityRecord(0, 0)


def test_sanctioned_receiver_is_reset_to_full_impurity():
    state = initialize({S: 10, A: 100}, sanctioned(S), start_block=1)
    apply_op(state, BalanceOp.transfer(A, S, 40), sanctioned(S), 1)
    assert state.record(S) == ImpurityRecord(50, 50)
    assert state.record(A) == ImpurityRecord(0, 60)


def test_fee_burns_the_rounding_difference():
    state = initialize({A: 100}, SanctionSet(), start_block=1)
    state.impurity[A] = 10
    apply_op(state, BalanceOp.fee(A, PRODUCER, 50, 30), SanctionSet(), 1)
    assert state.record(A) == ImpurityRecord(5, 50)
    assert state.record(PRODUCER) == ImpurityRecord(3, 30)
    assert state.total_impurity() == 8


def test_reward_carries_no_impurity():
    state = initialize({}, SanctionSet(), start_block=1)
    apply_op(state, BalanceOp.reward(PRODUCER, 20), SanctionSet(), 1)
    assert state.record(PRODUCER) == ImpurityRecord(0, 20)


def test_self_transfer_keeps_the_record():
    state = initialize({A: 9}, SanctionSet(), start_block=1)
    state.impurity[A] = 4
    apply_op(state, BalanceOp.transfer(A, A, 5), SanctionSet(), 1)
    assert state.record(A) == ImpurityRecord(4, 9)


@pytest.mark.parametrize(
    "op",
    [
        BalanceOp.transfer(A, B, 101),
        BalanceOp(OpKind.TRANSFER, A, B, 5, 4),
        BalanceOp.fee(A, PRODUCER, 3, 4),
        BalanceOp(OpKind.REWARD, A, B, 0, 1),
        BalanceOp.transfer(A, B, MAX_AMOUNT + 1),
    ],
)
def test_invalid_ops_are_rejected(op):
    state = initialize({A: 100}, SanctionSet(), start_block=1)
    with pytest.raises(InvalidChainData):
        apply_op(state, op, SanctionSet(), 1)


def test_blocks_must_arrive_in_order():
    state = initialize({A: 1}, SanctionSet(), start_block=5)
    with pytest.raises(StreamOrderError):
        apply_block(state, Block(6, PRODUCER), SanctionSet())


def test_delta_set_lists_only_changed_records():
    state = initialize({A: 10, B: 10, C: 10}, SanctionSet(), start_block=1)
    state, deltas = apply_block(state, Block(1, PRODUCER, (BalanceOp.transfer(A, B, 4),)), SanctionSet())
    assert set(deltas) == {A, B}
    assert deltas.records[B] == ImpurityRecord(0, 14)


def test_late_listing_sweeps_the_balance_into_impurity():
    sanctions = sanctioned(SanctionEntry(A, 3))
    state = initialize({A: 70}, sanctions, start_block=1)
    for number in (1, 2):
        state, deltas = apply_block(state, Block(number, PRODUCER), sanctions)
        assert len(deltas) == 0
    state, deltas = apply_block(state, Block(3, PRODUCER), sanctions)
    assert deltas.records == {A: ImpurityRecord(70, 70)}


@pytest.mark.parametrize("zero_on_delist, expected", [(False, 50), (True, 0)])
def test_delisting_keeps_or_zeroes_impurity(zero_on_delist, expected):
    sanctions = sanctioned(SanctionEntry(A, 0, 3))
    state = initialize({A: 50}, sanctions, start_block=1, zero_on_delist=zero_on_delist)
    for number in (1, 2, 3):
        state, deltas = apply_block(state, Block(number, PRODUCER), sanctions)
    assert state.record(A) == ImpurityRecord(expected, 50)
    assert (A in deltas) is zero_on_delist


@st.composite
def chains(draw, max_blocks: int = 8, max_ops: int = 12):
    holders = UNIVERSE[: draw(st.integers(2, len(UNIVERSE)))]
    genesis = {a: draw(st.integers(0, 10**6)) for a in holders}
    listed = draw(st.lists(st.sampled_from(holders), max_size=2, unique=True))
    entries = [SanctionEntry(a, 0) for a in listed]
    late = draw(st.none() | st.tuples(st.sampled_from([a for a in UNIVERSE if a not in listed]), st.integers(2, 6)))
    if late is not None:
        entries.append(SanctionEntry(late[0], late[1]))
    op = st.tuples(
        st.sampled_from(["transfer", "fee", "reward"]),
        st.integers(0, len(UNIVERSE) - 1),
        st.integers(0, len(UNIVERSE) - 1),
        st.integers(0, 100),
        st.integers(0, 100),
    )
    intents = draw(st.lists(st.lists(op, max_size=max_ops), min_size=1, max_size=max_blocks))
    return genesis, SanctionSet(entries), intents


def _concrete(intent, oracle: RationalLedger) -> BalanceOp:
    kind, i, j, share, keep = intent
    sender, receiver = UNIVERSE[i], UNIVERSE[j]
    available = oracle.balance.get(sender, 0)
    if kind == "transfer":
        return BalanceOp.transfer(sender, receiver, available * share // 100)
    if kind == "fee":
        sent = available * share // 100
        return BalanceOp.fee(sender, PRODUCER, sent, sent * keep // 100)
    return BalanceOp.reward(receiver, share * 1000 + 1)


def _replay(genesis, sanctions, intents, check):
    state = initialize(genesis, sanctions, start_block=1)
    oracle = RationalLedger(genesis, sanctions, start_block=1)
    for number, block_intents in enumerate(intents, start=1):
        oracle.begin_block(number)
        ops = []
        for intent in block_intents:
            op = _concrete(intent, oracle)
            before = sum(oracle.impurity.values())
            pre = oracle.record(op.sender) if op.sender is not None else (0, 0)
            oracle.apply_op(op, number)
            ops.append(op)
            check(op, pre, sum(oracle.impurity.values()) - before, number)
        state, _ = apply_block(state, Block(number, PRODUCER, tuple(ops)), sanctions)
        for address in set(oracle.balance) | set(state.balance):
            assert (state.impurity.get(address, 0), state.balance.get(address, 0)) == oracle.record(address)
    return state


@pytest.mark.property
@settings(max_examples=200, deadline=None)
@given(chains())
def test_engine_matches_rational_oracle(chain):
    genesis, sanctions, intents = chain
    state = _replay(genesis, sanctions, intents, lambda *_: None)
    for address in state.addresses():
        record = state.record(address)
        if sanctions.is_sanctioned(address, state.last_block) and record.balance:
            assert record.impurity == record.balance


@pytest.mark.property
@settings(max_examples=200, deadline=None)
@given(chains())
def test_conservation_per_op_kind(chain):
    genesis, sanctions, intents = chain

    def check(op, pre, change, number):
        if sanctions.is_sanctioned(op.receiver, number):
            return
        if op.kind is OpKind.FEE:
            burned = haircut(op.sent, *pre) - haircut(op.received, *pre)
            assert change == -burned <= 0
        else:
            assert change == 0

    _replay(genesis, sanctions, intents, check)


@pytest.mark.property
@settings(max_examples=100, deadline=None)
@given(chains(), st.integers(0, 7))
def test_impurity_never_exceeds_balance(chain, index):
    genesis, sanctions, intents = chain
    state = _replay(genesis, sanctions, intents, lambda *_: None)
    record = state.record(UNIVERSE[index])
    assert 0 <= record.impurity <= record.balance


@pytest.mark.property
@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_thousand_op_blocks_match_rational_oracle(seed):
    rng = np.random.default_rng(seed)
    genesis = {a: int(b) for a, b in zip(UNIVERSE, rng.integers(0, 10**6, size=len(UNIVERSE)))}
    sanctions = sanctioned(UNIVERSE[0], SanctionEntry(UNIVERSE[5], 3))
    kinds = ("transfer", "fee", "reward")
    intents = []
    for _ in range(4):
        draws = zip(
            rng.choice(3, size=1000, p=[0.8, 0.15, 0.05]),
            rng.integers(0, len(UNIVERSE), size=(1000, 2)),
            rng.integers(0, 101, size=(1000, 2)),
        )
        intents.append([(kinds[k], int(i), int(j), int(share), int(keep)) for k, (i, j), (share, keep) in draws])
    state = _replay(genesis, sanctions, intents, lambda *_: None)
    assert state.last_block == 4
    assert state.record(UNIVERSE[5]).impurity == state.record(UNIVERSE[5]).balance


@pytest.mark.property
@settings(max_examples=100, deadline=None)
@given(chains())
def test_balance_moves_only_by_rewards_and_fee_burns(chain):
    genesis, sanctions, intents = chain
    state = initialize(genesis, sanctions, start_block=1)
    oracle = RationalLedger(genesis, sanctions, start_block=1)
    expected = sum(genesis.values())
    assert state.total_balance() == expected
    for number, block_intents in enumerate(intents, start=1):
        oracle.begin_block(number)
        ops = []
        for intent in block_intents:
            op = _concrete(intent, oracle)
            oracle.apply_op(op, number)
            ops.append(op)
        state, _ = apply_block(state, Block(number, PRODUCER, tuple(ops)), sanctions)
        expected += sum(op.received - op.sent for op in ops)
        assert state.total_balance() == expected


def test_failing_op_rolls_the_whole_block_back():
    state = initialize({A: 10, B: 5}, sanctioned(S), start_block=1)
    before = state.snapshot()
    block = Block(1, PRODUCER, (BalanceOp.transfer(A, C, 4), BalanceOp.transfer(B, A, 6)))
    with pytest.raises(InvalidChainData):
        apply_block(state, block, sanctioned(S))
    assert dict(state.snapshot()) == dict(before)
    assert C not in state
    assert state.next_block == 1
    state, deltas = apply_block(state, Block(1, PRODUCER, block.ops[:1]), sanctioned(S))
    assert set(deltas) == {A, C}
