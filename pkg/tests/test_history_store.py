import sqlite3

import numpy as np
import pytest

from conftest import make_address
from taintledger.core.balance_provider import StaticBalanceProvider
from taintledger.core.history_store import HistoryStore, decode_record, encode_record, history_key
from taintledger.core.pipeline import LedgerPipeline
from taintledger.core.synth import ChainGenerator, GeneratorConfig
from taintledger.errors import FutureBlockError, StoreClosed, StreamOrderError, ValidationError
from taintledger.models.tx_graph import TxGraph
from taintledger.models.types import BalanceOp, Block, DeltaSet, ImpurityRecord, SanctionSet

A, B = make_address(1), make_address(2)


def deltas(block: int, **records) -> DeltaSet:
    return DeltaSet(block, {make_address(int(k[1:])): ImpurityRecord(*v) for k, v in records.items()})


def commit_empty(store: HistoryStore, upto: int) -> None:
    start = 0 if store.last_block is None else store.last_block + 1
    for block in range(start, upto + 1):
        store.commit_block(DeltaSet(block), block)


def test_fresh_store_is_empty(memory_store):
    stats = memory_store.stats()
    assert (stats.record_count, stats.address_count, stats.last_block) == (0, 0, None)
    assert memory_store.query_latest(A) == ImpurityRecord.untouched()


def test_history_keys_sort_by_address_then_block():
    assert history_key(A, 2) < history_key(A, 10) < history_key(B, 0)
    record = ImpurityRecord(3, 2**255)
    assert decode_record(encode_record(record)) == record


def test_query_at_returns_the_greatest_height_at_or_below(memory_store):
    commit_empty(memory_store, 4)
    memory_store.commit_block(deltas(5, a1=(1, 10)), 5)
    commit_empty(memory_store, 8)
    memory_store.commit_block(deltas(9, a1=(2, 20)), 9)
    commit_empty(memory_store, 12)

    assert memory_store.query_latest(A) == ImpurityRecord(2, 20)
    assert memory_store.query_at(A, 7) == ImpurityRecord(1, 10)
    assert memory_store.query_at(A, 9) == ImpurityRecord(2, 20)
    assert memory_store.query_at(A, 12) == ImpurityRecord(2, 20)
    assert memory_store.query_at(A, 4) == ImpurityRecord.untouched()
    assert memory_store.history_of(A) == [(5, ImpurityRecord(1, 10)), (9, ImpurityRecord(2, 20))]
    assert memory_store.has_record(A, 5) and not memory_store.has_record(A, 4)


def test_query_beyond_last_block_is_rejected(memory_store):
    commit_empty(memory_store, 3)
    with pytest.raises(FutureBlockError):
        memory_store.query_at(A, 4)


def test_commits_must_be_contiguous(memory_store):
    commit_empty(memory_store, 2)
    with pytest.raises(StreamOrderError):
        memory_store.commit_block(DeltaSet(4), 4)
    with pytest.raises(ValidationError):
        HistoryStore(None).commit_block(DeltaSet(-1), -1)


def test_closed_store_refuses_work():
    store = HistoryStore(None)
    store.close()
    with pytest.raises(StoreClosed):
        store.query_latest(A)


def test_reopened_store_reports_identical_stats(tmp_path):
    with HistoryStore(tmp_path / "db") as store:
        commit_empty(store, 1)
        store.commit_block(deltas(2, a1=(5, 50), a2=(0, 7)), 2)
        before = store.stats()
    with HistoryStore(tmp_path / "db") as reopened:
        after = reopened.stats()
        assert (after.record_count, after.address_count, after.last_block) == (
            before.record_count, before.address_count, before.last_block
        )
        assert reopened.query_at(A, 2) == ImpurityRecord(5, 50)


def test_balance_provider_fills_untouched_balances():
    store = HistoryStore(None, balance_provider=StaticBalanceProvider({B: 99}))
    commit_empty(store, 0)
    assert store.query_latest(B) == ImpurityRecord(0, 99)
    assert store.query_at(B, 0) == ImpurityRecord(0, 99)


def _small_chain(seed: int = 11):
    config = GeneratorConfig(
        address_count=30, block_count=40, ops_per_block=8, pool_activity=0.3,
        scenarios=[{"kind": "dusting", "at": 2, "victims": 4}],
    )
    return ChainGenerator(config, seed).generate()


def test_resumed_ingest_matches_uninterrupted_run(tmp_path):
    chain = _small_chain()
    with HistoryStore(tmp_path / "once") as store:
        LedgerPipeline.create(chain.genesis, chain.sanctions, 1, store, progress_every=0).run(chain.blocks)
        expected = dict(store.iter_latest())

    with HistoryStore(tmp_path / "twice") as store:
        LedgerPipeline.create(chain.genesis, chain.sanctions, 1, store, progress_every=0).run(chain.blocks[:15])
    with HistoryStore(tmp_path / "twice") as store:
        pipeline = LedgerPipeline.resume(store, chain.sanctions, progress_every=0)
        with pytest.raises(StreamOrderError):
            pipeline.run(chain.blocks[10:])
    with HistoryStore(tmp_path / "twice") as store:
        LedgerPipeline.resume(store, chain.sanctions, progress_every=0).run(chain.blocks[15:])
        assert dict(store.iter_latest()) == expected


def test_query_at_reconstructs_every_replayed_height():
    chain = _small_chain(seed=5)
    store = HistoryStore(None)
    pipeline = LedgerPipeline.create(chain.genesis, chain.sanctions, 1, store, progress_every=0)
    snapshots = {0: pipeline.state.snapshot()}
    for block in chain.blocks:
        pipeline.apply(block)
        snapshots[block.number] = pipeline.state.snapshot()

    everyone = sorted(set().union(*snapshots.values()))
    heights = np.random.default_rng(0).choice(sorted(snapshots), size=20)
    for height in map(int, heights):
        snapshot = snapshots[height]
        for address in everyone:
            record = store.query_at(address, height)
            if address in snapshot:
                assert record == snapshot[address]
            else:
                assert record == ImpurityRecord.untouched()


def test_empty_store_has_no_state_to_resume(memory_store):
    with pytest.raises(ValidationError):
        memory_store.load_state()


def test_load_state_restores_the_writer_position(memory_store):
    pipeline = LedgerPipeline.create({A: 10}, SanctionSet(), 3, memory_store, progress_every=0)
    pipeline.advance_to(6)
    state = memory_store.load_state()
    assert state.next_block == 6
    assert state.start_block == 3
    assert state.record(A) == ImpurityRecord(0, 10)


def test_failed_commit_leaves_the_writer_unchanged(monkeypatch, memory_store):
    graph = TxGraph()
    pipeline = LedgerPipeline.create({A: 10}, SanctionSet(), 1, memory_store, graph, progress_every=0)
    block = Block(1, make_address(99), (BalanceOp.transfer(A, B, 4),))

    def disk_full(*_args, **_kwargs):
        raise sqlite3.OperationalError("database or disk is full")

    monkeypatch.setattr(memory_store, "commit_block", disk_full)
    with pytest.raises(sqlite3.OperationalError):
        pipeline.apply(block)
    assert pipeline.next_block == 1
    assert pipeline.state.record(A) == ImpurityRecord(0, 10)
    assert B not in pipeline.state
    assert list(graph.transfers()) == []

    monkeypatch.undo()
    pipeline.apply(block)
    assert memory_store.query_latest(B) == ImpurityRecord(0, 4)
    assert len(list(graph.transfers())) == 1
