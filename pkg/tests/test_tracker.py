from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_address
from taintledger.analysis.tracker import (
    TrackConfig,
    evaluate,
    seeds_from_withdrawals,
    sweep_rows,
    threshold_sweep,
    track,
)
from taintledger.core.chain_ingest import extract_withdrawers
from taintledger.core.history_store import HistoryStore
from taintledger.core.pipeline import LedgerPipeline
from taintledger.core.synth import ChainGenerator, GeneratorConfig
from taintledger.errors import SeedNotFound, ValidationError
from taintledger.models.tx_graph import TxGraph
from taintledger.models.types import BalanceOp

P, W, A, C, D, E, M = (make_address(i) for i in range(1, 8))
LABELS = {E: "exchange"}


@pytest.fixture
def view(lab_factory):
    lab = lab_factory({P: 10_000, C: 900}, sanctioned=[P])
    lab.append([BalanceOp.transfer(P, W, 100)])
    lab.append([BalanceOp.transfer(W, A, 50), BalanceOp.transfer(W, C, 10)])
    lab.append([BalanceOp.transfer(A, E, 20), BalanceOp.transfer(A, M, 10)])
    lab.append([BalanceOp.transfer(C, D, 100)])
    return lab.view()


def config(threshold: Fraction) -> TrackConfig:
    return TrackConfig(threshold, prune_set=frozenset({M}), service_labels=LABELS)


def test_tracking_stops_below_the_threshold(view):
    state = track(view, {(W, 1)}, config(Fraction(1, 20)))
    assert state.flagged_addresses == {W, A, E}
    assert state.pruned == {M}
    assert state.impurity_volume == {"exchange": 20}
    assert {label: len(days) for label, days in state.active_days.items()} == {"exchange": 1}
    assert len(state.edges) == 4
    assert state.flagged[A].first_seen == 2
    assert state.flagged[A].entry_score == 1
    assert (state.flagged[E].first_seen, state.flagged[E].entry_score) == (3, 1)
    assert M not in state.flagged


def test_lower_threshold_follows_diluted_funds(view):
    state = track(view, {(W, 1)}, config(Fraction(1, 100)))
    assert state.flagged_addresses == {W, A, C, D, E}
    assert state.flagged[C].entry_score == Fraction(10, 910)
    assert state.flagged[D].entry_score == Fraction(1, 50)


def test_frames_render_scores(view):
    state = track(view, {(W, 1)}, config(Fraction(1, 20)))
    flagged = state.flagged_frame()
    assert list(flagged["address"]) == sorted([W, A, E])
    assert set(flagged["entry_score"]) == {"1.000000"}
    assert state.volume_frame().to_dict("records") == [
        {"label": "exchange", "impurity_volume": 20, "active_days": 1}
    ]
    assert list(state.edges_frame().columns) == ["sender", "receiver", "amount", "block"]


def test_seed_without_record_is_rejected(view):
    with pytest.raises(SeedNotFound):
        track(view, {(make_address(42), 4)}, config(Fraction(1, 20)))
    with pytest.raises(SeedNotFound):
        track(view, {(A, 1)}, config(Fraction(1, 20)))


def test_invalid_track_config():
    with pytest.raises(ValidationError):
        TrackConfig(Fraction(3, 2))
    with pytest.raises(ValidationError):
        TrackConfig(super_account_tx_floor=0)


def test_seeds_use_the_earliest_withdrawal():
    assert seeds_from_withdrawals([(A, 10, 5), (A, 10, 3), (C, 1, 4)]) == {(A, 3), (C, 4)}


def test_evaluate_counts_false_positive_kinds():
    result = evaluate({A, C, E}, {A, D}, LABELS)
    assert result.precision == Fraction(1, 3)
    assert result.recall == Fraction(1, 2)
    assert (result.fp_service, result.fp_unlabeled) == (1, 1)

    empty = evaluate(set(), {A}, LABELS)
    assert empty.precision == 1 and empty.zero_support
    with pytest.raises(ValidationError):
        evaluate({A}, set(), LABELS)


def test_sweep_grid_must_be_ascending(view):
    with pytest.raises(ValidationError):
        sweep_rows(view, {(W, 1)}, {W}, [Fraction(1, 10), Fraction(1, 20)])

def test_super_accounts_follow_the_transaction_floor(view):
    state = track(view, {(W, 1)}, TrackConfig(Fraction(1, 20), 3, frozenset({M}), LABELS))
    assert state.super_accounts == {W, A}
    assert not state.flagged[E].super_account


def test_prune_set_member_ends_the_trail_even_at_full_score(lab_factory):
    X = make_address(8)
    lab = lab_factory({P: 1000}, sanctioned=[P])
    lab.append([BalanceOp.transfer(P, W, 100)])
    lab.append([BalanceOp.transfer(W, M, 60)])
    lab.append([BalanceOp.transfer(M, X, 60)])
    view = lab.view()
    assert view.store.query_at(M, 2).score == 1

    state = track(view, {(W, 1)}, config(Fraction(1, 2)))
    assert state.flagged_addresses == {W}
    assert state.pruned == {M}
    assert all(edge.sender != M for edge in state.edges)


def _synth_view(seed: int):
    generator_config = GeneratorConfig(
        address_count=30, block_count=14, ops_per_block=4, pool_activity=0.0,
        scenarios=[{"kind": "exploit", "at": 2}],
    )
    chain = ChainGenerator(generator_config, seed=seed).generate()
    pipeline = LedgerPipeline.create(chain.genesis, chain.sanctions, 1, HistoryStore(None), TxGraph(), progress_every=0)
    pipeline.run(chain.blocks)
    (meta,) = chain.scenarios.values()
    seeds = seeds_from_withdrawals(extract_withdrawers(chain.withdrawals, {meta["pool"]}))
    return pipeline.view(), chain, meta, seeds


@pytest.mark.property
@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.fractions(0, 1, max_denominator=200), min_size=2, max_size=4))
def test_tracking_is_monotone_in_the_threshold(seed, thresholds):
    view, chain, meta, seeds = _synth_view(seed)
    base = TrackConfig(prune_set=frozenset({meta["mixer"]}), service_labels=chain.labels)
    seed_addresses = {address for address, _ in seeds}
    previous = None
    for threshold in sorted(thresholds, reverse=True):
        state = track(view, seeds, base.with_threshold(threshold))
        assert not state.flagged_addresses & state.pruned
        assert not {edge.sender for edge in state.edges} & state.pruned
        for address, entry in state.flagged.items():
            if address not in seed_addresses:
                assert entry.entry_score >= threshold
        if previous is not None:
            assert previous <= state.flagged_addresses
        previous = state.flagged_addresses


@pytest.fixture(scope="module")
def exploit():
    generator_config = GeneratorConfig(
        address_count=50, block_count=20, ops_per_block=5, pool_activity=0.0,
        scenarios=[{"kind": "exploit", "at": 2}],
    )
    chain = ChainGenerator(generator_config, seed=4).generate()
    pipeline = LedgerPipeline.create(chain.genesis, chain.sanctions, 1, HistoryStore(None), TxGraph(), progress_every=0)
    pipeline.run(chain.blocks)
    (meta,) = chain.scenarios.values()
    seeds = seeds_from_withdrawals(extract_withdrawers(chain.withdrawals, {meta["pool"]}))
    return pipeline.view(), chain, meta, seeds


def test_exploit_sweep_separates_the_decoy_branch(exploit):
    view, chain, meta, seeds = exploit
    assert {s for s, _ in seeds} == set(meta["seeds"])
    grid = [Fraction(1, 100), Fraction(13, 500), Fraction(3, 100), Fraction(1, 2)]
    rows = sweep_rows(view, seeds, chain.ground_truth, grid, TrackConfig(service_labels=chain.labels))
    precision = {row["threshold"]: row["precision"] for row in rows}
    assert precision[Fraction(1, 100)] == precision[Fraction(13, 500)] == Fraction(20, 63)
    assert precision[Fraction(3, 100)] == precision[Fraction(1, 2)] == Fraction(10, 11)
    assert all(row["recall"] == Fraction(4, 5) for row in rows)
    assert all(row["fp_service"] == 2 for row in rows)


def test_threshold_sweep_frame(exploit):
    view, chain, _meta, seeds = exploit
    frame = threshold_sweep(view, seeds, chain.ground_truth, [Fraction(1, 20)], TrackConfig(service_labels=chain.labels))
    (row,) = frame.to_dict("records")
    assert row["threshold"] == "0.050000"
    assert row["precision"] == "0.909091"
    assert row["recall"] == "0.800000"
