from fractions import Fraction
from itertools import combinations

import networkx as nx
import numpy as np
import pytest

from conftest import make_address
from taintledger.analysis.census import (
    DepositProbeAnalysis,
    MotifAnalysis,
    deposits_into,
    detect_test_deposits,
    producer_census,
)
from taintledger.core.history_store import HistoryStore
from taintledger.core.pipeline import LedgerPipeline
from taintledger.core.synth import ChainGenerator, GeneratorConfig
from taintledger.models.tx_graph import CONNECTED_TRIADS, TxGraph, motif_census, motif_frequencies
from taintledger.models.types import BalanceOp, Block, SanctionEntry, SanctionSet


def brute_force_triads(graph: nx.DiGraph) -> dict[str, int]:
    """Triad classes by mutual/asymmetric/null dyad counts plus edge orientation.

    A lone asymmetric edge next to a mutual dyad is 111D when it points into
    the mutual pair and 111U when it points out of it.
    """
    counts: dict[str, int] = {}
    for triple in combinations(graph.nodes, 3):
        mutual, asym = [], []
        for x, y in combinations(triple, 2):
            forward, backward = graph.has_edge(x, y), graph.has_edge(y, x)
            if forward and backward:
                mutual.append((x, y))
            elif forward:
                asym.append((x, y))
            elif backward:
                asym.append((y, x))
        code = f"{len(mutual)}{len(asym)}{3 - len(mutual) - len(asym)}"
        out_degree = {v: sum(1 for a, _ in asym if a == v) for v in triple}
        in_degree = {v: sum(1 for _, b in asym if b == v) for v in triple}
        if code == "111":
            ((_, head),) = asym
            code += "D" if head in mutual[0] else "U"
        elif code == "021":
            code += "D" if 2 in out_degree.values() else "U" if 2 in in_degree.values() else "C"
        elif code == "030":
            code += "T" if 2 in out_degree.values() else "C"
        elif code == "120":
            code += "D" if 2 in out_degree.values() else "U" if 2 in in_degree.values() else "C"
        counts[code] = counts.get(code, 0) + 1
    return counts


def test_motif_census_matches_brute_force():
    rng = np.random.default_rng(0)
    for index in range(40):
        size = int(rng.integers(3, 51))
        graph = nx.gnp_random_graph(size, float(rng.uniform(0.05, 0.5)), seed=index, directed=True)
        expected = brute_force_triads(graph)
        census = motif_census(graph, include_disconnected=True)
        assert {code: count for code, count in census.items() if count} == expected


def test_census_collapses_parallel_and_self_transfers():
    a, b, c = (make_address(i) for i in (1, 2, 3))
    graph = TxGraph.from_edges([(a, b), (a, b), (a, a), (b, c)])
    census = motif_census(graph)
    assert list(census) == list(CONNECTED_TRIADS)
    assert census["021C"] == 1
    assert sum(census.values()) == 1
    assert sum(motif_census(TxGraph.from_edges([(a, b)])).values()) == 0


def test_motif_frequencies():
    assert motif_frequencies({"021D": 1, "021U": 3}) == {"021D": 0.25, "021U": 0.75}
    assert motif_frequencies({"021D": 0}) == {"021D": 0.0}


def _scenario_chain(kind: str, **params):
    config = GeneratorConfig(
        address_count=10, block_count=12, ops_per_block=0, pool_activity=0.0,
        scenarios=[{"kind": kind, "at": 1, **params}],
    )
    return ChainGenerator(config, seed=2).generate()


def test_split_and_merge_overrepresents_stars_and_chains():
    chain = _scenario_chain("split_and_merge")
    graph = TxGraph.from_blocks(chain.blocks)
    observed = MotifAnalysis().run(graph)["counts"]
    view = graph.census_view()
    baseline = motif_census(nx.gnm_random_graph(view.number_of_nodes(), view.number_of_edges(), seed=0, directed=True))
    for code in ("021D", "021U", "021C"):
        assert observed[code] >= 10 * max(baseline[code], 1), code


@pytest.fixture(scope="module")
def probing():
    chain = _scenario_chain("test_depositing")
    (meta,) = chain.scenarios.values()
    return TxGraph.from_blocks(chain.blocks), chain.labels, meta


def test_probe_share_per_service(probing):
    graph, labels, meta = probing
    flagged, frame = DepositProbeAnalysis().run(graph, labels)
    assert flagged == set(meta["probers"])
    shares = {row["service"]: row for row in frame.to_dict("records")}
    service, other = shares[meta["service"]], shares[meta["other_service"]]
    assert (service["repeat_depositors"], service["test_depositors"], service["share"]) == (20, 10, "0.500000")
    assert (other["repeat_depositors"], other["test_depositors"], other["share"]) == (5, 0, "0.000000")


def test_probe_detection_is_monotone_in_the_gap(probing):
    graph, labels, _meta = probing
    deposits = deposits_into(graph, labels)
    sizes = [len(detect_test_deposits(deposits, max_gap_blocks=gap)) for gap in range(0, 10)]
    assert sizes == sorted(sizes)
    assert sizes[4] == 0 and sizes[5] == 10


def test_producer_census_counts_inclusion_conditions():
    s, a, c = make_address(1), make_address(2), make_address(3)
    x, y = make_address(50), make_address(51)
    sanctions = SanctionSet([SanctionEntry(s, 0)])
    store = HistoryStore(None)
    pipeline = LedgerPipeline.create({s: 100, c: 10}, sanctions, 1, store, progress_every=0)
    blocks = [
        Block(1, x, (BalanceOp.transfer(s, a, 10),)),
        Block(2, y, (BalanceOp.transfer(a, c, 4),)),
        Block(3, y, (BalanceOp.transfer(c, a, 1),)),
        Block(4, x, ()),
    ]
    pipeline.run(blocks)

    census = producer_census(blocks, store, sanctions)
    assert census.total_blocks == 4
    counts = census.producers
    assert (counts[x].blocks, counts[x].direct, counts[x].score_full, counts[x].score_half) == (2, 1, 0, 0)
    assert (counts[y].blocks, counts[y].direct, counts[y].score_full, counts[y].score_half) == (2, 0, 1, 1)
    assert producer_census(blocks, store, sanctions, pools={s}).producers[x].direct == 1

    rows = {row["producer"]: row for row in census.to_frame().to_dict("records")}
    assert rows[x]["block_share"] == "0.500000"
    assert rows[x]["direct_share"] == "1.000000"
    assert rows[y]["half_share"] == "1.000000"
    assert store.query_at(c, 2).score == Fraction(4, 14)
