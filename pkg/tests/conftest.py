import os

import pytest

from taintledger.core.history_store import HistoryStore
from taintledger.core.pipeline import LedgerPipeline
from taintledger.models.tx_graph import TxGraph
from taintledger.models.types import Address, SanctionEntry, SanctionSet


def make_address(index: int) -> Address:
    return Address(f"0x{index:040x}")


def pytest_collection_modifyitems(config, items):
    if os.getenv("TAINTLEDGER_RUN_PERF") == "1":
        return
    skip = pytest.mark.skip(reason="performance envelope; set TAINTLEDGER_RUN_PERF=1")
    for item in items:
        if "performance" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def addresses() -> list[Address]:
    return [make_address(i) for i in range(1, 21)]


@pytest.fixture
def memory_store():
    store = HistoryStore(None)
    yield store
    store.close()


@pytest.fixture
def lab_factory():
    """Build an in-memory pipeline with a transfer graph from genesis balances and sanctioned addresses."""

    def build(genesis: dict[Address, int], sanctioned=(), start_block: int = 1, **kwargs) -> LedgerPipeline:
        sanctions = SanctionSet(
            entry if isinstance(entry, SanctionEntry) else SanctionEntry(entry, 0) for entry in sanctioned
        )
        return LedgerPipeline.create(
            genesis, sanctions, start_block, HistoryStore(None), TxGraph(), progress_every=0, **kwargs
        )

    return build
