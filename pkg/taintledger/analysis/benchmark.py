import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from taintledger.analysis.base_analysis import BaseAnalysis
from taintledger.core.chain_ingest import read_blocks, read_genesis, read_sanctions
from taintledger.core.history_store import HistoryStore
from taintledger.core.pipeline import LedgerPipeline
from taintledger.core.synth import GeneratorConfig, synth_chain
from taintledger.models.data_frame_builder import DataFrameBuilder


@dataclass(frozen=True)
class BenchResult:
    blocks: int
    ops: int
    addresses: int
    ingest_seconds: float
    blocks_per_second: float
    ops_per_second: float
    median_latest_ms: float
    median_at_ms: float

    def to_frame(self) -> pd.DataFrame:
        return DataFrameBuilder().build([vars(self)], list(vars(self)))


class Benchmark(BaseAnalysis):
    """Generate a chain, ingest it into a fresh store and time point queries."""

    name = "bench"

    def __init__(self, samples: int = 1000):
        super().__init__()
        self.samples = samples

    def run(self, config: GeneratorConfig, seed: int, workdir: str | Path | None = None) -> BenchResult:
        with tempfile.TemporaryDirectory(dir=workdir) as scratch:
            chain_dir = synth_chain(config, seed, Path(scratch) / "chain")
            genesis = read_genesis(chain_dir / "genesis.jsonl")
            sanctions = read_sanctions(chain_dir / "sanctions.txt")
            with HistoryStore(Path(scratch) / "store") as store:
                pipeline = LedgerPipeline.create(genesis, sanctions, config.start_block, store)
                metrics = pipeline.run(read_blocks(chain_dir / "blocks.jsonl"))
                latest_ms, at_ms = self._time_queries(store, pipeline.state.addresses(), seed)
                addresses = store.stats().address_count
        result = BenchResult(
            blocks=metrics.blocks,
            ops=metrics.ops,
            addresses=addresses,
            ingest_seconds=metrics.seconds,
            blocks_per_second=metrics.blocks_per_second,
            ops_per_second=metrics.ops_per_second,
            median_latest_ms=latest_ms,
            median_at_ms=at_ms,
        )
        self.logger.info(
            f"Ingest {result.blocks_per_second:.1f} blocks/s, {result.ops_per_second:.0f} ops/s; "
            f"median query_latest {latest_ms:.3f} ms, query_at {at_ms:.3f} ms"
        )
        return result

    def _time_queries(self, store: HistoryStore, addresses: list, seed: int) -> tuple[float, float]:
        if not addresses or store.last_block is None:
            return 0.0, 0.0
        rng = np.random.default_rng(seed)
        picks = rng.integers(0, len(addresses), size=self.samples)
        heights = rng.integers(0, store.last_block + 1, size=self.samples)
        latest, historical = [], []
        for index, height in zip(picks, heights):
            address = addresses[int(index)]
            started = time.perf_counter()
            store.query_latest(address)
            latest.append(time.perf_counter() - started)
            started = time.perf_counter()
            store.query_at(address, int(height))
            historical.append(time.perf_counter() - started)
        return float(np.median(latest) * 1000), float(np.median(historical) * 1000)
