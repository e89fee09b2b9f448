import sqlite3
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from taintledger.core.balance_provider import BalanceProvider
from taintledger.core.ledger import LedgerState
from taintledger.errors import FutureBlockError, StoreClosed, StreamOrderError, ValidationError
from taintledger.models.types import (
    Address,
    DeltaSet,
    ImpurityRecord,
    address_bytes,
    address_from_bytes,
)
from taintledger.utils.logger import setup_logger

DB_FILE = "ledger.sqlite"
BLOCK_BYTES = 8
AMOUNT_BYTES = 32

_SCHEMA = [
    "CREATE TABLE IF NOT EXISTS latest (key BLOB PRIMARY KEY, value BLOB NOT NULL) WITHOUT ROWID",
    "CREATE TABLE IF NOT EXISTS history (key BLOB PRIMARY KEY, value BLOB NOT NULL) WITHOUT ROWID",
    "CREATE TABLE IF NOT EXISTS meta (name TEXT PRIMARY KEY, value INTEGER NOT NULL)",
]


def history_key(address: Address, block: int) -> bytes:
    """address ‖ big-endian height, so byte order equals (address, height) order."""
    return address_bytes(address) + block.to_bytes(BLOCK_BYTES, "big")


def encode_record(record: ImpurityRecord) -> bytes:
    return record.impurity.to_bytes(AMOUNT_BYTES, "big") + record.balance.to_bytes(AMOUNT_BYTES, "big")


def decode_record(value: bytes) -> ImpurityRecord:
    return ImpurityRecord(
        int.from_bytes(value[:AMOUNT_BYTES], "big"),
        int.from_bytes(value[AMOUNT_BYTES:], "big"),
    )


@dataclass(frozen=True)
class StoreStats:
    record_count: int
    address_count: int
    last_block: int | None
    bytes_on_disk: int


class HistoryStore:
    """Per-block impurity history in an embedded SQLite database.

    Two key-value tables: ``latest`` (address -> record) and ``history``
    ((address, height) -> record). Only changed records are written per block;
    historical reads are floor lookups over the ordered history keys.
    Passing ``path=None`` opens a private in-memory store.
    """

    def __init__(self, path: str | Path | None, balance_provider: BalanceProvider | None = None):
        self.logger = setup_logger(__name__)
        self.path = Path(path) if path is not None else None
        self.balance_provider = balance_provider
        self._lock = threading.RLock()
        if self.path is not None:
            self.path.mkdir(parents=True, exist_ok=True)
            database = str(self.path / DB_FILE)
        else:
            database = ":memory:"
        self.conn = sqlite3.connect(database, check_same_thread=False, isolation_level=None)
        if self.path is not None:
            self.conn.execute("PRAGMA journal_mode=WAL")
            self.conn.execute("PRAGMA synchronous=NORMAL")
        for statement in _SCHEMA:
            self.conn.execute(statement)
        self._closed = False
        self._last_block = self._read_meta("last_block")
        self.logger.debug(f"Opened history store at {database} (last_block={self._last_block})")

    def __enter__(self) -> "HistoryStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        with self._lock:
            if not self._closed:
                self.conn.close()
                self._closed = True

    @property
    def closed(self) -> bool:
        return self._closed

    @property
    def last_block(self) -> int | None:
        return self._last_block

    def _check_open(self) -> None:
        if self._closed:
            raise StoreClosed("history store is closed")

    def _read_meta(self, name: str) -> int | None:
        row = self.conn.execute("SELECT value FROM meta WHERE name = ?", (name,)).fetchone()
        return row[0] if row else None

    def start_block(self) -> int | None:
        self._check_open()
        return self._read_meta("start_block")

    def commit_block(self, deltas: DeltaSet, block: int, start_block: int | None = None) -> None:
        """Atomically persist one block's deltas; either all become visible at ``block`` or none."""
        self._check_open()
        if block < 0:
            raise ValidationError(f"block height must be non-negative, got {block}")
        if self._last_block is not None and block != self._last_block + 1:
            raise StreamOrderError(f"store is at block {self._last_block}, cannot commit block {block}")

        history_rows = ((history_key(a, block), encode_record(r)) for a, r in deltas.items())
        latest_rows = ((address_bytes(a), encode_record(r)) for a, r in deltas.items())
        with self._lock:
            cursor = self.conn.cursor()
            try:
                cursor.execute("BEGIN IMMEDIATE")
                cursor.executemany("INSERT INTO history (key, value) VALUES (?, ?)", history_rows)
                cursor.executemany("INSERT OR REPLACE INTO latest (key, value) VALUES (?, ?)", latest_rows)
                cursor.execute("INSERT OR REPLACE INTO meta (name, value) VALUES ('last_block', ?)", (block,))
                if self._last_block is None:
                    first = block if start_block is None else start_block
                    cursor.execute("INSERT OR REPLACE INTO meta (name, value) VALUES ('start_block', ?)", (first,))
                cursor.execute("COMMIT")
            except Exception as e:
                cursor.execute("ROLLBACK")
                self.logger.error(f"Commit of block {block} failed and was rolled back: {e}")
                raise
            finally:
                cursor.close()
        self._last_block = block

    def _untouched(self, address: Address, block: int | None) -> ImpurityRecord:
        if self.balance_provider is None:
            return ImpurityRecord.untouched()
        return ImpurityRecord(0, self.balance_provider.balance_of(address, block))

    def query_latest(self, address: Address) -> ImpurityRecord:
        """Most recent committed record; never-touched addresses get I=0 with an unknown balance."""
        self._check_open()
        with self._lock:
            row = self.conn.execute("SELECT value FROM latest WHERE key = ?", (address_bytes(address),)).fetchone()
        if row is None:
            return self._untouched(address, None)
        return decode_record(row[0])

    def query_at(self, address: Address, block: int) -> ImpurityRecord:
        """Record from the greatest commit height <= ``block``."""
        self._check_open()
        if self._last_block is None or block > self._last_block:
            raise FutureBlockError(f"block {block} is beyond the last committed block {self._last_block}")
        if block < 0:
            return self._untouched(address, block)
        with self._lock:
            row = self.conn.execute(
                "SELECT value FROM history WHERE key >= ? AND key <= ? ORDER BY key DESC LIMIT 1",
                (history_key(address, 0), history_key(address, block)),
            ).fetchone()
        if row is None:
            return self._untouched(address, block)
        return decode_record(row[0])

    def has_record(self, address: Address, block: int) -> bool:
        """Whether the engine stored any record for ``address`` at or before ``block``."""
        self._check_open()
        with self._lock:
            row = self.conn.execute(
                "SELECT 1 FROM history WHERE key >= ? AND key <= ? LIMIT 1",
                (history_key(address, 0), history_key(address, max(block, 0))),
            ).fetchone()
        return row is not None

    def history_of(self, address: Address) -> list[tuple[int, ImpurityRecord]]:
        """Every stored (height, record) of one address, ascending."""
        self._check_open()
        with self._lock:
            rows = self.conn.execute(
                "SELECT key, value FROM history WHERE key >= ? AND key <= ? ORDER BY key",
                (history_key(address, 0), history_key(address, 2 ** (8 * BLOCK_BYTES) - 1)),
            ).fetchall()
        return [(int.from_bytes(key[-BLOCK_BYTES:], "big"), decode_record(value)) for key, value in rows]

    def iter_latest(self) -> Iterator[tuple[Address, ImpurityRecord]]:
        self._check_open()
        with self._lock:
            rows = self.conn.execute("SELECT key, value FROM latest ORDER BY key").fetchall()
        for key, value in rows:
            yield address_from_bytes(key), decode_record(value)

    def load_state(self, zero_on_delist: bool = False) -> LedgerState:
        """Rebuild the writer state after the last committed block, to resume ingestion."""
        self._check_open()
        if self._last_block is None:
            raise ValidationError("cannot load state from an empty store")
        state = LedgerState(self.start_block(), zero_on_delist=zero_on_delist)
        for address, record in self.iter_latest():
            state.balance[address] = record.balance
            state.impurity[address] = record.impurity
        state.next_block = self._last_block + 1
        return state

    def stats(self) -> StoreStats:
        self._check_open()
        with self._lock:
            records = self.conn.execute("SELECT COUNT(*) FROM history").fetchone()[0]
            addresses = self.conn.execute("SELECT COUNT(*) FROM latest").fetchone()[0]
        size = 0
        if self.path is not None:
            size = sum(f.stat().st_size for f in self.path.iterdir() if f.is_file())
        return StoreStats(records, addresses, self._last_block, size)
