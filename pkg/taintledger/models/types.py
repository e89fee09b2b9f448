"""Domain types shared by every taintledger module.

Amounts are plain Python integers in base units (1 coin = 10**18 base units);
they are range-checked to 256 bits where they enter the system. Scores are
exact ``Fraction`` values derived from the stored (impurity, balance) pair.
"""
import re
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Iterator, NewType

from taintledger.errors import InvalidChainData, ValidationError

Address = NewType("Address", str)

BASE_UNITS = 10**18
MAX_AMOUNT = 2**256 - 1
ADDRESS_BYTES = 20

_ADDRESS_RE = re.compile(r"^0x[0-9a-f]{40}$")


def to_address(text: str) -> Address:
    """Normalize 0x-prefixed hex text to the canonical lowercase address form."""
    if not isinstance(text, str):
        raise ValidationError(f"address must be text, got {type(text).__name__}")
    candidate = text.strip().lower()
    if not _ADDRESS_RE.match(candidate):
        raise ValidationError(f"invalid address {text!r}: expected 0x followed by 40 hex digits")
    return Address(candidate)


def address_from_bytes(raw: bytes) -> Address:
    if len(raw) != ADDRESS_BYTES:
        raise ValidationError(f"address must be {ADDRESS_BYTES} bytes, got {len(raw)}")
    return Address("0x" + raw.hex())


def address_bytes(address: Address) -> bytes:
    return bytes.fromhex(address[2:])


def check_amount(value: int, name: str = "amount") -> int:
    """Reject negative, non-integer or wider-than-256-bit amounts."""
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidChainData(f"{name} must be an integer, got {value!r}")
    if value < 0 or value > MAX_AMOUNT:
        raise InvalidChainData(f"{name} out of range [0, 2^256): {value}")
    return value


def ratio(impurity: int, balance: int | None) -> Fraction:
    """Impurity score I/B, defined as 0 when B is 0 or unknown."""
    if not balance:
        return Fraction(0)
    return Fraction(impurity, balance)


@dataclass(frozen=True, slots=True)
class ImpurityRecord:
    """The ⟨I, B, φ⟩ triple of one address at one height.

    ``balance`` is None when the address was never touched by the engine and its
    balance has to come from an external balance provider.
    """

    impurity: int
    balance: int | None

    def __post_init__(self):
        if self.impurity < 0:
            raise ValidationError(f"negative impurity {self.impurity}")
        if self.balance is not None and self.impurity > self.balance:
            raise ValidationError(f"impurity {self.impurity} exceeds balance {self.balance}")

    @property
    def score(self) -> Fraction:
        return ratio(self.impurity, self.balance)

    @property
    def balance_known(self) -> bool:
        return self.balance is not None

    @classmethod
    def untouched(cls) -> "ImpurityRecord":
        """Default for addresses the engine never saw: no impurity, balance unknown."""
        return cls(0, None)


def score(record: ImpurityRecord) -> Fraction:
    """Exact rational impurity score of a record."""
    return record.score


class OpKind(str, Enum):
    TRANSFER = "transfer"
    FEE = "fee"
    REWARD = "reward"


@dataclass(frozen=True, slots=True)
class BalanceOp:
    """One balance-changing event. ``sender`` is None only for rewards."""

    kind: OpKind
    sender: Address | None
    receiver: Address
    sent: int
    received: int

    @classmethod
    def transfer(cls, sender: Address, receiver: Address, amount: int) -> "BalanceOp":
        return cls(OpKind.TRANSFER, sender, receiver, amount, amount)

    @classmethod
    def fee(cls, sender: Address, producer: Address, sent: int, received: int) -> "BalanceOp":
        return cls(OpKind.FEE, sender, producer, sent, received)

    @classmethod
    def reward(cls, receiver: Address, amount: int) -> "BalanceOp":
        return cls(OpKind.REWARD, None, receiver, 0, amount)

    def validate(self) -> "BalanceOp":
        """Check the per-kind invariants, raising InvalidChainData on violation."""
        check_amount(self.sent, "sent")
        check_amount(self.received, "received")
        if self.kind is OpKind.TRANSFER:
            if self.sender is None:
                raise InvalidChainData("transfer requires a sender")
            if self.sent != self.received:
                raise InvalidChainData(f"transfer must have sent == received ({self.sent} != {self.received})")
        elif self.kind is OpKind.FEE:
            if self.sender is None:
                raise InvalidChainData("fee requires a sender")
            if self.sent < self.received:
                raise InvalidChainData(f"fee must have sent >= received ({self.sent} < {self.received})")
        elif self.kind is OpKind.REWARD:
            if self.sender is not None:
                raise InvalidChainData("reward must not have a sender")
            if self.sent != 0:
                raise InvalidChainData(f"reward must have sent == 0, got {self.sent}")
        return self


@dataclass(frozen=True, slots=True)
class Block:
    number: int
    producer: Address
    ops: tuple[BalanceOp, ...] = ()


@dataclass(frozen=True, slots=True)
class SanctionEntry:
    address: Address
    active_from: int
    active_until: int | None = None

    def active_at(self, block: int) -> bool:
        return self.active_from <= block and (self.active_until is None or block < self.active_until)


class SanctionSet:
    """Sanctioned addresses with activation (and optional deactivation) heights."""

    def __init__(self, entries: Iterable[SanctionEntry] = ()):
        self._entries: dict[Address, list[SanctionEntry]] = defaultdict(list)
        self._activations: dict[int, list[Address]] = defaultdict(list)
        self._deactivations: dict[int, list[Address]] = defaultdict(list)
        for entry in entries:
            self.add(entry)

    def add(self, entry: SanctionEntry) -> None:
        if entry.active_until is not None and entry.active_until <= entry.active_from:
            raise ValidationError(
                f"sanction for {entry.address}: active_until {entry.active_until} <= active_from {entry.active_from}"
            )
        self._entries[entry.address].append(entry)
        self._activations[entry.active_from].append(entry.address)
        if entry.active_until is not None:
            self._deactivations[entry.active_until].append(entry.address)

    def is_sanctioned(self, address: Address, block: int) -> bool:
        entries = self._entries.get(address)
        if not entries:
            return False
        return any(entry.active_at(block) for entry in entries)

    def active_at(self, block: int) -> set[Address]:
        return {address for address in self._entries if self.is_sanctioned(address, block)}

    def activations_at(self, block: int) -> list[Address]:
        return sorted(self._activations.get(block, ()))

    def deactivations_at(self, block: int) -> list[Address]:
        return sorted(a for a in self._deactivations.get(block, ()) if not self.is_sanctioned(a, block))

    @property
    def addresses(self) -> set[Address]:
        return set(self._entries)

    @property
    def earliest(self) -> int | None:
        """First activation height (the sanction start of the analysis window)."""
        return min(self._activations) if self._activations else None

    def entries(self) -> Iterator[SanctionEntry]:
        for address in sorted(self._entries):
            yield from self._entries[address]

    def __contains__(self, address: object) -> bool:
        return address in self._entries

    def __len__(self) -> int:
        return len(self._entries)


@dataclass(frozen=True)
class DeltaSet:
    """Post-block records of every address whose record changed in the block."""

    block: int
    records: dict[Address, ImpurityRecord] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Address]:
        return iter(self.records)

    def items(self):
        return self.records.items()
