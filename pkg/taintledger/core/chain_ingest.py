"""Readers and writers for the on-disk chain formats.

Block file: JSON lines, one block per line::

    {"number":1,"producer":"0x..","ops":[{"kind":"transfer","from":"0x..","to":"0x..","sent":"10","received":"10"}]}

Amounts are decimal strings; rewards carry ``"from":null``. Zero-value transfers
are dropped on read.
"""
import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator

from taintledger.errors import InvalidChainData, ParseError, StreamOrderError, ValidationError
from taintledger.models.types import (
    Address,
    BalanceOp,
    Block,
    OpKind,
    SanctionEntry,
    SanctionSet,
    check_amount,
    to_address,
)
from taintledger.utils.logger import setup_logger

logger = setup_logger(__name__)


@dataclass(frozen=True, slots=True)
class WithdrawalEvent:
    """A mixing-pool withdrawal as logged by the pool contract.

    ``tx_sender`` is whoever submitted the transaction (often a relayer);
    ``beneficiary`` comes from the event payload and is the real recipient.
    """

    tx_sender: Address
    contract: Address
    beneficiary: Address
    amount: int
    block: int


def _amount(raw, name: str) -> int:
    if not isinstance(raw, str) or not raw.isdigit():
        raise InvalidChainData(f"{name} must be a decimal string, got {raw!r}")
    return check_amount(int(raw), name)


def parse_op(raw: dict) -> BalanceOp:
    try:
        kind = OpKind(raw["kind"])
        sender = raw.get("from")
        op = BalanceOp(
            kind=kind,
            sender=to_address(sender) if sender is not None else None,
            receiver=to_address(raw["to"]),
            sent=_amount(raw["sent"], "sent"),
            received=_amount(raw["received"], "received"),
        )
    except KeyError as e:
        raise InvalidChainData(f"op is missing field {e}") from e
    except ValueError as e:
        raise InvalidChainData(f"op has unknown kind {raw.get('kind')!r}") from e
    return op.validate()


def parse_block(line: str) -> Block:
    raw = json.loads(line)
    if not isinstance(raw, dict):
        raise InvalidChainData("block line must be a JSON object")
    number = raw.get("number")
    if isinstance(number, bool) or not isinstance(number, int) or number < 0:
        raise InvalidChainData(f"block number must be a non-negative integer, got {number!r}")
    ops = tuple(
        op for op in (parse_op(item) for item in raw.get("ops", []))
        if not (op.kind is OpKind.TRANSFER and op.sent == 0)
    )
    return Block(number=number, producer=to_address(raw["producer"]), ops=ops)


def read_blocks(path: str | Path) -> Iterator[Block]:
    """Yield validated blocks from a block file, in order."""
    previous = None
    with open(path, "r") as file:
        for line_number, line in enumerate(file, start=1):
            if not line.strip():
                continue
            try:
                block = parse_block(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e.msg}", line_number, str(path)) from e
            except (InvalidChainData, ValidationError, KeyError) as e:
                raise ParseError(str(e), line_number, str(path)) from e
            if previous is not None and block.number <= previous:
                raise StreamOrderError(f"{path}:{line_number}: block {block.number} follows block {previous}")
            previous = block.number
            yield block


def op_to_json(op: BalanceOp) -> dict:
    return {
        "kind": op.kind.value,
        "from": op.sender,
        "to": op.receiver,
        "sent": str(op.sent),
        "received": str(op.received),
    }


def block_to_line(block: Block) -> str:
    body = {"number": block.number, "producer": block.producer, "ops": [op_to_json(op) for op in block.ops]}
    return json.dumps(body, separators=(",", ":"))


def write_blocks(blocks: Iterable[Block], target: str | Path | IO[str]) -> int:
    """Write blocks in canonical form; returns the number of blocks written."""
    if isinstance(target, (str, Path)):
        with open(target, "w") as file:
            return write_blocks(blocks, file)
    count = 0
    for block in blocks:
        target.write(block_to_line(block) + "\n")
        count += 1
    return count


def read_genesis(path: str | Path) -> dict[Address, int]:
    """Genesis balances: JSON lines ``{"address": "0x..", "balance": "123"}``."""
    balances: dict[Address, int] = {}
    with open(path, "r") as file:
        for line_number, line in enumerate(file, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                address = to_address(raw["address"])
                amount = _amount(raw["balance"], "balance")
            except (json.JSONDecodeError, KeyError, InvalidChainData, ValidationError) as e:
                raise ParseError(f"bad genesis entry: {e}", line_number, str(path)) from e
            if address in balances:
                raise ParseError(f"duplicate address {address}", line_number, str(path))
            balances[address] = amount
    return balances


def write_genesis(balances: dict[Address, int], path: str | Path) -> None:
    with open(path, "w") as file:
        for address in sorted(balances):
            file.write(json.dumps({"address": address, "balance": str(balances[address])}, separators=(",", ":")) + "\n")


def read_sanctions(path: str | Path) -> SanctionSet:
    """Sanctions file: ``address active_from [active_until]`` per line, ``#`` comments allowed."""
    sanctions = SanctionSet()
    with open(path, "r") as file:
        for line_number, line in enumerate(file, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            try:
                if len(parts) not in (2, 3):
                    raise ValidationError(f"expected 2 or 3 fields, got {len(parts)}")
                until = int(parts[2]) if len(parts) == 3 else None
                sanctions.add(SanctionEntry(to_address(parts[0]), int(parts[1]), until))
            except (ValueError, ValidationError) as e:
                raise ParseError(f"bad sanction entry: {e}", line_number, str(path)) from e
    return sanctions


def write_sanctions(sanctions: SanctionSet, path: str | Path) -> None:
    with open(path, "w") as file:
        for entry in sanctions.entries():
            fields = [entry.address, str(entry.active_from)]
            if entry.active_until is not None:
                fields.append(str(entry.active_until))
            file.write(" ".join(fields) + "\n")


def read_labels(path: str | Path) -> dict[Address, str]:
    """Service labels: CSV with ``address,label`` columns."""
    labels: dict[Address, str] = {}
    with open(path, "r", newline="") as file:
        for line_number, row in enumerate(csv.DictReader(file), start=2):
            try:
                labels[to_address(row["address"])] = row["label"]
            except (KeyError, ValidationError) as e:
                raise ParseError(f"bad label row: {e}", line_number, str(path)) from e
    return labels


def write_labels(labels: dict[Address, str], path: str | Path) -> None:
    with open(path, "w", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(["address", "label"])
        for address in sorted(labels):
            writer.writerow([address, labels[address]])


def read_addresses(path: str | Path) -> list[Address]:
    """One address per line (ground-truth and pool lists)."""
    addresses = []
    with open(path, "r") as file:
        for line_number, line in enumerate(file, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                addresses.append(to_address(text))
            except ValidationError as e:
                raise ParseError(str(e), line_number, str(path)) from e
    return addresses


def write_addresses(addresses: Iterable[Address], path: str | Path) -> None:
    with open(path, "w") as file:
        for address in sorted(set(addresses)):
            file.write(address + "\n")


def read_withdrawals(path: str | Path) -> Iterator[WithdrawalEvent]:
    """Withdrawal events: JSON lines with contract, tx_sender, beneficiary, amount, block."""
    with open(path, "r") as file:
        for line_number, line in enumerate(file, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                yield WithdrawalEvent(
                    tx_sender=to_address(raw["tx_sender"]),
                    contract=to_address(raw["contract"]),
                    beneficiary=to_address(raw["beneficiary"]),
                    amount=_amount(raw["amount"], "amount"),
                    block=int(raw["block"]),
                )
            except (json.JSONDecodeError, KeyError, ValueError, InvalidChainData, ValidationError) as e:
                raise ParseError(f"bad withdrawal event: {e}", line_number, str(path)) from e


def write_withdrawals(events: Iterable[WithdrawalEvent], path: str | Path) -> None:
    with open(path, "w") as file:
        for event in events:
            body = {
                "contract": event.contract,
                "tx_sender": event.tx_sender,
                "beneficiary": event.beneficiary,
                "amount": str(event.amount),
                "block": event.block,
            }
            file.write(json.dumps(body, separators=(",", ":")) + "\n")


def extract_withdrawers(
    logs: Iterable[WithdrawalEvent], pools: set[Address]
) -> list[tuple[Address, int, int]]:
    """Genuine (beneficiary, amount, block) of every withdrawal from a pool contract.

    The transaction sender is ignored: relayers and proxy contracts submit on
    behalf of the beneficiary. Repeated withdrawals stay separate entries.
    """
    if not pools:
        raise ValidationError("extract_withdrawers needs at least one pool contract")
    extracted = [(event.beneficiary, event.amount, event.block) for event in logs if event.contract in pools]
    logger.debug(f"Extracted {len(extracted)} withdrawals from {len(pools)} pools")
    return extracted
