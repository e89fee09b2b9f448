"""Declarative bridge payload layouts and the decoder that reads them.

A descriptor lists fixed-offset fields (big-endian unsigned integers or
addresses) and how the destination identifier is to be interpreted.
Aggregator descriptors carry a selector field that picks an inner scheme;
the remainder of the payload from ``inner_offset`` is decoded with it.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import yaml

from taintledger.errors import DescriptorError, PayloadError
from taintledger.models.types import Address

if TYPE_CHECKING:
    from taintledger.bridges.registry import ChainIdRegistry

ID_CONVENTIONS = ("endpoint-id", "chain-id", "opaque", "aggregator")
FIELD_KINDS = ("uint", "address")
ADDRESS_WIDTHS = (20, 32)


@dataclass(frozen=True)
class FieldSpec:
    name: str
    offset: int
    width: int
    kind: str = "uint"

    @property
    def end(self) -> int:
        return self.offset + self.width


@dataclass(frozen=True)
class SchemeDescriptor:
    name: str
    id_convention: str
    fields: tuple[FieldSpec, ...] = ()
    length: int | None = None
    selector: str | None = None
    inner_offset: int | None = None
    inner_schemes: dict[int, str] = field(default_factory=dict)

    @property
    def fixed_layout(self) -> bool:
        return self.length is not None

    def field_named(self, name: str) -> FieldSpec | None:
        return next((f for f in self.fields if f.name == name), None)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "SchemeDescriptor":
        try:
            fields = tuple(
                FieldSpec(str(f["name"]), int(f["offset"]), int(f["width"]), str(f.get("kind", "uint")))
                for f in raw.get("fields", [])
            )
            descriptor = cls(
                name=str(raw["name"]),
                id_convention=str(raw["id_convention"]),
                fields=fields,
                length=int(raw["length"]) if raw.get("length") is not None else None,
                selector=raw.get("selector"),
                inner_offset=int(raw["inner_offset"]) if raw.get("inner_offset") is not None else None,
                inner_schemes={int(k): str(v) for k, v in (raw.get("inner_schemes") or {}).items()},
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DescriptorError(f"malformed scheme descriptor: {e}") from e
        descriptor.validate()
        return descriptor

    def validate(self) -> None:
        """Reject self-inconsistent layouts."""
        if self.id_convention not in ID_CONVENTIONS:
            raise DescriptorError(f"{self.name}: unknown id convention {self.id_convention!r}")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise DescriptorError(f"{self.name}: duplicate field names")
        for spec in self.fields:
            if spec.kind not in FIELD_KINDS:
                raise DescriptorError(f"{self.name}.{spec.name}: unknown field kind {spec.kind!r}")
            if spec.offset < 0 or spec.width <= 0:
                raise DescriptorError(f"{self.name}.{spec.name}: offset must be >= 0 and width > 0")
            if spec.kind == "address" and spec.width not in ADDRESS_WIDTHS:
                raise DescriptorError(f"{self.name}.{spec.name}: address fields are 20 or 32 bytes wide")
            if self.length is not None and spec.end > self.length:
                raise DescriptorError(f"{self.name}.{spec.name}: field ends at {spec.end}, past length {self.length}")
        ordered = sorted(self.fields, key=lambda f: f.offset)
        for left, right in zip(ordered, ordered[1:]):
            if right.offset < left.end:
                raise DescriptorError(f"{self.name}: fields {left.name} and {right.name} overlap")
        if self.id_convention == "aggregator":
            if self.selector is None or self.field_named(self.selector) is None:
                raise DescriptorError(f"{self.name}: aggregator needs a selector field")
            if not self.inner_schemes:
                raise DescriptorError(f"{self.name}: aggregator needs inner schemes")
            if self.inner_offset is None or any(f.end > self.inner_offset for f in self.fields):
                raise DescriptorError(f"{self.name}: inner_offset must follow every outer field")
        elif self.id_convention in ("endpoint-id", "chain-id") and self.field_named("destination") is None:
            raise DescriptorError(f"{self.name}: {self.id_convention} schemes need a destination field")


@dataclass(frozen=True)
class BridgeRecord:
    bridge: str
    payload: bytes
    amount: int
    block: int = 0


@dataclass(frozen=True)
class DecodedTransfer:
    """Decoded destination; None stands for Unknown."""

    scheme: str
    dest_chain: int | None
    recipient: Address | None
    amount: int
    via: str | None = None


def _read(spec: FieldSpec, payload: bytes) -> int | Address | None:
    raw = payload[spec.offset:spec.end]
    if spec.kind == "uint":
        return int.from_bytes(raw, "big")
    head, tail = raw[:-20], raw[-20:]
    if any(head):
        raise PayloadError(f"{spec.name}: address field carries non-zero bytes above its low 20")
    if not any(tail):
        return None
    return Address("0x" + tail.hex())


def _resolve(registry: "ChainIdRegistry", descriptor: SchemeDescriptor, raw: int) -> int | None:
    # scheme-specific lines first, then the table shared by the id convention
    canonical = registry.resolve(descriptor.name, raw)
    return canonical if canonical is not None else registry.resolve(descriptor.id_convention, raw)


def _decode(
    descriptor: SchemeDescriptor, payload: bytes, amount: int, registry: "ChainIdRegistry", depth: int
) -> DecodedTransfer:
    if descriptor.id_convention == "opaque":
        return DecodedTransfer(descriptor.name, None, None, amount)
    if descriptor.length is not None and len(payload) != descriptor.length:
        raise PayloadError(f"{descriptor.name}: payload is {len(payload)} bytes, layout needs {descriptor.length}")
    needed = max((f.end for f in descriptor.fields), default=0)
    if len(payload) < needed:
        raise PayloadError(f"{descriptor.name}: payload is {len(payload)} bytes, fields need {needed}")
    values = {spec.name: _read(spec, payload) for spec in descriptor.fields}

    if descriptor.id_convention == "aggregator":
        if depth > 0:
            raise DescriptorError(f"{descriptor.name}: aggregators cannot be nested")
        inner_name = descriptor.inner_schemes.get(values[descriptor.selector])
        if inner_name is None:
            return DecodedTransfer(descriptor.name, None, None, amount)
        inner = _decode(registry.scheme(inner_name), payload[descriptor.inner_offset:], amount, registry, depth + 1)
        return DecodedTransfer(inner.scheme, inner.dest_chain, inner.recipient, inner.amount, via=descriptor.name)

    destination = values.get("destination")
    dest_chain = _resolve(registry, descriptor, destination) if destination is not None else None
    decoded_amount = values.get("amount")
    return DecodedTransfer(
        descriptor.name,
        dest_chain,
        values.get("recipient"),
        decoded_amount if isinstance(decoded_amount, int) else amount,
    )


def decode(record: BridgeRecord, registry: "ChainIdRegistry") -> DecodedTransfer:
    """Destination chain, recipient and amount of a bridge transfer."""
    return _decode(registry.scheme(record.bridge), record.payload, record.amount, registry, depth=0)


def encode(descriptor: SchemeDescriptor, values: dict[str, Any], inner: bytes = b"") -> bytes:
    """Payload carrying ``values`` in the descriptor's layout (aggregators append ``inner``)."""
    size = descriptor.length if descriptor.length is not None else max((f.end for f in descriptor.fields), default=0)
    if descriptor.inner_offset is not None:
        size = max(size, descriptor.inner_offset)
    payload = bytearray(size)
    for spec in descriptor.fields:
        value = values.get(spec.name)
        if value is None:
            continue
        if spec.kind == "address":
            raw = bytes.fromhex(str(value)[2:]).rjust(spec.width, b"\x00")
        else:
            try:
                raw = int(value).to_bytes(spec.width, "big")
            except OverflowError as e:
                raise PayloadError(f"{descriptor.name}.{spec.name}: {value} does not fit {spec.width} bytes") from e
        payload[spec.offset:spec.end] = raw
    return bytes(payload) + inner


def load_descriptor(path: str | Path) -> SchemeDescriptor:
    with open(path, "r") as file:
        raw = yaml.safe_load(file)
    if not isinstance(raw, dict):
        raise DescriptorError(f"{path}: descriptor must be a mapping")
    return SchemeDescriptor.from_dict(raw)


def load_descriptors(directory: str | Path) -> list[SchemeDescriptor]:
    """Every ``*.yaml`` descriptor in a directory, sorted by file name."""
    return [load_descriptor(p) for p in sorted(Path(directory).glob("*.yaml"))]
