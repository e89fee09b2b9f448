from importlib import resources
from pathlib import Path
from typing import Any

from taintledger.bridges.schemes import SchemeDescriptor, load_descriptor
from taintledger.errors import DescriptorError, ParseError, UnsupportedScheme, ValidationError
from taintledger.utils.logger import setup_logger

RESERVED_CHAIN_IDS = {"bitcoin": -1, "solana": -2, "litecoin": -3}


class ChainIdRegistry:
    """(scheme, raw id) -> canonical chain id, plus the registered payload schemes.

    Canonical ids are the destination's own chain id for EVM chains and the
    reserved negative ids for Bitcoin, Solana and Litecoin. Lookups of
    unregistered pairs return None.
    """

    def __init__(self):
        self.logger = setup_logger(self.__class__.__name__)
        self._ids: dict[tuple[str, int], int] = {}
        self._names: dict[int, str] = {v: k for k, v in RESERVED_CHAIN_IDS.items()}
        self._schemes: dict[str, SchemeDescriptor] = {}

    def add(self, scheme: str, raw: int, canonical: int, name: str | None = None) -> None:
        previous = self._ids.get((scheme, raw))
        if previous is not None and previous != canonical:
            raise ValidationError(f"{scheme} id {raw} already maps to {previous}, not {canonical}")
        self._ids[(scheme, raw)] = canonical
        if name:
            self._names.setdefault(canonical, name)

    def resolve(self, scheme: str, raw: int) -> int | None:
        return self._ids.get((scheme, raw))

    def chain_name(self, canonical: int | None) -> str | None:
        return self._names.get(canonical) if canonical is not None else None

    def register_scheme(self, descriptor: SchemeDescriptor | dict[str, Any]) -> SchemeDescriptor:
        """Make a payload scheme decodable; names must be unique."""
        if not isinstance(descriptor, SchemeDescriptor):
            descriptor = SchemeDescriptor.from_dict(descriptor)
        else:
            descriptor.validate()
        if descriptor.name in self._schemes:
            raise DescriptorError(f"scheme {descriptor.name!r} is already registered")
        for inner in descriptor.inner_schemes.values():
            registered = self._schemes.get(inner)
            if registered is not None and registered.id_convention == "aggregator":
                raise DescriptorError(f"{descriptor.name}: inner scheme {inner} is itself an aggregator")
        self._schemes[descriptor.name] = descriptor
        self.logger.debug(f"Registered bridge scheme {descriptor.name} ({descriptor.id_convention})")
        return descriptor

    def scheme(self, name: str) -> SchemeDescriptor:
        try:
            return self._schemes[name]
        except KeyError:
            raise UnsupportedScheme(f"no bridge scheme named {name!r}") from None

    @property
    def schemes(self) -> list[str]:
        return sorted(self._schemes)

    def __len__(self) -> int:
        return len(self._ids)


def load_registry(path: str | Path, registry: ChainIdRegistry | None = None) -> ChainIdRegistry:
    """Registry file: ``scheme raw_id canonical_id [name]`` per line, ``#`` comments allowed."""
    registry = registry or ChainIdRegistry()
    with open(path, "r") as file:
        _load_lines(file.read().splitlines(), str(path), registry)
    return registry


def _load_lines(lines: list[str], origin: str, registry: ChainIdRegistry) -> None:
    for line_number, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) not in (3, 4):
            raise ParseError(f"expected 3 or 4 fields, got {len(parts)}", line_number, origin)
        try:
            registry.add(parts[0], int(parts[1]), int(parts[2]), parts[3] if len(parts) == 4 else None)
        except (ValueError, ValidationError) as e:
            raise ParseError(f"bad registry entry: {e}", line_number, origin) from e


def default_registry() -> ChainIdRegistry:
    """The shipped id table and scheme descriptors."""
    data = resources.files("taintledger.bridges.data")
    registry = ChainIdRegistry()
    _load_lines(data.joinpath("registry.txt").read_text().splitlines(), "registry.txt", registry)
    descriptors = sorted(
        (entry for entry in data.joinpath("schemes").iterdir() if entry.name.endswith(".yaml")),
        key=lambda entry: entry.name,
    )
    loaded = []
    for entry in descriptors:
        with resources.as_file(entry) as path:
            loaded.append(load_descriptor(path))
    # inner schemes first, so aggregator checks see them
    for descriptor in sorted(loaded, key=lambda d: d.id_convention == "aggregator"):
        registry.register_scheme(descriptor)
    return registry
