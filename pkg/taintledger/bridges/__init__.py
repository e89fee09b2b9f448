from taintledger.bridges.registry import ChainIdRegistry, default_registry, load_registry
from taintledger.bridges.schemes import BridgeRecord, DecodedTransfer, SchemeDescriptor, decode, encode, load_descriptors


def register_scheme(registry: ChainIdRegistry, descriptor) -> SchemeDescriptor:
    return registry.register_scheme(descriptor)


__all__ = [
    "BridgeRecord",
    "ChainIdRegistry",
    "DecodedTransfer",
    "SchemeDescriptor",
    "decode",
    "default_registry",
    "encode",
    "load_descriptors",
    "load_registry",
    "register_scheme",
]
