from abc import ABC, abstractmethod
from typing import Mapping

import requests

from taintledger.errors import BalanceProviderError
from taintledger.models.types import Address
from taintledger.utils.logger import setup_logger


class BalanceProvider(ABC):
    """Source of balances for addresses the impurity engine never touched."""

    @abstractmethod
    def balance_of(self, address: Address, block: int | None) -> int:
        """Balance of ``address`` at ``block`` (latest when None)."""
        pass


class StaticBalanceProvider(BalanceProvider):
    """Balances from a fixed map, e.g. the genesis file of a synthetic chain."""

    def __init__(self, balances: Mapping[Address, int]):
        self.balances = dict(balances)

    def balance_of(self, address: Address, block: int | None) -> int:
        return self.balances.get(address, 0)


class JsonRpcBalanceProvider(BalanceProvider):
    """eth_getBalance over JSON-RPC."""

    def __init__(self, url: str, timeout: float = 10.0, session: requests.Session | None = None):
        self.logger = setup_logger(__name__)
        self.url = url
        self.timeout = timeout
        self.session = session or requests.Session()
        self._request_id = 0

    def balance_of(self, address: Address, block: int | None) -> int:
        self._request_id += 1
        tag = "latest" if block is None else hex(block)
        payload = {"jsonrpc": "2.0", "id": self._request_id, "method": "eth_getBalance", "params": [address, tag]}
        try:
            response = self.session.post(self.url, json=payload, timeout=self.timeout)
            response.raise_for_status()
            body = response.json()
        except (requests.RequestException, ValueError) as e:
            self.logger.error(f"eth_getBalance for {address} failed: {e}")
            raise BalanceProviderError(f"eth_getBalance for {address} failed: {e}") from e
        if "error" in body:
            raise BalanceProviderError(f"eth_getBalance for {address} returned error: {body['error']}")
        try:
            return int(body["result"], 16)
        except (KeyError, TypeError, ValueError) as e:
            raise BalanceProviderError(f"malformed eth_getBalance result: {body!r}") from e
