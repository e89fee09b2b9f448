"""Rule-based taint classifiers evaluated over committed history.

Every classifier answers "is this address tainted at block n" from the
transfers up to n (with the impurity each one carried) and the stored
records. Propagation rules (binary, time, hop) walk transfers in execution
order; threshold rules read the target's record and its inflows.

Threshold scopes:

- ``target-only`` checks the target alone (I > θ, or φ > θ).
- ``plus-transactions`` discounts single inflows that are too tainted to be
  incidental: a value rule only counts inflows carrying at most θ impurity,
  a percentage rule only counts the value of inflows from senders whose
  score was above 0 and at most θ.
- ``plus-sources`` additionally discounts senders that held more than θ
  impurity (value rule) or were themselves sanctioned (percentage rule).
"""
from abc import ABC, abstractmethod
from enum import Enum
from fractions import Fraction
from typing import TYPE_CHECKING, Iterable, Type

from taintledger.errors import FutureBlockError, ValidationError
from taintledger.models.types import Address, ratio
from taintledger.utils.logger import setup_logger

if TYPE_CHECKING:
    from taintledger.core.pipeline import ChainView


class Verdict(str, Enum):
    CLEAN = "clean"
    TAINTED = "tainted"


class Scope(str, Enum):
    TARGET_ONLY = "target-only"
    PLUS_TRANSACTIONS = "plus-transactions"
    PLUS_SOURCES = "plus-sources"


class Classifier(ABC):
    """Abstract base class for taint classifiers."""

    kind = "abstract"

    def __init__(self):
        self.logger = setup_logger(self.__class__.__name__)

    def classify(self, view: "ChainView", address: Address, block: int) -> Verdict:
        """Verdict for ``address`` given history up to and including ``block``."""
        if view.last_block is None or block > view.last_block:
            raise FutureBlockError(f"block {block} is beyond the last committed block {view.last_block}")
        return Verdict.TAINTED if self.is_tainted(view, address, block) else Verdict.CLEAN

    def is_tainted(self, view: "ChainView", address: Address, block: int) -> bool:
        return address in self.tainted_set(view, block)

    def tainted_set(self, view: "ChainView", block: int) -> set[Address]:
        """Every address the rule taints at ``block``."""
        candidates = view.graph.nodes | view.sanctions.addresses
        return {a for a in candidates if self.is_tainted(view, a, block)}

    @abstractmethod
    def describe(self) -> str:
        """Short parameterized name used in reports."""
        pass


class PropagationClassifier(Classifier):
    """Rules whose verdicts come from a forward pass over transfers."""

    def is_tainted(self, view: "ChainView", address: Address, block: int) -> bool:
        return address in self.tainted_set(view, block)

    @abstractmethod
    def tainted_set(self, view: "ChainView", block: int) -> set[Address]:
        pass


class BinaryClassifier(PropagationClassifier):
    """Any recipient of any transfer from a tainted address is tainted, forever."""

    kind = "binary"

    def tainted_set(self, view: "ChainView", block: int) -> set[Address]:
        sanctions = view.sanctions
        tainted = set(sanctions.active_at(block))
        for transfer in view.graph.transfers(until=block):
            if transfer.sender in tainted or sanctions.is_sanctioned(transfer.sender, transfer.block):
                tainted.add(transfer.sender)
                tainted.add(transfer.receiver)
        return tainted

    def describe(self) -> str:
        return "binary"


class TimeBasedClassifier(PropagationClassifier):
    """Tainted for ``window`` blocks after the last tainted inflow."""

    kind = "time"

    def __init__(self, window: int):
        super().__init__()
        if window <= 0:
            raise ValidationError(f"time window must be positive, got {window}")
        self.window = window

    def _tainted_at(self, view: "ChainView", last: dict[Address, int], address: Address, block: int) -> bool:
        if view.sanctions.is_sanctioned(address, block):
            return True
        received = last.get(address)
        return received is not None and block - received < self.window

    def tainted_set(self, view: "ChainView", block: int) -> set[Address]:
        last: dict[Address, int] = {}
        for transfer in view.graph.transfers(until=block):
            if self._tainted_at(view, last, transfer.sender, transfer.block):
                last[transfer.receiver] = transfer.block
        candidates = set(last) | view.sanctions.addresses
        return {a for a in candidates if self._tainted_at(view, last, a, block)}

    def describe(self) -> str:
        return f"time({self.window})"


class HopBasedClassifier(PropagationClassifier):
    """Tainted within ``hops`` transfers of a sanctioned address.

    Hop counts follow transfer order, so a path only counts when its hops
    happen in sequence. Reset services receive hop counts but pass none on.
    """

    kind = "hop"

    def __init__(self, hops: int, reset_services: Iterable[Address] = ()):
        super().__init__()
        if hops <= 0:
            raise ValidationError(f"hop limit must be positive, got {hops}")
        self.hops = hops
        self.reset_services = frozenset(reset_services)

    def hop_counts(self, view: "ChainView", block: int) -> dict[Address, int]:
        """Minimum hop distance from a sanctioned address, for every reached address."""
        sanctions = view.sanctions
        distance: dict[Address, int] = {a: 0 for a in sanctions.active_at(block)}
        for transfer in view.graph.transfers(until=block):
            sender = transfer.sender
            if sanctions.is_sanctioned(sender, transfer.block):
                hop = 0
            elif sender in distance and sender not in self.reset_services:
                hop = distance[sender]
            else:
                continue
            if hop + 1 < distance.get(transfer.receiver, hop + 2):
                distance[transfer.receiver] = hop + 1
        return distance

    def tainted_set(self, view: "ChainView", block: int) -> set[Address]:
        return {a for a, hop in self.hop_counts(view, block).items() if hop <= self.hops}

    def describe(self) -> str:
        return f"hop({self.hops})"


class ValueThresholdClassifier(Classifier):
    """Tainted when more than ``theta`` base units of impurity came in."""

    kind = "value"

    def __init__(self, theta: int, scope: Scope = Scope.TARGET_ONLY):
        super().__init__()
        if theta <= 0:
            raise ValidationError(f"value threshold must be positive, got {theta}")
        self.theta = theta
        self.scope = Scope(scope)

    def is_tainted(self, view: "ChainView", address: Address, block: int) -> bool:
        impurity = view.impurity_at(address, block)
        if self.scope is Scope.TARGET_ONLY:
            return impurity > self.theta
        eligible = 0
        for transfer in view.graph.incoming(address, until=block):
            if transfer.taint > self.theta:
                continue
            if self.scope is Scope.PLUS_SOURCES and transfer.sender_impurity > self.theta:
                continue
            eligible += transfer.taint
        return min(impurity, eligible) > self.theta

    def describe(self) -> str:
        return f"value({self.theta},{self.scope.value})"


class PercentageThresholdClassifier(Classifier):
    """Tainted when more than ``theta`` of the balance came from tainted funds."""

    kind = "percentage"

    def __init__(self, theta: Fraction, scope: Scope = Scope.TARGET_ONLY):
        super().__init__()
        theta = Fraction(theta)
        if not 0 < theta < 1:
            raise ValidationError(f"percentage threshold must lie in (0, 1), got {theta}")
        self.theta = theta
        self.scope = Scope(scope)

    def is_tainted(self, view: "ChainView", address: Address, block: int) -> bool:
        record = view.record_at(address, block)
        if self.scope is Scope.TARGET_ONLY:
            return record.score > self.theta
        balance = record.balance or 0
        if balance == 0:
            return False
        eligible = 0
        for transfer in view.graph.incoming(address, until=block):
            sender_score = ratio(transfer.sender_impurity, transfer.sender_balance)
            if not 0 < sender_score <= self.theta:
                continue
            if self.scope is Scope.PLUS_SOURCES and view.sanctions.is_sanctioned(transfer.sender, transfer.block):
                continue
            eligible += transfer.amount
        return Fraction(min(eligible, balance), balance) > self.theta

    def describe(self) -> str:
        return f"percentage({self.theta},{self.scope.value})"


class ClassifierFactory:
    """Factory for creating classifier instances."""

    @staticmethod
    def create_classifier(kind: str, *args, **kwargs) -> Classifier:
        """Create a classifier based on the specified kind."""
        classifiers: dict[str, Type[Classifier]] = {
            "binary": BinaryClassifier,
            "time": TimeBasedClassifier,
            "hop": HopBasedClassifier,
            "value": ValueThresholdClassifier,
            "percentage": PercentageThresholdClassifier,
        }
        if kind not in classifiers:
            raise ValueError(f"Unknown classifier kind: {kind}")
        return classifiers[kind](*args, **kwargs)
