"""Adversary strategies executed against a lab ledger.

Attackers try to get an innocent subject (or many targets) classified as
tainted; evaders try to get their own tainted subject classified as clean.
Each strategy appends blocks to the lab pipeline through ordinary ops, so
every step obeys the ledger rules.
"""
import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING, Type

from taintledger.core.ledger import ceil_div
from taintledger.errors import InvalidChainData, ValidationError
from taintledger.models.types import Address, BalanceOp
from taintledger.utils.logger import setup_logger

if TYPE_CHECKING:
    from taintledger.core.pipeline import LedgerPipeline

BURN_ADDRESS = Address("0x000000000000000000000000000000000000dead")


def derived_address(label: str, index: int) -> Address:
    """Deterministic throwaway address for helper accounts a plan creates."""
    return Address("0x" + hashlib.sha256(f"{label}:{index}".encode()).hexdigest()[:40])


@dataclass
class AdversaryPlan:
    """Who acts and with what.

    ``source`` holds the tainted funds; ``subject`` is the address whose
    verdict the plan is about; ``reserve`` holds clean funds some strategies
    need; ``budget`` is the tainted amount the plan may spend.
    """

    strategy: "AdversaryStrategy"
    source: Address
    budget: int = 0
    subject: Address | None = None
    targets: list[Address] = field(default_factory=list)
    reserve: Address | None = None

    def require_subject(self) -> Address:
        if self.subject is None:
            raise ValidationError(f"{self.strategy.describe()} needs a subject address")
        return self.subject

    def require_reserve(self) -> Address:
        if self.reserve is None:
            raise ValidationError(f"{self.strategy.describe()} needs a reserve of clean funds")
        return self.reserve


class AdversaryStrategy(ABC):
    """Abstract base class for adversary strategies."""

    def __init__(self):
        self.logger = setup_logger(self.__class__.__name__)

    @abstractmethod
    def execute(self, lab: "LedgerPipeline", plan: AdversaryPlan) -> None:
        """Append the plan's blocks to the lab ledger."""
        pass

    @abstractmethod
    def describe(self) -> str:
        pass

    @staticmethod
    def _check_budget(lab: "LedgerPipeline", plan: AdversaryPlan, spend: int) -> None:
        if spend > plan.budget:
            raise InvalidChainData(f"plan spends {spend} but its budget is {plan.budget}")
        available = lab.state.balance.get(plan.source, 0)
        if available < spend:
            raise InvalidChainData(f"source {plan.source} holds {available} < {spend}")


class Dust(AdversaryStrategy):
    """Send ``epsilon`` from the tainted source to every target in one block."""

    def __init__(self, epsilon: int = 1):
        super().__init__()
        if epsilon <= 0:
            raise ValidationError(f"dust amount must be positive, got {epsilon}")
        self.epsilon = epsilon

    def execute(self, lab: "LedgerPipeline", plan: AdversaryPlan) -> None:
        if not plan.targets:
            return
        self._check_budget(lab, plan, self.epsilon * len(plan.targets))
        lab.append(BalanceOp.transfer(plan.source, target, self.epsilon) for target in plan.targets)
        self.logger.debug(f"Dusted {len(plan.targets)} targets with {self.epsilon} each")

    def describe(self) -> str:
        return f"dust({self.epsilon})"


class OneHopDirect(AdversaryStrategy):
    """Move the whole budget straight from the source to the subject."""

    def execute(self, lab: "LedgerPipeline", plan: AdversaryPlan) -> None:
        self._check_budget(lab, plan, plan.budget)
        lab.append([BalanceOp.transfer(plan.source, plan.require_subject(), plan.budget)])

    def describe(self) -> str:
        return "one-hop-direct"


class Refresh(AdversaryStrategy):
    """Re-send an equal share of the budget to the subject every ``period`` blocks."""

    def __init__(self, period: int, rounds: int):
        super().__init__()
        if period <= 0 or rounds <= 0:
            raise ValidationError("refresh period and rounds must be positive")
        self.period = period
        self.rounds = rounds

    def execute(self, lab: "LedgerPipeline", plan: AdversaryPlan) -> None:
        subject = plan.require_subject()
        share = plan.budget // self.rounds
        if share == 0:
            raise ValidationError(f"budget {plan.budget} too small for {self.rounds} rounds")
        self._check_budget(lab, plan, share * self.rounds)
        for round_index in range(self.rounds):
            if round_index:
                lab.advance_to(lab.next_block + self.period - 1)
            lab.append([BalanceOp.transfer(plan.source, subject, share)])

    def describe(self) -> str:
        return f"refresh({self.period}x{self.rounds})"


class SplitBelowValue(AdversaryStrategy):
    """Split the budget into transfers that each carry at most ``theta``."""

    def __init__(self, theta: int):
        super().__init__()
        if theta <= 0:
            raise ValidationError(f"split size must be positive, got {theta}")
        self.theta = theta

    def execute(self, lab: "LedgerPipeline", plan: AdversaryPlan) -> None:
        subject = plan.require_subject()
        self._check_budget(lab, plan, plan.budget)
        chunks = [self.theta] * (plan.budget // self.theta)
        if plan.budget % self.theta:
            chunks.append(plan.budget % self.theta)
        lab.append(BalanceOp.transfer(plan.source, subject, chunk) for chunk in chunks)

    def describe(self) -> str:
        return f"split-below-value({self.theta})"


class MultiSource(AdversaryStrategy):
    """Stage the budget on ``k`` helper accounts, then have each send everything to the subject.

    With ``clean_per_source`` set, each helper is first topped up with clean
    funds from the reserve, keeping its score low.
    """

    def __init__(self, k: int, clean_per_source: int = 0):
        super().__init__()
        if k <= 0:
            raise ValidationError(f"source count must be positive, got {k}")
        self.k = k
        self.clean_per_source = clean_per_source

    def execute(self, lab: "LedgerPipeline", plan: AdversaryPlan) -> None:
        subject = plan.require_subject()
        share = plan.budget // self.k
        if share == 0:
            raise ValidationError(f"budget {plan.budget} too small for {self.k} sources")
        self._check_budget(lab, plan, share * self.k)
        helpers = [derived_address(f"{plan.source}:{subject}", i) for i in range(self.k)]
        staging = []
        if self.clean_per_source:
            reserve = plan.require_reserve()
            staging.extend(BalanceOp.transfer(reserve, h, self.clean_per_source) for h in helpers)
        staging.extend(BalanceOp.transfer(plan.source, h, share) for h in helpers)
        lab.append(staging)
        lab.append(BalanceOp.transfer(h, subject, lab.state.balance[h]) for h in helpers)

    def describe(self) -> str:
        return f"multi-source({self.k})"


class BalanceDilute(AdversaryStrategy):
    """Top the subject up with clean funds from the reserve."""

    def __init__(self, clean_amount: int):
        super().__init__()
        if clean_amount <= 0:
            raise ValidationError(f"clean amount must be positive, got {clean_amount}")
        self.clean_amount = clean_amount

    @classmethod
    def to_reach(cls, impurity: int, balance: int, theta: Fraction) -> "BalanceDilute":
        """The smallest top-up that brings I / (B + x) to ``theta`` or below."""
        theta = Fraction(theta)
        needed = max(1, ceil_div(impurity * theta.denominator, theta.numerator) - balance)
        return cls(needed)

    def execute(self, lab: "LedgerPipeline", plan: AdversaryPlan) -> None:
        lab.append([BalanceOp.transfer(plan.require_reserve(), plan.require_subject(), self.clean_amount)])

    def describe(self) -> str:
        return f"balance-dilute({self.clean_amount})"


class WaitOut(AdversaryStrategy):
    """Do nothing for ``blocks`` blocks."""

    def __init__(self, blocks: int):
        super().__init__()
        if blocks <= 0:
            raise ValidationError(f"wait must be positive, got {blocks}")
        self.blocks = blocks

    def execute(self, lab: "LedgerPipeline", plan: AdversaryPlan) -> None:
        lab.advance_to(lab.next_block + self.blocks)

    def describe(self) -> str:
        return f"wait-out({self.blocks})"


class BurnExcess(AdversaryStrategy):
    """Send just enough to the burn address that the subject keeps at most ``theta`` impurity."""

    def __init__(self, theta: int):
        super().__init__()
        if theta < 0:
            raise ValidationError(f"impurity target must be non-negative, got {theta}")
        self.theta = theta

    def execute(self, lab: "LedgerPipeline", plan: AdversaryPlan) -> None:
        subject = plan.require_subject()
        impurity = lab.state.impurity.get(subject, 0)
        balance = lab.state.balance.get(subject, 0)
        if impurity <= self.theta:
            return
        # sending x removes ceil(x * I / B) impurity
        burn = ceil_div((impurity - self.theta) * balance, impurity)
        lab.append([BalanceOp.transfer(subject, BURN_ADDRESS, burn)])
        self.logger.debug(f"Burned {burn} from {subject}")

    def describe(self) -> str:
        return f"burn-excess({self.theta})"


class ServiceHop(AdversaryStrategy):
    """Route the budget through a service that pays the subject out of its own funds."""

    def __init__(self, service: Address):
        super().__init__()
        self.service = service

    def execute(self, lab: "LedgerPipeline", plan: AdversaryPlan) -> None:
        subject = plan.require_subject()
        self._check_budget(lab, plan, plan.budget)
        lab.append([BalanceOp.transfer(plan.source, self.service, plan.budget)])
        lab.append([BalanceOp.transfer(self.service, subject, plan.budget)])

    def describe(self) -> str:
        return f"service-hop({self.service})"


class AdversaryFactory:
    """Factory for creating adversary strategies."""

    @staticmethod
    def create_strategy(name: str, *args, **kwargs) -> AdversaryStrategy:
        """Create a strategy based on the specified name."""
        strategies: dict[str, Type[AdversaryStrategy]] = {
            "dust": Dust,
            "one-hop-direct": OneHopDirect,
            "refresh": Refresh,
            "split-below-value": SplitBelowValue,
            "multi-source": MultiSource,
            "balance-dilute": BalanceDilute,
            "wait-out": WaitOut,
            "burn-excess": BurnExcess,
            "service-hop": ServiceHop,
        }
        if name not in strategies:
            raise ValueError(f"Unknown adversary strategy: {name}")
        return strategies[name](*args, **kwargs)
