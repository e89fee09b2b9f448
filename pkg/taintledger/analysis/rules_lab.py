"""Classifier zoo versus adversary strategies on lab ledgers.

A lab ledger is an in-memory pipeline (private SQLite store plus an
annotated transfer graph) built from a small scenario: genesis balances,
sanctions and optional setup blocks. Adversary plans append to it and the
report compares what the classifier concludes with what the impurity
records say.
"""
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import pandas as pd
import yaml

from taintledger.analysis.base_analysis import BaseAnalysis
from taintledger.core.chain_ingest import parse_op
from taintledger.core.history_store import HistoryStore
from taintledger.core.pipeline import ChainView, LedgerPipeline
from taintledger.errors import ConfigError, InvalidChainData, ValidationError
from taintledger.models.data_frame_builder import DataFrameBuilder
from taintledger.models.tx_graph import TxGraph
from taintledger.models.types import Address, BalanceOp, SanctionEntry, SanctionSet, check_amount, to_address
from taintledger.strategies.adversary import AdversaryFactory, AdversaryPlan, Dust, derived_address
from taintledger.strategies.classifiers import BinaryClassifier, Classifier, ClassifierFactory, Verdict
from taintledger.utils.config import parse_fraction

REPORT_COLUMNS = [
    "strategy", "classifier", "budget", "tainted_count", "v_tainted", "v_entire",
    "amplification", "verdict_before", "verdict_after", "block",
]


@dataclass
class LabScenario:
    genesis: dict[Address, int]
    sanctions: SanctionSet
    start_block: int = 1
    setup: list[list[BalanceOp]] = field(default_factory=list)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "LabScenario":
        """Scenario config: ``genesis`` map, ``sanctions`` list and optional ``setup`` blocks of ops."""
        try:
            genesis = {to_address(a): check_amount(int(v), f"balance of {a}") for a, v in raw["genesis"].items()}
            sanctions = SanctionSet(
                SanctionEntry(to_address(s["address"]), int(s.get("from", 0)), s.get("until"))
                for s in raw.get("sanctions", [])
            )
            setup = [
                [parse_op({**op, "sent": str(op["sent"]), "received": str(op["received"])}) for op in ops]
                for ops in raw.get("setup", [])
            ]
        except (KeyError, TypeError, ValueError, InvalidChainData, ValidationError) as e:
            raise ConfigError(f"bad lab scenario: {e}") from e
        return cls(genesis, sanctions, int(raw.get("start_block", 1)), setup)

    @classmethod
    def from_yaml(cls, path: str | Path) -> "LabScenario":
        with open(path, "r") as file:
            return cls.from_dict(yaml.safe_load(file) or {})


def build_lab(scenario: LabScenario) -> LedgerPipeline:
    """Fresh in-memory pipeline with the scenario's setup blocks applied."""
    lab = LedgerPipeline.create(
        scenario.genesis, scenario.sanctions, scenario.start_block, HistoryStore(None), TxGraph(), progress_every=0
    )
    for ops in scenario.setup:
        lab.append(ops)
    return lab


@dataclass
class AttackReport:
    strategy: str
    classifier: str
    budget: int
    tainted_count: int
    v_tainted: int
    v_entire: int
    amplification: Fraction
    target_scores: dict[Address, Fraction]
    verdict_before: Verdict | None
    verdict_after: Verdict | None
    block: int

    def to_row(self) -> dict[str, Any]:
        row = {c: getattr(self, c) for c in REPORT_COLUMNS}
        row["verdict_before"] = self.verdict_before.value if self.verdict_before else ""
        row["verdict_after"] = self.verdict_after.value if self.verdict_after else ""
        return row


def classify(classifier: Classifier, view: ChainView, address: Address, block: int) -> Verdict:
    return classifier.classify(view, address, block)


def run_adversary(plan: AdversaryPlan, classifier: Classifier, lab: LedgerPipeline) -> AttackReport:
    """Execute ``plan`` on the lab ledger and report what ``classifier`` sees afterwards."""
    view = lab.view()
    before = None
    if plan.subject is not None:
        before = classifier.classify(view, plan.subject, lab.state.last_block)

    plan.strategy.execute(lab, plan)

    block = lab.state.last_block
    tainted = classifier.tainted_set(view, block)
    state, sanctions = lab.state, lab.sanctions
    v_entire = sum(b for a, b in state.balance.items() if not sanctions.is_sanctioned(a, block))
    v_tainted = sum(state.balance.get(a, 0) for a in tainted if not sanctions.is_sanctioned(a, block))
    watched = list(plan.targets) + ([plan.subject] if plan.subject is not None else [])
    report = AttackReport(
        strategy=plan.strategy.describe(),
        classifier=classifier.describe(),
        budget=plan.budget,
        tainted_count=len(tainted),
        v_tainted=v_tainted,
        v_entire=v_entire,
        amplification=Fraction(v_tainted, plan.budget) if plan.budget else Fraction(0),
        target_scores={a: state.record(a).score for a in watched},
        verdict_before=before,
        verdict_after=classifier.classify(view, plan.subject, block) if plan.subject is not None else None,
        block=block,
    )
    lab.logger.info(
        f"{report.strategy} vs {report.classifier}: |G|={report.tainted_count}, "
        f"amplification={float(report.amplification):.1f}"
    )
    return report


@dataclass
class AmplificationConfig:
    population: int = 1000
    holding: int = 10**6
    epsilon: int = 1
    budgets: list[int] = field(default_factory=lambda: [0, 1, 2, 4, 8, 12])
    threshold: Fraction = Fraction(1, 20)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "AmplificationConfig":
        values = dict(raw)
        if "threshold" in values:
            values["threshold"] = parse_fraction(values["threshold"], "threshold")
        try:
            config = cls(**values)
        except TypeError as e:
            raise ConfigError(f"bad amplification config: {e}") from e
        if config.population <= 0 or config.epsilon <= 0 or any(b < 0 for b in config.budgets):
            raise ConfigError("population and epsilon must be positive, budgets non-negative")
        return config


def dusting_lab(population: int, holding: int, budget: int) -> tuple[LedgerPipeline, Address, list[Address]]:
    """Sanctioned source holding ``budget`` plus ``population`` clean addresses."""
    source = derived_address("sanctioned-source", 0)
    victims = [derived_address("population", i) for i in range(population)]
    genesis = {source: budget, **{v: holding for v in victims}}
    sanctions = SanctionSet([SanctionEntry(source, 0)])
    return build_lab(LabScenario(genesis, sanctions)), source, victims


class RulesLab(BaseAnalysis):
    """Runs adversary plans against classifiers and sweeps dust budgets."""

    name = "rules"

    def __init__(self):
        super().__init__()
        self.frames = DataFrameBuilder()

    def run(self, plan: AdversaryPlan, classifier: Classifier, lab: LedgerPipeline) -> AttackReport:
        return run_adversary(plan, classifier, lab)

    def amplification_study(self, config: AmplificationConfig) -> pd.DataFrame:
        """One dusting run per budget over the same population."""
        rows = []
        for budget in config.budgets:
            lab, source, victims = dusting_lab(config.population, config.holding, budget)
            targets = victims[: min(config.population, budget // config.epsilon)]
            plan = AdversaryPlan(Dust(config.epsilon), source, budget=budget, targets=targets)
            report = run_adversary(plan, BinaryClassifier(), lab)
            scores = report.target_scores.values()
            tainted = BinaryClassifier().tainted_set(lab.view(), report.block)
            rows.append({
                "budget": budget,
                "targets": len(targets),
                "v_tainted": report.v_tainted,
                "amplification": report.amplification,
                "max_target_score": max(scores, default=Fraction(0)),
                "above_threshold": sum(1 for s in scores if s >= config.threshold),
                "binary_tainted_share": Fraction(sum(1 for t in targets if t in tainted), len(targets))
                if targets else Fraction(0),
            })
        self.logger.info(f"Amplification study over {len(rows)} budgets")
        columns = ["budget", "targets", "v_tainted", "amplification", "max_target_score",
                   "above_threshold", "binary_tainted_share"]
        return self.frames.build(rows, columns)

    def coverage_study(
        self, sizes: Iterable[int], rounds: int = 10, transfers_per_round: int = 50, seed: int = 0
    ) -> pd.DataFrame:
        """Binary coverage |G| / |population| as ordinary traffic spreads one round of dust."""
        rng = np.random.default_rng(seed)
        rows = []
        binary = BinaryClassifier()
        for size in sizes:
            dusted = max(1, size // 100)
            lab, source, population = dusting_lab(size, 10**6, dusted)
            Dust(1).execute(lab, AdversaryPlan(Dust(1), source, budget=dusted, targets=population[:dusted]))
            for round_index in range(1, rounds + 1):
                senders = rng.integers(0, size, transfers_per_round)
                receivers = rng.integers(0, size, transfers_per_round)
                ops = []
                spent: dict[Address, int] = {}
                for s, r in zip(senders, receivers):
                    sender = population[int(s)]
                    available = lab.state.balance.get(sender, 0) - spent.get(sender, 0)
                    amount = available // 10
                    if amount:
                        spent[sender] = spent.get(sender, 0) + amount
                        ops.append(BalanceOp.transfer(sender, population[int(r)], amount))
                lab.append(ops)
                tainted = binary.tainted_set(lab.view(), lab.state.last_block)
                covered = sum(1 for a in population if a in tainted)
                mean_score = sum((lab.state.record(a).score for a in population), Fraction(0)) / size
                rows.append({
                    "population": size,
                    "round": round_index,
                    "coverage": Fraction(covered, size),
                    "mean_score": mean_score,
                })
        return self.frames.build(rows, ["population", "round", "coverage", "mean_score"])


def amplification_study(config: AmplificationConfig) -> pd.DataFrame:
    return RulesLab().amplification_study(config)


def build_classifier(spec: dict[str, Any]) -> Classifier:
    """Classifier from a config mapping such as ``{kind: percentage, theta: 5%, scope: target-only}``."""
    params = {k: v for k, v in spec.items() if k != "kind"}
    kind = spec.get("kind", "")
    if "theta" in params:
        params["theta"] = parse_fraction(params["theta"], "theta") if kind == "percentage" else int(params["theta"])
    if "reset_services" in params:
        params["reset_services"] = [to_address(a) for a in params["reset_services"]]
    return ClassifierFactory.create_classifier(kind, **params)


def build_plan(spec: dict[str, Any]) -> AdversaryPlan:
    """Adversary plan from a config mapping with ``strategy``, ``params`` and the acting addresses."""
    params = dict(spec.get("params") or {})
    if "service" in params:
        params["service"] = to_address(params["service"])
    strategy = AdversaryFactory.create_strategy(spec.get("strategy", ""), **params)
    try:
        return AdversaryPlan(
            strategy=strategy,
            source=to_address(spec["source"]),
            budget=int(spec.get("budget", 0)),
            subject=to_address(spec["subject"]) if spec.get("subject") else None,
            targets=[to_address(a) for a in spec.get("targets", [])],
            reserve=to_address(spec["reserve"]) if spec.get("reserve") else None,
        )
    except KeyError as e:
        raise ConfigError(f"adversary plan is missing {e}") from e
