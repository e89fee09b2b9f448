"""Deterministic synthetic chains.

A chain is a funded population exchanging background traffic (transfers,
fees, rewards, occasional pool deposits and withdrawals) plus scripted
scenarios whose ops land at fixed block offsets:

- ``dusting``: a sanctioned pool sends dust to many well-funded victims
- ``split_and_merge``: repeated fan-out / fan-in of withdrawn funds
- ``test_depositing``: small probe deposit into a service, then large ones
- ``exploit``: attacker withdrawals with ground truth, plus a decoy branch at
  a known impurity score

Censoring producers never include ops that touch a pool; scripted ops that
would land in their blocks are deferred to the next block.
"""
import random
from collections import deque
from dataclasses import dataclass, field, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Iterator

import numpy as np
import yaml

from taintledger.core.chain_ingest import (
    WithdrawalEvent,
    write_addresses,
    write_blocks,
    write_genesis,
    write_labels,
    write_sanctions,
    write_withdrawals,
)
from taintledger.errors import ConfigError
from taintledger.models.types import BASE_UNITS, Address, BalanceOp, Block, SanctionEntry, SanctionSet
from taintledger.utils.config import parse_fraction
from taintledger.utils.logger import setup_logger

SCENARIO_KINDS = ("dusting", "split_and_merge", "test_depositing", "exploit")

SCENARIO_DEFAULTS: dict[str, dict[str, Any]] = {
    "dusting": {"at": 2, "dust": 1, "victims": 12, "victim_balance": 10**6},
    "split_and_merge": {"at": 2, "fanout": 100, "stages": 3, "leg_amount": BASE_UNITS, "rounds": 1},
    "test_depositing": {
        "at": 2, "probers": 10, "direct": 10, "cross": 5,
        "probe": BASE_UNITS // 10, "large": 10 * BASE_UNITS, "repeats": 3, "gap": 5,
    },
    "exploit": {
        "at": 2, "seeds": 5, "hops": 3, "amount": 100 * BASE_UNITS, "hidden": 5,
        "decoy_score": "0.026", "decoy_fanout": 40, "cash_out": 10 * BASE_UNITS,
    },
}


@dataclass
class GeneratorConfig:
    address_count: int = 1000
    block_count: int = 100
    ops_per_block: int = 20
    op_mix: dict[str, float] = field(default_factory=lambda: {"transfer": 0.8, "fee": 0.15, "reward": 0.05})
    start_block: int = 1
    genesis_coins: tuple[int, int] = (1, 100)
    producer_count: int = 5
    censoring_producers: int = 0
    pool_count: int = 1
    pool_coins: int = 1_000_000
    pool_activity: float = 0.2
    pool_denomination: int = BASE_UNITS
    relayer_count: int = 3
    fee_unit: int = 10**15
    reward_amount: int = 2 * 10**16
    scenarios: list[dict[str, Any]] = field(default_factory=list)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "GeneratorConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown generator settings: {sorted(unknown)}")
        values = dict(raw)
        if "genesis_coins" in values:
            values["genesis_coins"] = tuple(values["genesis_coins"])
        config = cls(**values)
        config.validate()
        return config

    @classmethod
    def from_yaml(cls, path: str | Path) -> "GeneratorConfig":
        with open(path, "r") as file:
            return cls.from_dict(yaml.safe_load(file) or {})

    def validate(self) -> None:
        if self.address_count < 2:
            raise ConfigError("address_count must be at least 2")
        if self.block_count < 0 or self.ops_per_block < 0:
            raise ConfigError("block_count and ops_per_block must be non-negative")
        if self.start_block < 1:
            raise ConfigError("start_block must be >= 1")
        if set(self.op_mix) - {"transfer", "fee", "reward"}:
            raise ConfigError(f"unknown op kinds in op_mix: {sorted(set(self.op_mix) - {'transfer', 'fee', 'reward'})}")
        if any(v < 0 for v in self.op_mix.values()):
            raise ConfigError("op_mix ratios must be non-negative")
        if sum(self.op_mix.values()) > 1 + 1e-12:
            raise ConfigError(f"op_mix ratios sum to {sum(self.op_mix.values())} > 1")
        low, high = self.genesis_coins
        if low < 0 or high < low:
            raise ConfigError(f"invalid genesis_coins range {self.genesis_coins}")
        if self.producer_count < 1 or not 0 <= self.censoring_producers <= self.producer_count:
            raise ConfigError("need at least one producer and at most producer_count censoring producers")
        if self.pool_count < 1:
            raise ConfigError("pool_count must be at least 1")
        if not 0 <= self.pool_activity <= 1:
            raise ConfigError("pool_activity must be within [0, 1]")
        for scenario in self.scenarios:
            kind = scenario.get("kind")
            if kind not in SCENARIO_KINDS:
                raise ConfigError(f"unknown scenario kind {kind!r}")
            unknown = set(scenario) - set(SCENARIO_DEFAULTS[kind]) - {"kind", "name"}
            if unknown:
                raise ConfigError(f"scenario {kind}: unknown settings {sorted(unknown)}")


def load_preset(name: str) -> GeneratorConfig:
    """Generator config shipped under taintledger/presets/<name>.yaml."""
    resource = resources.files("taintledger.presets").joinpath(f"{name}.yaml")
    if not resource.is_file():
        raise ConfigError(f"unknown generator preset {name!r}")
    return GeneratorConfig.from_dict(yaml.safe_load(resource.read_text()) or {})


@dataclass
class _Step:
    due: int
    op: BalanceOp
    event: WithdrawalEvent | None = None


@dataclass
class _Script:
    name: str
    steps: deque[_Step]


@dataclass
class SynthChain:
    genesis: dict[Address, int]
    sanctions: SanctionSet
    pools: list[Address]
    producers: list[Address]
    censoring: list[Address]
    blocks: list[Block]
    withdrawals: list[WithdrawalEvent]
    labels: dict[Address, str]
    ground_truth: set[Address]
    scenarios: dict[str, dict[str, Any]]


class AddressFactory:
    """Fresh, distinct pseudo-random addresses."""

    def __init__(self, seed: int):
        self._rng = random.Random(seed)
        self._seen: set[str] = set()

    def new(self) -> Address:
        while True:
            candidate = "0x" + self._rng.randbytes(20).hex()
            if candidate not in self._seen:
                self._seen.add(candidate)
                return Address(candidate)

    def many(self, count: int) -> list[Address]:
        return [self.new() for _ in range(count)]


class ChainGenerator:
    """Builds one synthetic chain for a config and seed."""

    def __init__(self, config: GeneratorConfig, seed: int):
        config.validate()
        self.logger = setup_logger(__name__)
        self.config = config
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.addresses = AddressFactory(seed)

        self.population = self.addresses.many(config.address_count)
        self.producers = self.addresses.many(config.producer_count)
        self.censoring = self.producers[: config.censoring_producers]
        self.pools = self.addresses.many(config.pool_count)
        self.relayers = self.addresses.many(config.relayer_count)

        low, high = config.genesis_coins
        coins = self.rng.integers(low, high + 1, size=config.address_count)
        self.balances: dict[Address, int] = {a: int(c) * BASE_UNITS for a, c in zip(self.population, coins)}
        for pool in self.pools:
            self.balances[pool] = config.pool_coins * BASE_UNITS

        self.sanctioned: list[Address] = list(self.pools)
        self.labels: dict[Address, str] = {}
        self.ground_truth: set[Address] = set()
        self.withdrawals: list[WithdrawalEvent] = []
        self.scenario_meta: dict[str, dict[str, Any]] = {}
        self._scripts: list[_Script] = []
        self._relayer_turn = 0

        for index, scenario in enumerate(config.scenarios):
            kind = scenario["kind"]
            params = {**SCENARIO_DEFAULTS[kind], **{k: v for k, v in scenario.items() if k not in ("kind", "name")}}
            name = scenario.get("name", f"{kind}-{index}")
            builder = getattr(self, f"_build_{kind}")
            self.scenario_meta[name] = {"kind": kind, **builder(name, params)}
        self.genesis = dict(self.balances)

    # -- helpers --------------------------------------------------------------------------

    @property
    def _start(self) -> int:
        return self.config.start_block

    def _fund(self, addresses: list[Address], amount: int) -> None:
        for address in addresses:
            self.balances[address] = self.balances.get(address, 0) + amount

    def _relayer(self) -> Address:
        relayer = self.relayers[self._relayer_turn % len(self.relayers)] if self.relayers else self.pools[0]
        self._relayer_turn += 1
        return relayer

    def _withdraw_step(self, due: int, pool: Address, beneficiary: Address, amount: int) -> _Step:
        event = WithdrawalEvent(self._relayer(), pool, beneficiary, amount, due)
        return _Step(due, BalanceOp.transfer(pool, beneficiary, amount), event)

    def _add_script(self, name: str, steps: list[_Step]) -> None:
        self._scripts.append(_Script(name, deque(steps)))

    # -- scenarios ------------------------------------------------------------------------

    def _build_dusting(self, name: str, p: dict) -> dict:
        source = self.pools[0]
        victims = self.addresses.many(p["victims"])
        self._fund(victims, p["victim_balance"])
        due = self._start + p["at"]
        steps = [_Step(due, BalanceOp.transfer(source, victim, p["dust"])) for victim in victims]
        self._add_script(name, steps)
        return {"source": source, "victims": victims, "dust": p["dust"], "budget": p["dust"] * len(victims)}

    def _build_split_and_merge(self, name: str, p: dict) -> dict:
        fanout, leg = p["fanout"], p["leg_amount"]
        due = self._start + p["at"]
        steps: list[_Step] = []
        members: list[Address] = []
        for _ in range(p["rounds"]):
            head = self.addresses.new()
            members.append(head)
            steps.append(self._withdraw_step(due, self.pools[0], head, fanout * leg))
            due += 1
            for _stage in range(p["stages"]):
                legs = self.addresses.many(fanout)
                merger = self.addresses.new()
                members.extend(legs + [merger])
                steps.extend(_Step(due, BalanceOp.transfer(head, a, leg)) for a in legs)
                steps.extend(_Step(due + 1, BalanceOp.transfer(a, merger, leg)) for a in legs)
                head = merger
                due += 2
        self._add_script(name, steps)
        return {"members": members}

    def _build_test_depositing(self, name: str, p: dict) -> dict:
        service, other = self.addresses.new(), self.addresses.new()
        self.labels[service] = f"{name}-service"
        self.labels[other] = f"{name}-other"
        probers = self.addresses.many(p["probers"])
        direct = self.addresses.many(p["direct"])
        cross = self.addresses.many(p["cross"])
        probe, large, gap = p["probe"], p["large"], p["gap"]
        needed = probe + p["repeats"] * large
        start = self._start + p["at"]
        steps = [self._withdraw_step(start, self.pools[0], a, needed) for a in probers + direct + cross]
        for a in probers:
            steps.append(_Step(start + 1, BalanceOp.transfer(a, service, probe)))
        for a in cross:
            steps.append(_Step(start + 1, BalanceOp.transfer(a, service, probe)))
        for repeat in range(p["repeats"]):
            due = start + 1 + gap + repeat
            for a in probers + direct:
                steps.append(_Step(due, BalanceOp.transfer(a, service, large)))
            for a in cross:
                steps.append(_Step(due, BalanceOp.transfer(a, other, large)))
        self._add_script(name, steps)
        return {"service": service, "other_service": other, "probers": probers, "direct": direct, "cross": cross}

    def _build_exploit(self, name: str, p: dict) -> dict:
        pool = self.addresses.new()
        self.pools.append(pool)
        self.sanctioned.append(pool)
        self.balances[pool] = p["seeds"] * p["amount"]
        exchange, mixer = self.addresses.new(), self.addresses.new()
        self.labels[exchange] = f"{name}-exchange"
        self.labels[mixer] = f"{name}-mixer"

        decoy_score = parse_fraction(p["decoy_score"], "decoy_score")
        if not 0 < decoy_score < 1:
            raise ConfigError(f"decoy_score must lie strictly between 0 and 1, got {p['decoy_score']}")
        unit = 10**15
        decoy_taint = decoy_score.numerator * unit
        decoy = self.addresses.new()
        self._fund([decoy], (decoy_score.denominator - decoy_score.numerator) * unit)
        decoy_payout = decoy_score.denominator * 10**13
        decoy_recipients = self.addresses.many(p["decoy_fanout"])

        hidden = self.addresses.many(p["hidden"])
        self._fund(hidden, p["amount"])
        seeds = self.addresses.many(p["seeds"])
        due = self._start + p["at"]
        steps = [self._withdraw_step(due, pool, seed, p["amount"]) for seed in seeds]
        chains = []
        for position, seed in enumerate(seeds):
            chain = [seed] + self.addresses.many(p["hops"])
            chains.append(chain)
            for hop, (a, b) in enumerate(zip(chain, chain[1:])):
                steps.append(_Step(due + 1 + hop, BalanceOp.transfer(a, b, p["amount"] - hop * p["cash_out"])))
                steps.append(_Step(due + 1 + hop, BalanceOp.transfer(b, exchange, p["cash_out"])))
            tail = chain[-1]
            if position == 0:
                steps.append(_Step(due + 1 + p["hops"], BalanceOp.transfer(tail, decoy, decoy_taint)))
                steps.extend(
                    _Step(due + 2 + p["hops"], BalanceOp.transfer(decoy, r, decoy_payout)) for r in decoy_recipients
                )
            elif position == 1:
                steps.append(_Step(due + 1 + p["hops"], BalanceOp.transfer(tail, mixer, p["cash_out"])))
        self._add_script(name, steps)

        attackers = [a for chain in chains for a in chain] + hidden
        self.ground_truth.update(attackers)
        return {
            "pool": pool,
            "seeds": seeds,
            "attackers": attackers,
            "hidden": hidden,
            "exchange": exchange,
            "mixer": mixer,
            "decoy": decoy,
            "decoy_score": str(decoy_score),
            "decoy_recipients": decoy_recipients,
        }

    # -- block stream ---------------------------------------------------------------------

    def _touches_pool(self, op: BalanceOp) -> bool:
        return op.sender in self._pool_set or op.receiver in self._pool_set

    def _take(self, op: BalanceOp, script: str) -> None:
        if op.sender is not None:
            available = self.balances.get(op.sender, 0)
            if available < op.sent:
                raise ConfigError(f"scenario {script} overdraws {op.sender}: {available} < {op.sent}")
            self.balances[op.sender] = available - op.sent
        self.balances[op.receiver] = self.balances.get(op.receiver, 0) + op.received

    def _background(self, producer: Address, censoring: bool) -> list[BalanceOp]:
        config, rng = self.config, self.rng
        mix = config.op_mix
        weights = [mix.get("transfer", 0.0), mix.get("fee", 0.0), mix.get("reward", 0.0)]
        weights.append(max(0.0, 1.0 - sum(weights)))
        slots = config.ops_per_block
        kinds = rng.choice(4, size=slots, p=np.array(weights) / sum(weights))
        senders = rng.integers(0, len(self.population), size=slots)
        receivers = rng.integers(0, len(self.population), size=slots)
        shares = rng.integers(1, 21, size=slots)

        ops: list[BalanceOp] = []
        for kind, s, r, share in zip(kinds, senders, receivers, shares):
            sender = self.population[s]
            available = self.balances[sender]
            if kind == 0 and available:
                amount = max(1, available * int(share) // 100)
                ops.append(BalanceOp.transfer(sender, self.population[r], amount))
            elif kind == 1 and available:
                sent = min(available, config.fee_unit * int(share))
                ops.append(BalanceOp.fee(sender, producer, sent, sent - sent * 3 // 10))
            elif kind == 2:
                ops.append(BalanceOp.reward(producer, config.reward_amount))
            else:
                continue
            self._take(ops[-1], "background")

        if not censoring and config.pool_activity and rng.random() < config.pool_activity:
            pool = self.pools[int(rng.integers(0, config.pool_count))]
            depositor = self.population[int(rng.integers(0, len(self.population)))]
            beneficiary = self.population[int(rng.integers(0, len(self.population)))]
            denomination = config.pool_denomination
            if self.balances[depositor] >= denomination:
                ops.append(BalanceOp.transfer(depositor, pool, denomination))
                self._take(ops[-1], "background")
            if self.balances[pool] >= denomination:
                ops.append(BalanceOp.transfer(pool, beneficiary, denomination))
                self._take(ops[-1], "background")
                self._pending_events.append(WithdrawalEvent(self._relayer(), pool, beneficiary, denomination, 0))
        return ops

    def blocks(self) -> Iterator[Block]:
        """Yield the chain's blocks; withdrawal events are collected on the way."""
        self.balances = dict(self.genesis)
        self.withdrawals = []
        self._pool_set = set(self.pools)
        censoring_set = set(self.censoring)
        scripts = [_Script(s.name, deque(s.steps)) for s in self._scripts]
        producer_index = self.rng.integers(0, len(self.producers), size=self.config.block_count)

        for offset in range(self.config.block_count):
            number = self._start + offset
            producer = self.producers[int(producer_index[offset])]
            censoring = producer in censoring_set
            self._pending_events: list[WithdrawalEvent] = []
            ops: list[BalanceOp] = []
            for script in scripts:
                while script.steps and script.steps[0].due <= number:
                    step = script.steps[0]
                    if censoring and self._touches_pool(step.op):
                        break
                    self._take(step.op, script.name)
                    ops.append(step.op)
                    if step.event is not None:
                        self._pending_events.append(step.event)
                    script.steps.popleft()
            ops.extend(self._background(producer, censoring))
            self.withdrawals.extend(replace(event, block=number) for event in self._pending_events)
            yield Block(number, producer, tuple(ops))

        unfinished = [s.name for s in scripts if s.steps]
        if unfinished:
            self.logger.warning(f"Scenarios not finished within {self.config.block_count} blocks: {unfinished}")

    def sanction_set(self) -> SanctionSet:
        return SanctionSet(SanctionEntry(a, self._start) for a in self.sanctioned)

    def generate(self) -> SynthChain:
        """Materialize the whole chain in memory (small configs)."""
        blocks = list(self.blocks())
        return SynthChain(
            genesis=dict(self.genesis),
            sanctions=self.sanction_set(),
            pools=list(self.pools),
            producers=list(self.producers),
            censoring=list(self.censoring),
            blocks=blocks,
            withdrawals=list(self.withdrawals),
            labels=dict(self.labels),
            ground_truth=set(self.ground_truth),
            scenarios=self.scenario_meta,
        )

    def write(self, out_dir: str | Path) -> Path:
        """Stream the chain to ``out_dir`` alongside its side files."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        count = write_blocks(self.blocks(), out / "blocks.jsonl")
        write_genesis(self.genesis, out / "genesis.jsonl")
        write_sanctions(self.sanction_set(), out / "sanctions.txt")
        write_withdrawals(self.withdrawals, out / "withdrawals.jsonl")
        write_labels(self.labels, out / "labels.csv")
        write_addresses(self.pools, out / "pools.txt")
        if self.ground_truth:
            write_addresses(self.ground_truth, out / "ground_truth.txt")
        with open(out / "scenarios.yaml", "w") as file:
            yaml.safe_dump(_plain(self.scenario_meta), file, sort_keys=True)
        self.logger.info(f"Wrote {count} blocks to {out}")
        return out


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set)):
        return [_plain(v) for v in value]
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, str):
        return str(value)
    return value


def synth_chain(config: GeneratorConfig, seed: int, out_dir: str | Path) -> Path:
    """Generate a chain deterministically and write it to ``out_dir``."""
    return ChainGenerator(config, seed).write(out_dir)
