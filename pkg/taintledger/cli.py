"""Command-line front end.

Every subcommand writes CSV (or JSON with ``--json``) to stdout or ``--out``.
Data errors exit with status 1 and a single ``error: <Kind>: message`` line
on stderr; usage errors exit with status 2.
"""
import argparse
import itertools
import json
import sys
from pathlib import Path
from typing import Any, Sequence

import pandas as pd
import yaml

from taintledger.analysis import AnalysisFactory
from taintledger.analysis.rules_lab import AmplificationConfig, LabScenario, build_classifier, build_lab, build_plan
from taintledger.analysis.tracker import TrackConfig, seeds_from_withdrawals, threshold_sweep
from taintledger.bridges import BridgeRecord, decode, default_registry, load_descriptors, load_registry
from taintledger.core.balance_provider import JsonRpcBalanceProvider, StaticBalanceProvider
from taintledger.core.chain_ingest import (
    extract_withdrawers,
    read_addresses,
    read_blocks,
    read_genesis,
    read_labels,
    read_sanctions,
    read_withdrawals,
)
from taintledger.core.history_store import DB_FILE, HistoryStore
from taintledger.core.pipeline import ChainView, LedgerPipeline
from taintledger.core.synth import GeneratorConfig, load_preset, synth_chain
from taintledger.errors import ConfigError, ParseError, TaintLedgerError
from taintledger.models.data_frame_builder import DataFrameBuilder
from taintledger.models.tx_graph import TxGraph
from taintledger.models.types import SanctionSet, to_address
from taintledger.utils.config import load_config, parse_fraction
from taintledger.utils.logger import LOG_LEVELS, set_global_log_level, setup_logger

DEFAULT_GRID = "0.005,0.01,0.02,0.026,0.03,0.05,0.1,0.2,0.5"


class UsageError(Exception):
    """Bad command line; exits with status 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


# ---- output ---------------------------------------------------------------

def _emit_text(text: str, args: argparse.Namespace) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _emit(frame: pd.DataFrame, args: argparse.Namespace) -> None:
    frames = DataFrameBuilder()
    _emit_text(frames.to_json(frame) + "\n" if args.json else frames.to_csv(frame), args)


def _emit_sections(sections: dict[str, pd.DataFrame], args: argparse.Namespace) -> None:
    frames = DataFrameBuilder()
    if args.json:
        body = {name: json.loads(frames.to_json(frame)) for name, frame in sections.items()}
        _emit_text(json.dumps(body, indent=2) + "\n", args)
        return
    _emit_text("\n".join(f"# {name}\n{frames.to_csv(frame)}" for name, frame in sections.items()), args)


# ---- inputs ---------------------------------------------------------------

def _store_path(args: argparse.Namespace, config: dict) -> Path:
    return Path(args.store or config["store"]["path"])


def _open_store(args: argparse.Namespace, config: dict, balances=None) -> HistoryStore:
    path = _store_path(args, config)
    if not (path / DB_FILE).exists():
        raise ConfigError(f"no ledger store at {path}; run `taintledger ingest` first")
    return HistoryStore(path, balance_provider=balances)


def _sanctions(path: str | None) -> SanctionSet:
    return read_sanctions(path) if path else SanctionSet()


def _view(args: argparse.Namespace, config: dict) -> ChainView:
    store = _open_store(args, config)
    graph = TxGraph.from_blocks(
        b for b in read_blocks(args.blocks) if store.last_block is None or b.number <= store.last_block
    )
    return ChainView(store, graph, _sanctions(getattr(args, "sanctions", None)))


def _read_seeds(path: str) -> set[tuple[Any, int]]:
    seeds = set()
    with open(path, "r") as file:
        for line_number, line in enumerate(file, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.replace(",", " ").split()
            try:
                seeds.add((to_address(parts[0]), int(parts[1])))
            except (IndexError, ValueError, TaintLedgerError) as e:
                raise ParseError(f"expected `address block`: {e}", line_number, path) from e
    return seeds


def _seeds(args: argparse.Namespace) -> set[tuple[Any, int]]:
    if args.seeds:
        return _read_seeds(args.seeds)
    if not (args.withdrawals and args.pools):
        raise UsageError("give --seeds, or --withdrawals together with --pools")
    pools = set(read_addresses(args.pools))
    return seeds_from_withdrawals(extract_withdrawers(read_withdrawals(args.withdrawals), pools))


def _track_config(args: argparse.Namespace, config: dict) -> TrackConfig:
    tracking = config["tracking"]
    return TrackConfig(
        threshold=parse_fraction(args.threshold, "threshold") if args.threshold else tracking["threshold"],
        super_account_tx_floor=args.super_floor if args.super_floor is not None else tracking["super_account_tx_floor"],
        prune_set=frozenset(read_addresses(args.prune)) if args.prune else frozenset(),
        service_labels=read_labels(args.labels) if args.labels else {},
    )


def _generator_config(args: argparse.Namespace) -> GeneratorConfig:
    if args.config:
        return GeneratorConfig.from_yaml(args.config)
    return load_preset(args.preset)


# ---- commands -------------------------------------------------------------

def cmd_ingest(args: argparse.Namespace, config: dict) -> None:
    ledger = config["ledger"]
    zero_on_delist = args.zero_on_delist or ledger["zero_on_delist"]
    sanctions = _sanctions(args.sanctions)
    blocks = read_blocks(args.blocks)
    first = next(blocks, None)
    if first is None:
        raise ConfigError(f"{args.blocks} holds no blocks")
    stream = itertools.chain([first], blocks)
    with HistoryStore(_store_path(args, config)) as store:
        if store.last_block is None:
            genesis = read_genesis(args.genesis) if args.genesis else {}
            start = args.start_block if args.start_block is not None else first.number
            pipeline = LedgerPipeline.create(
                genesis, sanctions, start, store,
                zero_on_delist=zero_on_delist, progress_every=ledger["progress_every"],
            )
        else:
            if args.genesis:
                raise ConfigError("store is already initialized; --genesis only applies to a fresh store")
            pipeline = LedgerPipeline.resume(
                store, sanctions, zero_on_delist=zero_on_delist, progress_every=ledger["progress_every"]
            )
        metrics = pipeline.run(stream)
        stats = store.stats()
    row = {"last_block": store.last_block, "blocks": metrics.blocks, "ops": metrics.ops,
           "addresses": stats.address_count}
    _emit(DataFrameBuilder().build([row], list(row)), args)


def _record_row(address, record, block=None) -> dict:
    row = {"address": address}
    if block is not None:
        row["block"] = block
    row.update({
        "impurity": record.impurity,
        "balance": record.balance if record.balance_known else "unknown",
        "score": record.score,
    })
    return row


def cmd_query_latest(args: argparse.Namespace, config: dict) -> None:
    provider = None
    rpc_url = args.rpc_url or config["store"]["rpc_url"]
    if args.genesis:
        provider = StaticBalanceProvider(read_genesis(args.genesis))
    elif rpc_url:
        provider = JsonRpcBalanceProvider(rpc_url)
    with _open_store(args, config, provider) as store:
        rows = [_record_row(a, store.query_latest(a)) for a in map(to_address, args.address)]
    _emit(DataFrameBuilder().build(rows, ["address", "impurity", "balance", "score"]), args)


def cmd_query_at(args: argparse.Namespace, config: dict) -> None:
    with _open_store(args, config) as store:
        rows = [_record_row(a, store.query_at(a, args.block), args.block) for a in map(to_address, args.address)]
    _emit(DataFrameBuilder().build(rows, ["address", "block", "impurity", "balance", "score"]), args)


def cmd_track(args: argparse.Namespace, config: dict) -> None:
    view = _view(args, config)
    try:
        state = AnalysisFactory.create_analysis("track", view, _track_config(args, config))(_seeds(args))
    finally:
        view.store.close()
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        frames = DataFrameBuilder()
        (out / "edges.csv").write_text(frames.to_csv(state.edges_frame()))
        (out / "volume.csv").write_text(frames.to_csv(state.volume_frame()))
    _emit(state.flagged_frame(), args)


def cmd_sweep(args: argparse.Namespace, config: dict) -> None:
    grid = [parse_fraction(g, "grid") for g in args.grid.split(",") if g.strip()]
    view = _view(args, config)
    try:
        frame = threshold_sweep(
            view, _seeds(args), read_addresses(args.ground_truth), grid, _track_config(args, config)
        )
    finally:
        view.store.close()
    _emit(frame, args)


def cmd_rules(args: argparse.Namespace, config: dict) -> None:
    with open(args.scenario, "r") as file:
        raw = yaml.safe_load(file) or {}
    if not isinstance(raw, dict) or "classifier" not in raw or "plan" not in raw:
        raise ConfigError(f"{args.scenario}: needs `classifier` and `plan` sections")
    lab = build_lab(LabScenario.from_dict(raw))
    report = AnalysisFactory.create_analysis("rules")(build_plan(raw["plan"]), build_classifier(raw["classifier"]), lab)
    frames = DataFrameBuilder()
    sections = {
        "report": frames.build([report.to_row()], list(report.to_row())),
        "target_scores": frames.build(
            [{"address": a, "score": s} for a, s in report.target_scores.items()], ["address", "score"]
        ),
    }
    _emit_sections(sections, args)


def cmd_amplify(args: argparse.Namespace, config: dict) -> None:
    raw: dict[str, Any] = {}
    if args.config:
        with open(args.config, "r") as file:
            raw = yaml.safe_load(file) or {}
    for name in ("population", "holding", "epsilon"):
        if getattr(args, name) is not None:
            raw[name] = getattr(args, name)
    if args.budgets:
        raw["budgets"] = [int(b) for b in args.budgets.split(",")]
    rules = AnalysisFactory.create_analysis("rules")
    _emit(rules.amplification_study(AmplificationConfig.from_dict(raw)), args)


def cmd_motifs(args: argparse.Namespace, config: dict) -> None:
    result = AnalysisFactory.create_analysis("motifs")(TxGraph.from_blocks(read_blocks(args.blocks)))
    rows = [
        {"motif": code, "count": count, "frequency": result["frequencies"][code]}
        for code, count in result["counts"].items()
    ]
    _emit(DataFrameBuilder().build(rows, ["motif", "count", "frequency"]), args)


def cmd_test_deposits(args: argparse.Namespace, config: dict) -> None:
    analysis = AnalysisFactory.create_analysis("test-deposits")
    flagged, frame = analysis(TxGraph.from_blocks(read_blocks(args.blocks)), read_labels(args.labels))
    if args.flagged_out:
        Path(args.flagged_out).write_text("".join(f"{a}\n" for a in sorted(flagged)))
    _emit(frame, args)


def cmd_census(args: argparse.Namespace, config: dict) -> None:
    pools = set(read_addresses(args.pools)) if args.pools else None
    with _open_store(args, config) as store:
        census = AnalysisFactory.create_analysis("census")(
            read_blocks(args.blocks), store, _sanctions(args.sanctions), pools
        )
    _emit(census.to_frame(), args)


def cmd_decode_bridge(args: argparse.Namespace, config: dict) -> None:
    registry = default_registry()
    if args.registry:
        load_registry(args.registry, registry)
    for descriptor in load_descriptors(args.descriptors) if args.descriptors else []:
        registry.register_scheme(descriptor)
    try:
        payload = bytes.fromhex(args.payload.removeprefix("0x"))
    except ValueError as e:
        raise UsageError(f"--payload is not hex: {e}") from e
    decoded = decode(BridgeRecord(args.scheme, payload, args.amount), registry)
    row = {
        "scheme": decoded.scheme,
        "via": decoded.via or "",
        "dest_chain": decoded.dest_chain if decoded.dest_chain is not None else "unknown",
        "dest_name": registry.chain_name(decoded.dest_chain) or "unknown",
        "recipient": decoded.recipient or "unknown",
        "amount": decoded.amount,
    }
    _emit(DataFrameBuilder().build([row], list(row)), args)


def cmd_synth(args: argparse.Namespace, config: dict) -> None:
    out = synth_chain(_generator_config(args), args.seed, args.out_dir)
    files = sorted(p.name for p in out.iterdir())
    _emit(DataFrameBuilder().build([{"file": str(out / f)} for f in files], ["file"]), args)


def cmd_bench(args: argparse.Namespace, config: dict) -> None:
    result = AnalysisFactory.create_analysis("bench", args.samples)(_generator_config(args), args.seed)
    _emit(result.to_frame(), args)


def cmd_report(args: argparse.Namespace, config: dict) -> None:
    if (args.pools is None) != (args.sanction_block is None):
        raise UsageError("--pools and --sanction-block go together")
    if args.pools and not args.blocks:
        raise UsageError("--sanction-block needs --blocks")
    blocks = list(read_blocks(args.blocks)) if args.blocks else None
    graph = TxGraph.from_blocks(blocks) if blocks is not None else None
    sanctions = _sanctions(args.sanctions) if args.sanctions else None
    pools = read_addresses(args.pools) if args.pools else None
    with _open_store(args, config) as store:
        sections = AnalysisFactory.create_analysis("report")(
            store, graph, sanctions, args.top, blocks=blocks, pools=pools, sanction_block=args.sanction_block
        )
    _emit_sections(sections, args)


# ---- parser ---------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--json", action="store_true", help="emit JSON instead of CSV")
    common.add_argument("--out", help="write output to this file instead of stdout")
    common.add_argument("--log-level", choices=LOG_LEVELS, type=str.upper, help="logging level (stderr)")
    return common


def _tracking_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--store", help="ledger store directory (default: $TAINTLEDGER_STORE)")
    parser.add_argument("--blocks", required=True, help="block file the store was built from")
    parser.add_argument("--sanctions", help="sanctions file")
    parser.add_argument("--seeds", help="seed file: `address block` per line")
    parser.add_argument("--withdrawals", help="pool withdrawal events (JSON lines)")
    parser.add_argument("--pools", help="pool contract addresses, one per line")
    parser.add_argument("--labels", help="service labels CSV (address,label)")
    parser.add_argument("--prune", help="addresses never expanded, one per line")
    parser.add_argument("--threshold", help="flagging threshold, e.g. 0.05 or 5%%")
    parser.add_argument("--super-floor", type=int, help="transaction count marking a super account")


def _generator_args(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group()
    source.add_argument(
        "--preset", "--synth", dest="preset", default="small", help="shipped generator preset (small, medium, large)"
    )
    source.add_argument("--config", help="generator config YAML")
    parser.add_argument("--seed", type=int, default=0, help="generator seed")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="taintledger", description="Haircut taint ledger with historical queries and analyses")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, parents=[common], help=help_text)
        sub.set_defaults(handler=handler)
        return sub

    sub = command("ingest", cmd_ingest, "apply a block file to the ledger store")
    sub.add_argument("--blocks", required=True)
    sub.add_argument("--store")
    sub.add_argument("--sanctions")
    sub.add_argument("--genesis", help="genesis balances (fresh store only)")
    sub.add_argument("--start-block", type=int, help="first block of a fresh store (default: first block in file)")
    sub.add_argument("--zero-on-delist", action="store_true")

    sub = command("query-latest", cmd_query_latest, "latest impurity record of addresses")
    sub.add_argument("--address", action="append", required=True, help="address to query (repeatable)")
    sub.add_argument("--store")
    sub.add_argument("--genesis", help="static balances for addresses the ledger never touched")
    sub.add_argument("--rpc-url", help="JSON-RPC endpoint for untouched balances")

    sub = command("query-at", cmd_query_at, "impurity record of addresses at a block")
    sub.add_argument("--address", action="append", required=True, help="address to query (repeatable)")
    sub.add_argument("--block", type=int, required=True)
    sub.add_argument("--store")

    sub = command("track", cmd_track, "threshold tracking from seed addresses")
    _tracking_args(sub)
    sub.add_argument("--out-dir", help="also write edges.csv and volume.csv here")

    sub = command("sweep", cmd_sweep, "precision and recall over a threshold grid")
    _tracking_args(sub)
    sub.add_argument("--ground-truth", required=True, help="true positives, one address per line")
    sub.add_argument("--grid", default=DEFAULT_GRID, help="ascending comma-separated thresholds")

    sub = command("rules", cmd_rules, "run one adversary plan against one classifier")
    sub.add_argument("--scenario", required=True, help="YAML with genesis, sanctions, setup, classifier, plan")

    sub = command("amplify", cmd_amplify, "dusting amplification study")
    sub.add_argument("--config", help="study config YAML")
    sub.add_argument("--population", type=int)
    sub.add_argument("--holding", type=int)
    sub.add_argument("--epsilon", type=int)
    sub.add_argument("--budgets", help="comma-separated dust budgets")

    sub = command("motifs", cmd_motifs, "connected triad census of the transfer graph")
    sub.add_argument("--blocks", required=True)

    sub = command("test-deposits", cmd_test_deposits, "test-then-transfer deposits into labeled services")
    sub.add_argument("--blocks", required=True)
    sub.add_argument("--labels", required=True)
    sub.add_argument("--flagged-out", help="write flagged depositors here")

    sub = command("census", cmd_census, "block producer census")
    sub.add_argument("--blocks", required=True)
    sub.add_argument("--store")
    sub.add_argument("--sanctions")
    sub.add_argument("--pools")

    sub = command("decode-bridge", cmd_decode_bridge, "decode a bridge payload")
    sub.add_argument("--scheme", required=True)
    sub.add_argument("--payload", required=True, help="hex payload")
    sub.add_argument("--amount", type=int, default=0, help="amount carried by the transaction")
    sub.add_argument("--registry", help="extra chain id table")
    sub.add_argument("--descriptors", help="directory of extra scheme descriptors")

    sub = command("synth", cmd_synth, "generate a synthetic chain")
    _generator_args(sub)
    sub.add_argument("--out-dir", required=True)

    sub = command("bench", cmd_bench, "ingest and query benchmark on a synthetic chain")
    _generator_args(sub)
    sub.add_argument("--samples", type=int, default=1000)

    sub = command("report", cmd_report, "score distribution, top holders, dusting and sanction impact")
    sub.add_argument("--store")
    sub.add_argument("--blocks", help="block file, enables the dusting summary")
    sub.add_argument("--sanctions")
    sub.add_argument("--top", type=int, default=10)
    sub.add_argument("--pools", help="pool contract addresses, one per line")
    sub.add_argument("--sanction-block", type=int, help="compare pool activity before and from this block")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: usage: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:
        return int(e.code or 0)

    try:
        config = load_config()
        set_global_log_level(args.log_level or config["log_level"])
        logger = setup_logger(__name__)
        logger.debug(f"Running {args.command}")
        args.handler(args, config)
    except UsageError as e:
        print(f"error: usage: {e}", file=sys.stderr)
        return 2
    except TaintLedgerError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        # factories reject unknown kinds with ValueError
        print(f"error: usage: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0
