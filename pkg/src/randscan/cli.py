"""Command-line interface: scan bytecode, replay fixtures, explain findings.

Reports are machine-readable JSON by default (deterministic field order;
wall-clock timings are the only fields expected to differ between identical
runs) with an optional human summary rendering. Exit status: 0 clean,
1 findings/attacks present, 2 operational failure on every input.
"""

from __future__ import annotations

import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click

from . import __version__
from .decoder import DecodeError, load_bytecode
from .engine import EngineConfig, ScanOutcome, scan_bytecode
from .replay import ReplayEngine, ReplayError, address_hex, ingest_suspects
from .replay.detectors import detect_manipulation, detect_rollback
from .taint import TaintPolicy
from .values import VULNERABLE_KINDS

SCHEMA_VERSION = 1


def _base_document(command: str) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": "randscan",
        "tool_version": __version__,
        "command": command,
    }


def _source_json(source) -> dict:
    return {"kind": source.kind, "pc": source.origin_pc, "run": source.run_index}


def _finding_json(finding, index: int) -> dict:
    return {
        "finding_id": f"F{index}",
        "patterns": list(finding.patterns),
        "call_pc": finding.call_pc,
        "sources": [_source_json(s) for s in finding.sources],
        "run_index": finding.run_index,
        "trail": list(finding.trail),
        "extended": finding.extended,
        "chains": [[{"pc": pc, "op": op} for pc, op in chain] for chain in finding.chains],
    }


def _scan_contract_json(outcome: ScanOutcome, findings_offset: int, timing_ms: float) -> dict:
    return {
        "id": outcome.contract_id,
        "findings": [
            _finding_json(f, findings_offset + i) for i, f in enumerate(outcome.report.findings)
        ],
        "diagnostics": outcome.diagnostics,
        "incomplete": outcome.incomplete,
        "error": outcome.error,
        "counters": {
            "runs": len(outcome.runs),
            "paths": outcome.paths,
            "blocks_executed": outcome.blocks_executed,
            "pruned": outcome.pruned,
        },
        "timing_ms": round(timing_ms, 3),
    }


def _write_document(doc: dict, out: str | None, fmt: str, summarize) -> None:
    if fmt == "summary":
        text = summarize(doc)
    else:
        text = json.dumps(doc, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


def _parse_kinds(raw: str | None) -> frozenset[str]:
    if not raw:
        return VULNERABLE_KINDS
    kinds = frozenset(k.strip().upper() for k in raw.split(",") if k.strip())
    unknown = kinds - VULNERABLE_KINDS
    if unknown:
        raise click.BadParameter(f"unknown source kinds: {', '.join(sorted(unknown))}")
    return kinds


def _parse_addresses(raw: tuple[str, ...]) -> frozenset[int]:
    out = set()
    for item in raw:
        for part in item.split(","):
            part = part.strip()
            if part:
                out.add(int(part, 16))
    return frozenset(out)


@click.group(context_settings={"auto_envvar_prefix": "RANDSCAN"})
@click.version_option(version=__version__, prog_name="randscan")
def main() -> None:
    """Weak-randomness analysis for EVM bytecode and recorded transactions."""


def _scan_one(raw_path: str, config: EngineConfig) -> dict:
    """Worker body: scan one input file into a contract document (finding ids
    are renumbered during the serial merge)."""
    path = Path(raw_path)
    started = time.monotonic()
    try:
        code = load_bytecode(path.read_bytes())
    except (OSError, DecodeError) as exc:
        return {
            "id": str(path),
            "findings": [],
            "diagnostics": [{"kind": "input-error", "detail": str(exc)}],
            "incomplete": False,
            "error": "input-error",
            "counters": {},
            "timing_ms": 0.0,
        }
    outcome = scan_bytecode(code, config, contract_id=str(path))
    elapsed_ms = (time.monotonic() - started) * 1000.0
    return _scan_contract_json(outcome, 0, elapsed_ms)


@main.command()
@click.argument("inputs", nargs=-1, required=True, type=click.Path())
@click.option("--mode", type=click.Choice(["any", "all"]), default="any", show_default=True,
              help="Pattern combination: any single pattern, or all three at one call site.")
@click.option("--max-paths", type=int, default=65536, show_default=True)
@click.option("--max-blocks", type=int, default=2048, show_default=True,
              help="Per-path basic-block budget.")
@click.option("--max-runs", type=int, default=3, show_default=True,
              help="Repeat executions for cross-transaction storage taint.")
@click.option("--timeout-secs", type=float, default=3600.0, show_default=True)
@click.option("--sources", default=None,
              help="Comma-separated override of the seed-instruction kinds.")
@click.option("--suppress-future-blockhash", is_flag=True, default=False,
              help="Drop BLOCKHASH sources whose argument is provably a future block.")
@click.option("--no-prune", is_flag=True, default=False,
              help="Disable stack-snapshot path pruning (debugging aid).")
@click.option("--jobs", type=int, default=None,
              help="Worker processes for batch scans [default: available parallelism].")
@click.option("--out", type=click.Path(), default=None, help="Write the report here.")
@click.option("--format", "fmt", type=click.Choice(["json", "summary"]), default="json",
              show_default=True)
def scan(inputs, mode, max_paths, max_blocks, max_runs, timeout_secs, sources,
         suppress_future_blockhash, no_prune, jobs, out, fmt) -> None:
    """Scan runtime bytecode files for weak-randomness vulnerabilities."""
    policy = TaintPolicy(_parse_kinds(sources), suppress_future_blockhash)
    config = EngineConfig(
        max_paths=max_paths,
        max_blocks_per_path=max_blocks,
        max_runs=max_runs,
        timeout=timeout_secs,
        pattern_mode=mode,
        policy=policy,
        prune=not no_prune,
    )

    if jobs is None:
        jobs = os.cpu_count() or 1
    jobs = max(1, min(jobs, len(inputs)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            contracts = list(pool.map(_scan_one, inputs, [config] * len(inputs)))
    else:
        contracts = [_scan_one(raw, config) for raw in inputs]

    # serial merge in input order: renumber finding ids document-wide
    total_findings = 0
    failures = 0
    for contract in contracts:
        if contract["error"]:
            failures += 1
        for finding in contract["findings"]:
            finding["finding_id"] = f"F{total_findings}"
            total_findings += 1

    doc = _base_document("scan")
    doc["pattern_mode"] = mode
    doc["contracts"] = contracts
    doc["summary"] = {
        "contracts": len(contracts),
        "findings": total_findings,
        "failed_inputs": failures,
    }
    _write_document(doc, out, fmt, _scan_summary)

    if failures == len(contracts) and contracts:
        sys.exit(2)
    sys.exit(1 if total_findings else 0)


def _scan_summary(doc: dict) -> str:
    lines = [f"randscan {doc['tool_version']} scan: "
             f"{doc['summary']['contracts']} contract(s), "
             f"{doc['summary']['findings']} finding(s)"]
    for contract in doc["contracts"]:
        status = contract["error"] or ("incomplete" if contract["incomplete"] else "ok")
        lines.append(f"  {contract['id']} [{status}]")
        for f in contract["findings"]:
            srcs = ", ".join(f"{s['kind']}@{s['pc']}" for s in f["sources"])
            lines.append(
                f"    {f['finding_id']} {'+'.join(f['patterns'])} at call pc {f['call_pc']:#x}"
                f" (run {f['run_index']}) sources: {srcs}"
            )
        for d in contract["diagnostics"]:
            if d.get("kind") in ("creation-bytecode", "input-error"):
                lines.append(f"    note: {d.get('detail', d['kind'])}")
    return "\n".join(lines) + "\n"


@main.command()
@click.argument("inputs", nargs=-1, required=True, type=click.Path())
@click.option("--window-blocks", type=int, default=6000, show_default=True,
              help="Max block gap between a rollback tx and its profit tx.")
@click.option("--sources", default=None,
              help="Comma-separated override of the seed-instruction kinds.")
@click.option("--allow", multiple=True, help="Only process fixtures touching these addresses.")
@click.option("--deny", multiple=True, help="Skip fixtures touching these addresses.")
@click.option("--out", type=click.Path(), default=None, help="Write the report here.")
@click.option("--format", "fmt", type=click.Choice(["json", "summary"]), default="json",
              show_default=True)
def replay(inputs, window_blocks, sources, allow, deny, out, fmt) -> None:
    """Replay recorded transactions from fixtures and flag attack transactions."""
    vulnerable = _parse_kinds(sources)
    items, diagnostics = ingest_suspects(
        list(inputs), allow=_parse_addresses(allow), deny=_parse_addresses(deny)
    )

    # replay each fixture once, in its own transaction order
    traces_by_fixture: dict[str, dict[str, object]] = {}
    failed_fixtures: set[str] = set()
    for item in items:
        key = item.fixture.path
        if key in traces_by_fixture or key in failed_fixtures:
            continue
        engine = ReplayEngine(item.fixture, vulnerable)
        fixture_traces = {}
        try:
            for tx in item.fixture.transactions:
                fixture_traces[tx.id] = engine.replay_transaction(tx)
        except ReplayError as exc:
            failed_fixtures.add(key)
            diagnostics.append({"kind": "replay-error", "file": key, "detail": str(exc)})
            continue
        traces_by_fixture[key] = fixture_traces

    attacks = []
    victim_losses: dict[str, int] = {}
    seen_rollback: set[tuple] = set()
    for item in items:
        fixture_traces = traces_by_fixture.get(item.fixture.path)
        if fixture_traces is None:
            continue
        trace = fixture_traces[item.tx.id]
        found = detect_manipulation(trace, item.caller, item.target, vulnerable)
        reports = [found] if found else []
        rollback_key = (item.fixture.path, item.caller, item.target)
        if rollback_key not in seen_rollback:
            seen_rollback.add(rollback_key)
            reports.extend(
                detect_rollback(
                    list(fixture_traces.values()), item.caller, item.target, window_blocks
                )
            )
        for report in reports:
            victim = address_hex(report.target)
            victim_losses[victim] = victim_losses.get(victim, 0) + report.loss
            attacks.append({
                "kind": report.kind,
                "transactions": list(report.transactions),
                "caller": address_hex(report.caller),
                "target": victim,
                "evidence": [list(e) for e in report.evidence],
                "loss_wei": str(report.loss),
                "fixture": item.fixture.path,
            })

    load_failures = sum(1 for d in diagnostics if d["kind"] == "fixture-error")
    doc = _base_document("replay")
    doc["attacks"] = attacks
    doc["victim_losses_wei"] = {k: str(v) for k, v in sorted(victim_losses.items())}
    doc["diagnostics"] = diagnostics
    doc["summary"] = {
        "work_items": len(items),
        "attacks": len(attacks),
        "failed_fixtures": len(failed_fixtures) + load_failures,
    }
    _write_document(doc, out, fmt, _replay_summary)

    all_loads_failed = load_failures and not items
    all_replays_failed = items and len(failed_fixtures) == len({i.fixture.path for i in items})
    if all_loads_failed or all_replays_failed:
        sys.exit(2)
    sys.exit(1 if attacks else 0)


def _replay_summary(doc: dict) -> str:
    lines = [f"randscan {doc['tool_version']} replay: "
             f"{doc['summary']['work_items']} work item(s), "
             f"{doc['summary']['attacks']} attack(s)"]
    for attack in doc["attacks"]:
        lines.append(
            f"  {attack['kind']}: txs {', '.join(attack['transactions'])} "
            f"caller {attack['caller']} -> target {attack['target']} "
            f"loss {attack['loss_wei']} wei"
        )
    for victim, loss in doc["victim_losses_wei"].items():
        lines.append(f"  victim {victim}: total loss {loss} wei")
    return "\n".join(lines) + "\n"


@main.command()
@click.argument("report_path", type=click.Path(exists=True))
@click.argument("finding_id")
def explain(report_path, finding_id) -> None:
    """Print the taint trace of one finding from a scan report."""
    try:
        doc = json.loads(Path(report_path).read_text())
    except json.JSONDecodeError as exc:
        raise click.ClickException(f"unreadable report: {exc}")
    if doc.get("command") != "scan":
        raise click.ClickException("explain needs a scan report")

    for contract in doc.get("contracts", []):
        for finding in contract.get("findings", []):
            if finding["finding_id"] == finding_id:
                click.echo(f"{finding_id}: {'+'.join(finding['patterns'])} in {contract['id']}")
                click.echo(f"  call site: pc {finding['call_pc']:#x} (run {finding['run_index']})")
                srcs = ", ".join(f"{s['kind']}@{s['pc']:#x}" for s in finding["sources"])
                click.echo(f"  sources: {srcs}")
                for chain in finding["chains"]:
                    hops = " -> ".join(f"{hop['op']}@{hop['pc']:#x}" for hop in chain)
                    click.echo(f"  flow: {hops} -> sink@{finding['call_pc']:#x}")
                trail = " ".join(hex(b) for b in finding["trail"])
                click.echo(f"  witness blocks: {trail}")
                return
    raise click.ClickException(f"finding {finding_id!r} not present in this report")


if __name__ == "__main__":
    main()
