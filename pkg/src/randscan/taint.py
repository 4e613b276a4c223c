"""Taint sources, sink checks, and weak-randomness finding assembly.

Sources are the seven seed-producing instruction kinds (six opcodes plus
MOD_TIME, synthesized when a modulo folds block-timestamp data). Sinks are
value-bearing external calls: a finding fires when seed taint reaches the
transfer amount, the destination address, or any conditional jump guarding
the path to the call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .stormodel import flatten_key
from .values import VULNERABLE_KINDS, TaintSource, ValueInstance

PATTERN_GUARD = "CALLJUMPI"
PATTERN_TO = "CALLToAddress"
PATTERN_VALUE = "CALLValue"
ALL_PATTERNS = (PATTERN_GUARD, PATTERN_TO, PATTERN_VALUE)

_SOURCE_OPCODES = frozenset(
    {"BLOCKHASH", "COINBASE", "DIFFICULTY", "GASLIMIT", "NUMBER", "TIMESTAMP"}
)


@dataclass(frozen=True)
class TaintPolicy:
    vulnerable: frozenset[str] = VULNERABLE_KINDS
    suppress_future_blockhash: bool = False


def mark_source(
    mnemonic: str,
    pc: int,
    run_index: int,
    policy: TaintPolicy,
    arg: ValueInstance | None = None,
) -> TaintSource | None:
    """Source for a seed-producing opcode, or None when not one (or filtered)."""
    if mnemonic not in _SOURCE_OPCODES or mnemonic not in policy.vulnerable:
        return None
    if arg is not None and blockhash_suppressed(policy, arg):
        return None
    return TaintSource(mnemonic, pc, run_index)


def blockhash_suppressed(policy: TaintPolicy, arg: ValueInstance) -> bool:
    return policy.suppress_future_blockhash and _is_future_block_argument(arg)


def mod_time_source(
    operands: tuple[ValueInstance, ...], pc: int, run_index: int, policy: TaintPolicy
) -> TaintSource | None:
    """MOD/SMOD over block-timestamp data is itself a seed kind (MOD_TIME)."""
    if "MOD_TIME" not in policy.vulnerable:
        return None
    from .values import dag_contains_opcode

    for op in operands:
        if any(t.kind == "TIMESTAMP" for t in op.taints) or dag_contains_opcode(op, "TIMESTAMP"):
            return TaintSource("MOD_TIME", pc, run_index)
    return None


def _is_future_block_argument(arg: ValueInstance) -> bool:
    # structurally NUMBER + positive constant: a hash of a not-yet-mined block
    poly = flatten_key(arg)
    return len(poly.opaque) == 1 and poly.opaque[0] == ("NUMBER",) and 0 < poly.const < 1 << 255


@dataclass
class SinkRecord:
    kind: str  # CallValue | CallToAddress | GuardJumpI | SelfDestructTo
    sink_pc: int
    call_pc: int
    taints: frozenset[TaintSource]
    run_index: int
    trail: tuple[int, ...]
    guard_trail: tuple[int, ...] = ()
    sink_instance: ValueInstance | None = field(default=None, repr=False)


def check_sinks_at_call(
    call_pc: int,
    to: ValueInstance,
    value: ValueInstance,
    jumpi_guards: list[tuple[int, ValueInstance]],
    run_index: int,
    trail: tuple[int, ...],
) -> list[SinkRecord]:
    """Sink checks for one value-bearing CALL."""
    records: list[SinkRecord] = []
    guard_pcs = tuple(pc for pc, _ in jumpi_guards)
    if value.taints:
        records.append(
            SinkRecord("CallValue", call_pc, call_pc, value.taints, run_index, trail,
                       sink_instance=value)
        )
    if to.taints:
        records.append(
            SinkRecord("CallToAddress", call_pc, call_pc, to.taints, run_index, trail,
                       sink_instance=to)
        )
    for guard_pc, cond in jumpi_guards:
        if cond.taints:
            records.append(
                SinkRecord("GuardJumpI", guard_pc, call_pc, cond.taints, run_index, trail,
                           guard_trail=guard_pcs, sink_instance=cond)
            )
    return records


def selfdestruct_sink(
    pc: int, beneficiary: ValueInstance, run_index: int, trail: tuple[int, ...]
) -> list[SinkRecord]:
    if beneficiary.taints:
        return [
            SinkRecord("SelfDestructTo", pc, pc, beneficiary.taints, run_index, trail,
                       sink_instance=beneficiary)
        ]
    return []


_RECORD_PATTERN = {
    "CallValue": PATTERN_VALUE,
    "CallToAddress": PATTERN_TO,
    "GuardJumpI": PATTERN_GUARD,
    "SelfDestructTo": PATTERN_TO,
}


@dataclass
class Finding:
    patterns: tuple[str, ...]
    call_pc: int
    sources: tuple[TaintSource, ...]
    run_index: int
    trail: tuple[int, ...]
    extended: bool  #  metadata: sink was SELFDESTRUCT, not CALL
    chains: list[list[tuple[int, str]]]


@dataclass
class VulnerabilityReport:
    contract_id: str
    findings: list[Finding]


def assemble_report(
    sink_records: list[SinkRecord], pattern_mode: str, contract_id: str = ""
) -> VulnerabilityReport:
    """Group sink records per call site and apply the pattern mode.

    "any" reports a call site when at least one pattern matched; "all"
    requires the guard, address, and amount patterns simultaneously.
    """
    by_call: dict[int, list[SinkRecord]] = {}
    for rec in sink_records:
        by_call.setdefault(rec.call_pc, []).append(rec)

    findings: list[Finding] = []
    for call_pc in sorted(by_call):
        records = by_call[call_pc]
        patterns = sorted({_RECORD_PATTERN[r.kind] for r in records})
        if pattern_mode == "all" and set(patterns) != set(ALL_PATTERNS):
            continue
        sources = sorted(
            frozenset().union(*(r.taints for r in records)), key=TaintSource.sort_key
        )
        first = min(records, key=lambda r: (r.run_index, len(r.trail)))
        extended = all(r.kind == "SelfDestructTo" for r in records)
        chains = _chains_for(records, sources)
        findings.append(
            Finding(tuple(patterns), call_pc, tuple(sources), first.run_index,
                    first.trail, extended, chains)
        )
    return VulnerabilityReport(contract_id, findings)


def _chains_for(records: list[SinkRecord], sources: list[TaintSource]) -> list[list[tuple[int, str]]]:
    chains = []
    for source in sources:
        for rec in records:
            if source in rec.taints and rec.sink_instance is not None:
                chain = witness_chain(rec.sink_instance, source)
                if chain:
                    chains.append(chain)
                    break
    return chains


def witness_chain(
    sink: ValueInstance, source: TaintSource, limit: int = 64
) -> list[tuple[int, str]]:
    """(pc, opcode) hops from where a source entered the dataflow to the sink."""
    path: list[ValueInstance] = []

    def descend(node: ValueInstance, depth: int) -> bool:
        if source not in node.taints or depth > limit:
            return False
        path.append(node)
        for op in node.operands:
            if source in op.taints and descend(op, depth + 1):
                return True
        if all(source not in op.taints for op in node.operands):
            return True  # this node introduced the source
        path.pop()
        return False

    if not descend(sink, 0):
        return []
    return [(n.pc, n.opcode) for n in reversed(path)]
