"""Simulated machine: depth-first path execution over basic blocks.

Each explored path owns a machine state (operand stack of value instances,
segmented memory, storage log). Paths fork at conditional jumps and are cut
short by resource bounds or by the stack-snapshot filter: a block entered
twice with the same set of on-stack jump targets and the same per-slot taint
profile cannot expose anything new, so its subtree is skipped.

A contract is executed up to max_runs times; storage entries tainted by seed
data survive between runs, so multi-transaction flows (store a seed-derived
flag now, pay out on it later) become visible in a later run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from . import arith, taint
from .decoder import (
    BasicBlock,
    Instruction,
    decode_bytecode,
    jumpdest_ids,
    looks_like_creation_code,
    split_basic_blocks,
)
from .memmodel import MemoryModel
from .stormodel import StorageEntry, StorageModel, retain_tainted, retained_fingerprint
from .taint import SinkRecord, TaintPolicy, VulnerabilityReport
from .values import TaintSource, ValueFactory, ValueInstance

MAX_STACK = 1024

_ZERO_ARG_ENV = frozenset(
    {"ADDRESS", "ORIGIN", "CALLER", "CALLVALUE", "CALLDATASIZE", "CODESIZE",
     "GASPRICE", "RETURNDATASIZE", "CHAINID", "BASEFEE", "PC", "MSIZE", "GAS"}
)
_ZERO_ARG_SOURCES = frozenset({"COINBASE", "DIFFICULTY", "GASLIMIT", "NUMBER", "TIMESTAMP"})
_ONE_ARG_OPAQUE = frozenset({"CALLDATALOAD", "BALANCE", "EXTCODESIZE", "EXTCODEHASH"})


@dataclass(frozen=True)
class EngineConfig:
    max_paths: int = 65536
    max_blocks_per_path: int = 2048
    max_runs: int = 3
    timeout: float = 3600.0
    pattern_mode: str = "any"  # "any" | "all"
    policy: TaintPolicy = TaintPolicy()
    prune: bool = True

    def __post_init__(self) -> None:
        if self.max_paths < 1 or self.max_blocks_per_path < 1 or self.max_runs < 1:
            raise ValueError("engine bounds must be >= 1")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.pattern_mode not in ("any", "all"):
            raise ValueError(f"unknown pattern mode {self.pattern_mode!r}")


@dataclass(frozen=True)
class StackSnapshot:
    block: int
    jump_addresses: frozenset[int]
    taint_profile: tuple[frozenset[TaintSource], ...]


def take_snapshot(
    block_id: int, stack: list[ValueInstance], valid_targets: frozenset[int]
) -> StackSnapshot:
    jump_addresses = frozenset(
        v.concrete for v in stack if v.concrete is not None and v.concrete in valid_targets
    )
    return StackSnapshot(block_id, jump_addresses, tuple(v.taints for v in stack))


def snapshot_equal(s1: StackSnapshot, sh: StackSnapshot) -> bool:
    """Two snapshots of the same block match when their jump-target sets and
    per-slot taint profiles are identical."""
    assert s1.block == sh.block
    return s1.jump_addresses == sh.jump_addresses and s1.taint_profile == sh.taint_profile


class MachineState:
    __slots__ = ("stack", "memory", "storage", "pc", "trail", "jumpi_guards")

    def __init__(self, memory: MemoryModel, storage: StorageModel):
        self.stack: list[ValueInstance] = []
        self.memory = memory
        self.storage = storage
        self.pc = 0
        self.trail: list[int] = []
        self.jumpi_guards: list[tuple[int, ValueInstance]] = []

    def clone(self) -> "MachineState":
        dup = MachineState.__new__(MachineState)
        dup.stack = list(self.stack)
        dup.memory = self.memory.clone()
        dup.storage = self.storage.clone()
        dup.pc = self.pc
        dup.trail = list(self.trail)
        dup.jumpi_guards = list(self.jumpi_guards)
        return dup


class PathAbort(Exception):
    def __init__(self, reason: str, pc: int):
        super().__init__(reason)
        self.reason = reason
        self.pc = pc


@dataclass
class RunResult:
    run_index: int
    sink_records: list[SinkRecord] = field(default_factory=list)
    trails: list[tuple[int, ...]] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    paths: int = 0
    blocks_executed: int = 0
    pruned: int = 0
    incomplete: bool = False
    tainted_entries: list[list[StorageEntry]] = field(default_factory=list)


class Engine:
    """One engine instance analyzes one contract, single-threaded."""

    def __init__(self, blocks: list[BasicBlock], config: EngineConfig, factory: ValueFactory):
        self.blocks = {b.id: b for b in blocks}
        self.config = config
        self.factory = factory
        self.valid_targets = jumpdest_ids(blocks)

    # -- single-instruction semantics ---------------------------------------

    def step(self, state: MachineState, inst: Instruction, run_index: int,
             sinks: list[SinkRecord]) -> None:
        mn = inst.mnemonic
        pc = inst.pc
        make = self.factory.make
        policy = self.config.policy

        if mn.startswith("PUSH"):
            self._push(state, self.factory.const(inst.push_value, pc), pc)
        elif mn.startswith("DUP"):
            n = int(mn[3:])
            self._require(state, n, pc)
            self._push(state, state.stack[-n], pc)
        elif mn.startswith("SWAP"):
            n = int(mn[4:])
            self._require(state, n + 1, pc)
            state.stack[-1], state.stack[-n - 1] = state.stack[-n - 1], state.stack[-1]
        elif mn == "POP":
            self._pop(state, 1, pc)
        elif mn in arith.FOLDABLE:
            pops = 3 if mn in ("ADDMOD", "MULMOD") else (1 if mn in ("NOT", "ISZERO") else 2)
            args = self._pop(state, pops, pc)
            concrete = None
            if all(a.concrete is not None for a in args):
                concrete = arith.fold(mn, [a.concrete for a in args])
            extra: list[TaintSource] = []
            if mn in ("MOD", "SMOD"):
                src = taint.mod_time_source(tuple(args), pc, run_index, policy)
                if src:
                    extra.append(src)
            self._push(state, make(mn, args, concrete=concrete, extra_taints=extra, pc=pc), pc)
        elif mn == "SHA3":
            offset, length = self._pop(state, 2, pc)
            operands = state.memory.read_range(offset, length, pc)
            self._push(state, make("SHA3", operands, pc=pc), pc)
        elif mn in _ZERO_ARG_SOURCES:
            src = taint.mark_source(mn, pc, run_index, policy)
            self._push(state, make(mn, extra_taints=[src] if src else [], pc=pc), pc)
        elif mn == "BLOCKHASH":
            (arg,) = self._pop(state, 1, pc)
            if taint.blockhash_suppressed(policy, arg):
                # a future block's hash is unpredictable no matter how
                # predictable its argument is: sever the flow entirely
                self._push(state, make(mn, pc=pc), pc)
            else:
                src = taint.mark_source(mn, pc, run_index, policy, arg=arg)
                self._push(state, make(mn, (arg,), extra_taints=[src] if src else [], pc=pc), pc)
        elif mn in _ZERO_ARG_ENV:
            self._push(state, make(mn, pc=pc), pc)
        elif mn in _ONE_ARG_OPAQUE:
            (arg,) = self._pop(state, 1, pc)
            self._push(state, make(mn, (arg,), pc=pc), pc)
        elif mn == "MLOAD":
            (addr,) = self._pop(state, 1, pc)
            self._push(state, state.memory.on_mload(addr, pc), pc)
        elif mn in ("MSTORE", "MSTORE8"):
            addr, value = self._pop(state, 2, pc)
            state.memory.on_mstore(addr, value, 8 if mn == "MSTORE8" else 256)
        elif mn == "SLOAD":
            (key,) = self._pop(state, 1, pc)
            self._push(state, state.storage.on_sload(key, pc), pc)
        elif mn == "SSTORE":
            key, value = self._pop(state, 2, pc)
            state.storage.on_sstore(key, value, pc, run_index)
        elif mn == "JUMPDEST":
            pass
        elif mn in ("CALLDATACOPY", "CODECOPY", "RETURNDATACOPY"):
            dest, offset, length = self._pop(state, 3, pc)
            blob = self.factory.unknown(pc=pc, extra_taints=offset.taints | length.taints)
            state.memory.on_bulk_write(dest, length, blob)
        elif mn == "EXTCODECOPY":
            _, dest, offset, length = self._pop(state, 4, pc)
            blob = self.factory.unknown(pc=pc, extra_taints=offset.taints | length.taints)
            state.memory.on_bulk_write(dest, length, blob)
        elif mn.startswith("LOG"):
            self._pop(state, int(mn[3:]) + 2, pc)
        elif mn in ("CREATE", "CREATE2"):
            self._pop(state, 3 if mn == "CREATE" else 4, pc)
            self._push(state, self.factory.unknown(pc=pc), pc)
        elif mn == "CALL":
            _, to, value, _, _, ret_ofs, ret_len = self._pop(state, 7, pc)
            sinks.extend(
                taint.check_sinks_at_call(
                    pc, to, value, state.jumpi_guards, run_index, tuple(state.trail)
                )
            )
            state.memory.on_bulk_write(ret_ofs, ret_len, self.factory.unknown(pc=pc))
            self._push(state, self.factory.unknown(pc=pc), pc)
        elif mn == "CALLCODE":
            args = self._pop(state, 7, pc)
            state.memory.on_bulk_write(args[5], args[6], self.factory.unknown(pc=pc))
            self._push(state, self.factory.unknown(pc=pc), pc)
        elif mn in ("DELEGATECALL", "STATICCALL"):
            args = self._pop(state, 6, pc)
            state.memory.on_bulk_write(args[4], args[5], self.factory.unknown(pc=pc))
            self._push(state, self.factory.unknown(pc=pc), pc)
        elif mn in ("RETURN", "REVERT"):
            self._pop(state, 2, pc)
        elif mn == "STOP":
            pass
        elif mn == "SELFDESTRUCT":
            (beneficiary,) = self._pop(state, 1, pc)
            sinks.extend(taint.selfdestruct_sink(pc, beneficiary, run_index, tuple(state.trail)))
            raise PathAbort("selfdestruct", pc)
        elif mn == "INVALID":
            raise PathAbort("invalid-opcode", pc)
        else:
            raise PathAbort(f"unmodeled-opcode {mn}", pc)
        state.pc = pc + inst.size

    def _require(self, state: MachineState, n: int, pc: int) -> None:
        if len(state.stack) < n:
            raise PathAbort("stack-underflow", pc)

    def _pop(self, state: MachineState, n: int, pc: int) -> list[ValueInstance]:
        self._require(state, n, pc)
        out = [state.stack.pop() for _ in range(n)]
        return out

    def _push(self, state: MachineState, inst: ValueInstance, pc: int) -> None:
        if len(state.stack) >= MAX_STACK:
            raise PathAbort("stack-overflow", pc)
        state.stack.append(inst)

    # -- control flow --------------------------------------------------------

    def resolve_jump(self, state: MachineState, block: BasicBlock,
                     diagnostics: list[dict]) -> list[tuple[int, MachineState]]:
        """Successor (block id, state) pairs for a block's terminator."""
        term = block.terminator
        last_pc = block.instructions[-1].pc if block.instructions else block.id

        if term.kind == "jump":
            (target,) = self._pop(state, 1, last_pc)
            if target.concrete is None:
                diagnostics.append({"kind": "unresolved-jump", "pc": last_pc})
                return []
            if target.concrete not in self.valid_targets:
                raise PathAbort("jump-to-non-jumpdest", last_pc)
            return [(target.concrete, state)]

        if term.kind == "jumpi":
            target, cond = self._pop(state, 2, last_pc)
            state.jumpi_guards.append((last_pc, cond))
            succ: list[tuple[int, MachineState]] = []
            fall = block.next_pc
            if cond.concrete is not None:
                # decided branch: follow only the side that is actually taken
                if cond.concrete != 0:
                    if target.concrete is None:
                        diagnostics.append({"kind": "unresolved-jump", "pc": last_pc})
                        return []
                    if target.concrete not in self.valid_targets:
                        raise PathAbort("jump-to-non-jumpdest", last_pc)
                    return [(target.concrete, state)]
                return [(fall, state)] if fall is not None and fall in self.blocks else []
            if target.concrete is not None and target.concrete in self.valid_targets:
                succ.append((target.concrete, state))
            elif target.concrete is None:
                diagnostics.append({"kind": "unresolved-jump", "pc": last_pc})
            else:
                diagnostics.append({"kind": "jumpi-to-non-jumpdest", "pc": last_pc})
            if fall is not None and fall in self.blocks:
                taken_state = succ[0][1] if succ else None
                fall_state = state.clone() if taken_state is state else state
                succ.append((fall, fall_state))
            return succ

        if term.kind == "fallthrough":
            if block.next_pc is not None and block.next_pc in self.blocks:
                return [(block.next_pc, state)]
            return []

        return []  # terminal

    # -- path exploration ------------------------------------------------------

    def run(self, *, seed: list[StorageEntry] | None = None, run_index: int = 1,
            deadline: float | None = None) -> RunResult:
        result = RunResult(run_index)
        if 0 not in self.blocks:
            return result

        initial = MachineState(
            MemoryModel(self.factory, result.diagnostics),
            StorageModel(self.factory, seed),
        )
        # LIFO worklist: depth-first, taken branch explored before fallthrough
        work: list[tuple[int, MachineState]] = [(0, initial)]
        history: dict[int, set[StackSnapshot]] = {}

        def end_path(state: MachineState) -> None:
            result.paths += 1
            result.trails.append(tuple(state.trail))
            # collect the prefix's tainted writes even on aborted/skipped paths:
            # they did execute, and retention must never under-approximate
            entries = state.storage.tainted_entries()
            if entries:
                result.tainted_entries.append(entries)

        while work:
            if result.paths >= self.config.max_paths:
                result.incomplete = True
                result.diagnostics.append({"kind": "max-paths-reached"})
                break
            if deadline is not None and time.monotonic() > deadline:
                result.incomplete = True
                result.diagnostics.append({"kind": "timeout"})
                break

            block_id, state = work.pop()
            block = self.blocks[block_id]

            if len(state.trail) >= self.config.max_blocks_per_path:
                result.diagnostics.append({"kind": "block-budget-exhausted", "block": block_id})
                end_path(state)
                continue

            snap = take_snapshot(block_id, state.stack, self.valid_targets)
            seen = history.setdefault(block_id, set())
            if self.config.prune and snap in seen:
                result.pruned += 1
                end_path(state)
                continue
            seen.add(snap)

            state.trail.append(block_id)
            result.blocks_executed += 1

            try:
                for inst in block.instructions:
                    if block.terminator.kind in ("jump", "jumpi") and inst is block.instructions[-1]:
                        break  # handled by resolve_jump
                    self.step(state, inst, run_index, result.sink_records)
                successors = self.resolve_jump(state, block, result.diagnostics)
            except PathAbort as abort:
                result.diagnostics.append(
                    {"kind": "path-abort", "reason": abort.reason, "pc": abort.pc}
                )
                end_path(state)
                continue

            if not successors:
                end_path(state)
                continue
            # push fallthrough first so the taken branch pops first
            for succ_id, succ_state in reversed(successors):
                work.append((succ_id, succ_state))

        return result


@dataclass
class ScanOutcome:
    contract_id: str
    report: VulnerabilityReport
    diagnostics: list[dict]
    runs: list[RunResult]
    incomplete: bool
    error: str | None = None
    retained_per_run: list[frozenset] = field(default_factory=list)

    @property
    def paths(self) -> int:
        return sum(r.paths for r in self.runs)

    @property
    def blocks_executed(self) -> int:
        return sum(r.blocks_executed for r in self.runs)

    @property
    def pruned(self) -> int:
        return sum(r.pruned for r in self.runs)


def execute_paths(blocks: list[BasicBlock], config: EngineConfig, *,
                  seed: list[StorageEntry] | None = None, run_index: int = 1,
                  factory: ValueFactory | None = None,
                  deadline: float | None = None) -> RunResult:
    engine = Engine(blocks, config, factory or ValueFactory())
    return engine.run(seed=seed, run_index=run_index, deadline=deadline)


def scan_bytecode(code: bytes, config: EngineConfig, contract_id: str = "") -> ScanOutcome:
    """Full analysis of one runtime bytecode: decode, split, execute with
    reruns seeded by retained tainted storage, assemble the findings."""
    instrs = decode_bytecode(code)
    if looks_like_creation_code(instrs):
        return ScanOutcome(
            contract_id,
            VulnerabilityReport(contract_id, []),
            [{"kind": "creation-bytecode",
              "detail": "input looks like deployment code; extract the runtime "
                        "section (the bytes the constructor RETURNs) and rescan"}],
            [],
            incomplete=False,
            error="creation-bytecode",
        )

    blocks = split_basic_blocks(instrs)
    factory = ValueFactory()
    engine = Engine(blocks, config, factory)
    deadline = time.monotonic() + config.timeout

    runs: list[RunResult] = []
    sinks: list[SinkRecord] = []
    fingerprints: list[frozenset] = []
    seed: list[StorageEntry] = []
    previous_fp: frozenset | None = None
    for run_index in range(1, config.max_runs + 1):
        rr = engine.run(seed=seed or None, run_index=run_index, deadline=deadline)
        runs.append(rr)
        sinks.extend(rr.sink_records)
        retained = retain_tainted(rr.tainted_entries)
        fp = retained_fingerprint(retained)
        fingerprints.append(fp)
        if not retained or fp == previous_fp or rr.incomplete:
            break
        previous_fp = fp
        seed = retained

    report = taint.assemble_report(sinks, config.pattern_mode, contract_id)
    diagnostics = [d for rr in runs for d in rr.diagnostics]
    return ScanOutcome(
        contract_id, report, diagnostics, runs,
        incomplete=any(r.incomplete for r in runs),
        retained_per_run=fingerprints,
    )
