"""Symbolic values produced by the simulated machine.

Every executed instruction yields one ValueInstance: a node in a DAG linking
the result to the instances that produced its operands, an optional concrete
word when the result is computable offline, and the accumulated taint set.
Taint propagation is by construction: an instance always carries at least the
union of its operands' taints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

# The instruction kinds treated as randomness seeds.
VULNERABLE_KINDS = frozenset(
    {"BLOCKHASH", "COINBASE", "DIFFICULTY", "GASLIMIT", "MOD_TIME", "NUMBER", "TIMESTAMP"}
)

# Pushed constants and unmodeled external data use these pseudo-mnemonics.
CONST = "CONST"
UNKNOWN = "UNKNOWN"

# Results that may change between evaluations even for identical operand
# trees; storage-key comparison must never call two of these equal.
RUN_VARYING = frozenset({"PC", "MSIZE", "GAS"})


@dataclass(frozen=True)
class TaintSource:
    kind: str
    origin_pc: int
    run_index: int = 1

    def sort_key(self) -> tuple[str, int, int]:
        return (self.kind, self.origin_pc, self.run_index)


class ValueInstance:
    """One execution result. Identity semantics: two instances are distinct
    analysis events even when structurally alike."""

    __slots__ = ("id", "opcode", "operands", "concrete", "taints", "pc")

    def __init__(
        self,
        id: int,
        opcode: str,
        operands: tuple["ValueInstance", ...],
        concrete: int | None,
        taints: frozenset[TaintSource],
        pc: int,
    ):
        self.id = id
        self.opcode = opcode
        self.operands = operands
        self.concrete = concrete
        self.taints = taints
        self.pc = pc

    def __repr__(self) -> str:
        parts = [f"#{self.id}", self.opcode]
        if self.concrete is not None:
            parts.append(hex(self.concrete))
        if self.taints:
            parts.append("tainted{" + ",".join(sorted(t.kind for t in self.taints)) + "}")
        return "<" + " ".join(parts) + ">"

    @property
    def is_tainted(self) -> bool:
        return bool(self.taints)


class ValueFactory:
    """Mints instances with run-unique ids and enforces taint monotonicity."""

    def __init__(self) -> None:
        self._next = 0

    def make(
        self,
        opcode: str,
        operands: Iterable[ValueInstance] = (),
        *,
        concrete: int | None = None,
        extra_taints: Iterable[TaintSource] = (),
        pc: int = -1,
    ) -> ValueInstance:
        ops = tuple(operands)
        taints = frozenset(extra_taints).union(*(o.taints for o in ops)) if ops else frozenset(extra_taints)
        inst = ValueInstance(self._next, opcode, ops, concrete, taints, pc)
        self._next += 1
        return inst

    def const(self, value: int, pc: int = -1) -> ValueInstance:
        return self.make(CONST, concrete=value, pc=pc)

    def unknown(self, pc: int = -1, extra_taints: Iterable[TaintSource] = ()) -> ValueInstance:
        return self.make(UNKNOWN, extra_taints=extra_taints, pc=pc)


# Opcodes whose results are resolved indirections: when they carry exactly one
# operand, the result is that operand's value, so normalization sees through.
_TRANSPARENT_SINGLE = frozenset({"MLOAD", "SLOAD"})

# Opcodes compared by instance identity rather than structure (their value is
# not a function of the recorded operands alone).
_IDENTITY_OPAQUE = frozenset({UNKNOWN}) | RUN_VARYING

Tree = tuple


def normalize(inst: ValueInstance) -> Tree:
    """Canonical structural form of an instance tree.

    Equal trees mean "computes the same word whenever the leaves are stable".
    Concrete results collapse to their value; unknowns and run-varying results
    keep instance identity so distinct occurrences never look equal.
    """
    if inst.concrete is not None:
        return (CONST, inst.concrete)
    if inst.opcode in _IDENTITY_OPAQUE:
        return (inst.opcode, inst.id)
    if inst.opcode in _TRANSPARENT_SINGLE:
        if len(inst.operands) == 1:
            return normalize(inst.operands[0])
        return (inst.opcode, inst.id)
    return (inst.opcode,) + tuple(normalize(o) for o in inst.operands)


def tree_sort_key(tree: Tree) -> str:
    return repr(tree)


def tree_contains(tree: Tree, mnemonics: frozenset[str]) -> bool:
    if tree[0] in mnemonics:
        return True
    for part in tree[1:]:
        if isinstance(part, tuple) and tree_contains(part, mnemonics):
            return True
    return False


def dag_contains_opcode(inst: ValueInstance, mnemonic: str, limit: int = 4096) -> bool:
    """Walk the operand DAG looking for a producing opcode."""
    seen: set[int] = set()
    stack = [inst]
    while stack and len(seen) < limit:
        node = stack.pop()
        if node.id in seen:
            continue
        seen.add(node.id)
        if node.opcode == mnemonic:
            return True
        stack.extend(node.operands)
    return False
