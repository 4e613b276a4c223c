"""Storage dependency analysis via key polynomials.

Compiler-generated storage keys are sums: a hash term (mapping/array slot
derivation) plus constant offsets. Flattening the key's instance tree over
ADD into {summed constant, opaque terms} lets two keys be compared
structurally: identical multisets mean the same slot, differing constants or
provably distinct hash terms mean different slots, anything else stays
undecided and is handled by over-approximating reads.

Entries tainted by randomness seeds survive into the next simulated run of
the contract, which is what lets a value stored in one transaction influence
a transfer in a later one.
"""

from __future__ import annotations

from dataclasses import dataclass

from .arith import WORD_MOD
from .values import (
    RUN_VARYING,
    UNKNOWN,
    ValueFactory,
    ValueInstance,
    normalize,
    tree_contains,
    tree_sort_key,
)

EQUAL = "equal"
DIFFERENT = "different"
INDETERMINATE = "unknown"

_UNSTABLE = frozenset({UNKNOWN}) | RUN_VARYING


@dataclass(frozen=True)
class KeyPolynomial:
    const: int
    opaque: tuple  # normalized term trees, canonically sorted

    def canonical(self) -> tuple:
        return (self.const, self.opaque)

    @property
    def has_run_varying(self) -> bool:
        return any(tree_contains(t, RUN_VARYING) for t in self.opaque)

    def __str__(self) -> str:
        parts = [repr(t) for t in self.opaque]
        if self.const or not parts:
            parts.append(hex(self.const))
        return " + ".join(parts)


@dataclass
class StorageEntry:
    key: KeyPolynomial
    value: ValueInstance
    write_pc: int
    run_index: int

    def descriptor(self) -> tuple:
        """Run-independent identity used for dedup and fixpoint detection."""
        taints = tuple(sorted((t.kind, t.origin_pc) for t in self.value.taints))
        return (self.key.canonical(), self.value.opcode, self.value.concrete, taints)


def flatten_key(key: ValueInstance) -> KeyPolynomial:
    """Flatten ADD chains into a summed constant plus sorted opaque terms."""
    const = 0
    opaque: list = []
    stack = [key]
    while stack:
        node = stack.pop()
        if node.concrete is not None:
            const = (const + node.concrete) % WORD_MOD
        elif node.opcode == "ADD":
            stack.extend(node.operands)
        else:
            opaque.append(normalize(node))
    opaque.sort(key=tree_sort_key)
    return KeyPolynomial(const, tuple(opaque))


def _grounded_sha3(tree: tuple) -> bool:
    """A hash term whose operand tree is stable across evaluations, so
    structural difference implies value difference."""
    return tree[0] == "SHA3" and not tree_contains(tree, _UNSTABLE)


def keys_equal(p1: KeyPolynomial, p2: KeyPolynomial) -> str:
    """Three-way structural key comparison: equal / different / unknown."""
    if p1.canonical() == p2.canonical():
        return INDETERMINATE if p1.has_run_varying else EQUAL

    left, right = _residual(p1.opaque, p2.opaque)
    if not left and not right:
        # identical opaque parts: the constants (which differ) decide
        return INDETERMINATE if p1.has_run_varying else DIFFERENT
    if all(_grounded_sha3(t) for t in left) and all(_grounded_sha3(t) for t in right):
        # hash terms are treated as injective over their operand trees, so
        # disjoint residual hash terms make the sums differ
        return DIFFERENT
    return INDETERMINATE


def _residual(a: tuple, b: tuple) -> tuple[list, list]:
    """Remove the common multiset of terms; return what is left on each side."""
    remaining = list(b)
    left = []
    for t in a:
        if t in remaining:
            remaining.remove(t)
        else:
            left.append(t)
    return left, remaining


class StorageModel:
    def __init__(self, factory: ValueFactory, seed: list[StorageEntry] | None = None):
        self.factory = factory
        self.entries: list[StorageEntry] = list(seed) if seed else []

    def clone(self) -> "StorageModel":
        dup = StorageModel.__new__(StorageModel)
        dup.factory = self.factory
        dup.entries = list(self.entries)
        return dup

    def on_sstore(self, key: ValueInstance, value: ValueInstance, pc: int, run_index: int) -> None:
        self.entries.append(StorageEntry(flatten_key(key), value, pc, run_index))

    def on_sload(self, key: ValueInstance, pc: int) -> ValueInstance:
        """Resolve a load against the write log, newest first.

        The newest structurally equal write supplies the value. Writes whose
        keys cannot be told apart from ours may alias, so their taints are
        folded in as well; when only such writes exist the result is an
        opaque union. A provable miss reads as untouched storage.
        """
        poly = flatten_key(key)
        maybe: list[StorageEntry] = []
        for entry in reversed(self.entries):
            verdict = keys_equal(poly, entry.key)
            if verdict == EQUAL:
                if maybe:
                    extra = frozenset().union(*(e.value.taints for e in maybe))
                    return self.factory.make(
                        "SLOAD", (entry.value,), concrete=entry.value.concrete,
                        extra_taints=extra, pc=pc,
                    )
                return self.factory.make(
                    "SLOAD", (entry.value,), concrete=entry.value.concrete, pc=pc
                )
            if verdict == INDETERMINATE:
                maybe.append(entry)
        if maybe:
            return self.factory.make("SLOAD", tuple(e.value for e in maybe), pc=pc)
        return self.factory.unknown(pc=pc)

    def tainted_entries(self) -> list[StorageEntry]:
        return [e for e in self.entries if e.value.taints]


def retain_tainted(entry_lists: list[list[StorageEntry]]) -> list[StorageEntry]:
    """Union tainted entries across all explored paths, deduplicated in
    first-seen order. This is the storage seed for the next run."""
    seen: set[tuple] = set()
    out: list[StorageEntry] = []
    for entries in entry_lists:
        for entry in entries:
            if not entry.value.taints:
                continue
            desc = entry.descriptor()
            if desc not in seen:
                seen.add(desc)
                out.append(entry)
    return out


def retained_fingerprint(entries: list[StorageEntry]) -> frozenset:
    return frozenset(e.descriptor() for e in entries)
