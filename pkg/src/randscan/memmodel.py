"""Alias analysis for machine memory via segmentation.

Solidity allocates memory monotonically from the free-memory pointer kept at
cell 0x40, so every compiler-generated address is either a small concrete
scratch address or "current pointer + constant offset". The model exploits
that: each update of the pointer cell opens a fresh segment, writes land in
the segment their address is anchored to, and a read returns every write of
its segment (segment-level precision, not byte-level).

Concrete addresses get finer treatment: they map to fixed 32-byte cells, which
makes straight-line concrete code behave like a byte array would, modulo
within-cell over-approximation. Addresses that are neither concrete nor
pointer-anchored fall into a single wildcard segment.
"""

from __future__ import annotations

from dataclasses import dataclass

from .values import ValueFactory, ValueInstance

FMP_CELL = 0x40
CELL = 32

# sanity cap for concrete bulk copies; larger ranges degrade to the wildcard
_MAX_RANGE_CELLS = 64

SegKey = tuple


@dataclass(frozen=True)
class AddressForm:
    """Classified address: base is "absolute", "fmp", or "opaque"."""

    base: str
    addr: int | None = None  # absolute byte address
    seg_id: int | None = None  # anchor segment for fmp addresses
    delta: int = 0


@dataclass
class MemWrite:
    delta: int | None  # concrete byte address/offset when known
    width: int  # bits: 8, 256, or 0 for bulk/unknown extents
    value: ValueInstance
    seq: int


class MemoryModel:
    def __init__(self, factory: ValueFactory, diagnostics: list | None = None):
        self.factory = factory
        self.diagnostics = diagnostics if diagnostics is not None else []
        self.segments: dict[SegKey, list[MemWrite]] = {}
        self.fmp_seg = 0  # segment anchored at the current free-memory pointer
        self._next_seg = 1
        self._fmp_loads: dict[int, int] = {}  # instance id -> segment at load time
        self._seq = 0

    def clone(self) -> "MemoryModel":
        dup = MemoryModel.__new__(MemoryModel)
        dup.factory = self.factory
        dup.diagnostics = self.diagnostics
        dup.segments = {k: list(v) for k, v in self.segments.items()}
        dup.fmp_seg = self.fmp_seg
        dup._next_seg = self._next_seg
        dup._fmp_loads = dict(self._fmp_loads)
        dup._seq = self._seq
        return dup

    # -- address classification -------------------------------------------

    def classify_address(self, addr: ValueInstance) -> AddressForm:
        if addr.concrete is not None:
            return AddressForm("absolute", addr=addr.concrete)
        consts, others = _flatten_add(addr)
        if len(others) == 1 and others[0].id in self._fmp_loads:
            seg = self._fmp_loads[others[0].id]
            return AddressForm("fmp", seg_id=seg, delta=consts % (1 << 256))
        if not others:
            return AddressForm("absolute", addr=consts % (1 << 256))
        return AddressForm("opaque")

    # -- writes -------------------------------------------------------------

    def on_mstore(self, addr: ValueInstance, value: ValueInstance, width: int = 256) -> None:
        form = self.classify_address(addr)
        if form.base == "absolute" and form.addr == FMP_CELL and width == 256:
            self.fmp_seg = self._next_seg
            self._next_seg += 1
            # remember the pointer value so later loads of the cell resolve to it
            self._record(("cell", FMP_CELL), FMP_CELL, width, value)
            return
        if form.base == "absolute":
            for cell in _covered_cells(form.addr, width // 8):
                self._record(("cell", cell), form.addr, width, value)
        elif form.base == "fmp":
            self._record(("fmp", form.seg_id), form.delta, width, value)
        else:
            self._record(("wild",), None, width, value)

    def on_bulk_write(self, addr: ValueInstance, length: ValueInstance, value: ValueInstance) -> None:
        """A copy of unmodeled bytes (calldata/code/returndata) into memory."""
        form = self.classify_address(addr)
        if form.base == "absolute" and length.concrete is not None:
            cells = _range_cells(form.addr, length.concrete)
            if cells is not None:
                for cell in cells:
                    self._record(("cell", cell), None, 0, value)
                return
        if form.base == "fmp":
            self._record(("fmp", form.seg_id), None, 0, value)
        else:
            self._record(("wild",), None, 0, value)

    def _record(self, key: SegKey, delta: int | None, width: int, value: ValueInstance) -> None:
        self.segments.setdefault(key, []).append(MemWrite(delta, width, value, self._seq))
        self._seq += 1

    # -- reads ----------------------------------------------------------------

    def on_mload(self, addr: ValueInstance, pc: int) -> ValueInstance:
        form = self.classify_address(addr)
        if form.base == "absolute" and form.addr == FMP_CELL:
            return self._load_fmp_cell(pc)
        operands = self._resolve_read(form, 256, pc)
        if not operands:
            self.diagnostics.append(
                {"kind": "mload-unwritten", "pc": pc, "detail": _form_str(form)}
            )
            return self.factory.unknown(pc=pc)
        return self.factory.make("MLOAD", operands, pc=pc)

    def _load_fmp_cell(self, pc: int) -> ValueInstance:
        writes = _effective(self.segments.get(("cell", FMP_CELL), []))
        if writes:
            stored = writes[-1].value
            inst = self.factory.make("MLOAD", (stored,), concrete=stored.concrete, pc=pc)
        else:
            inst = self.factory.make("MLOAD", (), pc=pc)
        self._fmp_loads[inst.id] = self.fmp_seg
        return inst

    def read_range(self, addr: ValueInstance, length: ValueInstance, pc: int) -> list[ValueInstance]:
        """Operand instances covering [addr, addr+length); used for SHA3 and
        other consumers of a memory span."""
        form = self.classify_address(addr)
        if length.concrete == 0:
            return []
        if form.base == "absolute":
            if length.concrete is not None:
                cells = _range_cells(form.addr, length.concrete)
            else:
                # unknown extent: everything recorded at or beyond the base
                cells = sorted(
                    key[1] for key in self.segments
                    if key[0] == "cell" and key[1] >= (form.addr // CELL) * CELL
                )
            if cells is not None:
                out: list[MemWrite] = []
                for cell in cells:
                    out.extend(_effective(self.segments.get(("cell", cell), [])))
                out.sort(key=lambda w: (w.delta if w.delta is not None else -1, w.seq))
                return _dedup([w.value for w in out])
        return [w.value for w in self._read_segment_writes(form)]

    def _resolve_read(self, form: AddressForm, width_bits: int, pc: int) -> list[ValueInstance]:
        if form.base == "absolute":
            cells = _covered_cells(form.addr, width_bits // 8)
            populated = [c for c in cells if self.segments.get(("cell", c))]
            if len(populated) > 1:
                self.diagnostics.append({"kind": "mload-straddle", "pc": pc, "cells": populated})
            writes: list[MemWrite] = []
            for cell in cells:
                writes.extend(_effective(self.segments.get(("cell", cell), [])))
            writes.sort(key=lambda w: (w.delta if w.delta is not None else -1, w.seq))
            return _dedup([w.value for w in writes])
        return _dedup([w.value for w in self._read_segment_writes(form)])

    def _read_segment_writes(self, form: AddressForm) -> list[MemWrite]:
        if form.base == "fmp":
            return _effective(self.segments.get(("fmp", form.seg_id), []))
        # opaque: anything in the wildcard plus the live pointer segment
        writes = _effective(self.segments.get(("wild",), []))
        writes += _effective(self.segments.get(("fmp", self.fmp_seg), []))
        writes.sort(key=lambda w: w.seq)
        return writes


def _flatten_add(inst: ValueInstance) -> tuple[int, list[ValueInstance]]:
    """Split an ADD tree into (sum of concrete parts, non-concrete parts)."""
    consts = 0
    others: list[ValueInstance] = []
    stack = [inst]
    while stack:
        node = stack.pop()
        if node.concrete is not None:
            consts += node.concrete
        elif node.opcode == "ADD":
            stack.extend(node.operands)
        else:
            others.append(node)
    return consts, others


def _covered_cells(addr: int, width_bytes: int) -> list[int]:
    if width_bytes <= 0:
        width_bytes = 1
    first = (addr // CELL) * CELL
    last = ((addr + width_bytes - 1) // CELL) * CELL
    return [first] if first == last else [first, last]


def _range_cells(addr: int, length: int) -> list[int] | None:
    if length <= 0:
        return []
    n = (addr + length - 1) // CELL - addr // CELL + 1
    if n > _MAX_RANGE_CELLS:
        return None
    start = (addr // CELL) * CELL
    return [start + i * CELL for i in range(n)]


def _effective(writes: list[MemWrite]) -> list[MemWrite]:
    """Later writes at the same concrete spot shadow earlier ones; writes with
    unknown placement all stay live."""
    by_spot: dict[tuple[int, int], int] = {}
    out: list[MemWrite] = []
    for w in writes:
        if w.delta is not None:
            spot = (w.delta, w.width)
            if spot in by_spot:
                out[by_spot[spot]] = w
                continue
            by_spot[spot] = len(out)
        out.append(w)
    return out


def _dedup(values: list[ValueInstance]) -> list[ValueInstance]:
    seen: set[int] = set()
    out = []
    for v in values:
        if v.id not in seen:
            seen.add(v.id)
            out.append(v)
    return out


def _form_str(form: AddressForm) -> str:
    if form.base == "absolute":
        return f"absolute {form.addr:#x}"
    if form.base == "fmp":
        return f"fmp seg {form.seg_id} delta {form.delta:#x}"
    return "opaque"
