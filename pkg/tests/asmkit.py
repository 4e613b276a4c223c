"""Tiny two-pass EVM assembler for building bytecode fixtures in tests.

Label references always assemble as PUSH2 so instruction sizes are fixed
before label addresses are resolved.
"""

from __future__ import annotations

from randscan.opcodes import MNEMONIC_TO_BYTE, push_width


class Label:
    _count = 0

    def __init__(self, name: str | None = None):
        if name is None:
            Label._count += 1
            name = f"L{Label._count}"
        self.name = name

    def __repr__(self) -> str:
        return f"Label({self.name})"


class Asm:
    def __init__(self) -> None:
        self._items: list[tuple] = []

    def op(self, mnemonic: str, *args) -> "Asm":
        mnemonic = mnemonic.upper()
        if args and isinstance(args[0], Label):
            assert mnemonic == "PUSH2", "labels must be pushed via PUSH2"
            self._items.append(("push_label", args[0]))
            return self
        byte = MNEMONIC_TO_BYTE[mnemonic]
        width = push_width(byte)
        if width:
            (value,) = args
            self._items.append(("op", byte, value.to_bytes(width, "big")))
        else:
            assert not args, f"{mnemonic} takes no immediate"
            self._items.append(("op", byte, None))
        return self

    def push(self, value: int) -> "Asm":
        """PUSH with the smallest width that fits the value."""
        width = max(1, (value.bit_length() + 7) // 8)
        return self.op(f"PUSH{width}", value)

    def push_label(self, label: Label) -> "Asm":
        self._items.append(("push_label", label))
        return self

    def label(self, label: Label | None = None) -> Label:
        """Place a JUMPDEST here and return its label."""
        label = label or Label()
        self._items.append(("label", label))
        return label

    def mark(self, label: Label | None = None) -> Label:
        """Record the current position without emitting anything."""
        label = label or Label()
        self._items.append(("mark", label))
        return label

    def raw(self, data: bytes) -> "Asm":
        self._items.append(("raw", data))
        return self

    def pc_of(self, label: Label) -> int:
        return self._layout()[label.name]

    def _layout(self) -> dict[str, int]:
        addrs: dict[str, int] = {}
        pc = 0
        for item in self._items:
            kind = item[0]
            if kind == "op":
                pc += 1 + (len(item[2]) if item[2] is not None else 0)
            elif kind == "push_label":
                pc += 3
            elif kind == "label":
                addrs[item[1].name] = pc
                pc += 1  # JUMPDEST
            elif kind == "mark":
                addrs[item[1].name] = pc
            elif kind == "raw":
                pc += len(item[1])
        return addrs

    def assemble(self) -> bytes:
        addrs = self._layout()
        out = bytearray()
        for item in self._items:
            kind = item[0]
            if kind == "op":
                out.append(item[1])
                if item[2] is not None:
                    out += item[2]
            elif kind == "push_label":
                out.append(MNEMONIC_TO_BYTE["PUSH2"])
                out += addrs[item[1].name].to_bytes(2, "big")
            elif kind == "label":
                out.append(MNEMONIC_TO_BYTE["JUMPDEST"])
            elif kind == "mark":
                pass
            elif kind == "raw":
                out += item[1]
        return bytes(out)


def asm(*mnemonics: str) -> bytes:
    """Assemble simple label-free listings: "PUSH1 0x05", "JUMP", ..."""
    a = Asm()
    for entry in mnemonics:
        parts = entry.split()
        if len(parts) == 2:
            a.op(parts[0], int(parts[1], 0))
        else:
            a.op(parts[0])
    return a.assemble()
