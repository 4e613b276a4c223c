"""Bytecode frontend: hex parsing, disassembly, and basic-block splitting.

Only runtime bytecode is analyzed. Deployment (constructor) code is detected
heuristically and refused so callers extract the runtime section first.
Trailing metadata is decoded like everything else; blocks that are never
jumped to are simply never executed.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

from . import opcodes

_HEX_DIGITS = frozenset(string.hexdigits)


class DecodeError(ValueError):
    """Raised for malformed hex input; carries the offending character offset."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class Instruction:
    pc: int
    opcode: int
    mnemonic: str
    immediate: bytes | None = None
    truncated: bool = False

    @property
    def size(self) -> int:
        return 1 + (len(self.immediate) if self.immediate is not None else 0)

    def encode(self) -> bytes:
        if self.immediate is not None:
            return bytes([self.opcode]) + self.immediate
        return bytes([self.opcode])

    @property
    def push_value(self) -> int | None:
        """Concrete value pushed by PUSH0..PUSH32; truncated immediates are zero-padded."""
        if self.mnemonic == "PUSH0":
            return 0
        if self.immediate is None:
            return None
        width = opcodes.push_width(self.opcode)
        return int.from_bytes(self.immediate.ljust(width, b"\x00"), "big")

    def __str__(self) -> str:
        if self.immediate is not None:
            return f"{self.mnemonic} 0x{self.immediate.hex()}"
        return self.mnemonic


@dataclass(frozen=True)
class Terminator:
    """How a basic block ends.

    kind is one of "jump", "jumpi", "terminal", "fallthrough". For terminal
    blocks, opcode names the halting instruction; it is None when execution
    simply runs off the end of the code (implicit STOP).
    """

    kind: str
    opcode: str | None = None


@dataclass
class BasicBlock:
    id: int  # pc of the first instruction
    instructions: list[Instruction]
    terminator: Terminator
    next_pc: int | None = field(default=None)  # fallthrough target, when one exists

    def __repr__(self) -> str:
        return f"BasicBlock(id={self.id:#x}, n={len(self.instructions)}, term={self.terminator.kind})"


def parse_hex(text: str) -> bytes:
    """Decode hex text (optional 0x prefix, trailing whitespace) into bytes."""
    stripped = text.strip()
    base = text.index(stripped) if stripped else 0
    if stripped[:2].lower() == "0x":
        stripped = stripped[2:]
        base += 2
    for i, ch in enumerate(stripped):
        if ch not in _HEX_DIGITS:
            raise DecodeError(f"invalid hex character {ch!r} at offset {base + i}", base + i)
    if len(stripped) % 2 != 0:
        raise DecodeError(f"odd number of hex digits ({len(stripped)})", base + len(stripped))
    return bytes.fromhex(stripped)


def load_bytecode(data: bytes) -> bytes:
    """Sniff raw file contents: hex text when every byte is hex/whitespace,
    else raw binary. A 0x prefix always claims hex; bad digits after it are an
    error, not binary."""
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError:
        return data
    body = text.strip()
    if body[:2].lower() == "0x":
        return parse_hex(text)
    if body and all(ch in _HEX_DIGITS or ch.isspace() for ch in body):
        return parse_hex(text)
    return data


def decode_bytecode(code: bytes) -> list[Instruction]:
    """Disassemble runtime bytecode into an instruction list.

    Every byte is consumed: unassigned opcodes become INVALID, and a PUSH cut
    off by the end of code keeps whatever immediate bytes exist and is flagged
    truncated. Concatenating the encodings reproduces the input exactly.
    """
    out: list[Instruction] = []
    pc = 0
    end = len(code)
    while pc < end:
        byte = code[pc]
        width = opcodes.push_width(byte)
        if width:
            imm = code[pc + 1 : pc + 1 + width]
            out.append(
                Instruction(pc, byte, opcodes.mnemonic(byte), imm, truncated=len(imm) < width)
            )
            pc += 1 + len(imm)
        else:
            out.append(Instruction(pc, byte, opcodes.mnemonic(byte)))
            pc += 1
    return out


def encode_instructions(instrs: list[Instruction]) -> bytes:
    return b"".join(i.encode() for i in instrs)


def split_basic_blocks(instrs: list[Instruction]) -> list[BasicBlock]:
    """Partition instructions into basic blocks.

    A block ends after JUMP/JUMPI/terminal instructions and before every
    JUMPDEST. The final block, when it ends at end-of-code without an explicit
    halt, gets an implicit terminal (the machine's virtual STOP).
    """
    blocks: list[BasicBlock] = []
    current: list[Instruction] = []

    def close(terminator: Terminator, next_pc: int | None) -> None:
        if current:
            blocks.append(BasicBlock(current[0].pc, list(current), terminator, next_pc))
            current.clear()

    for idx, inst in enumerate(instrs):
        if inst.opcode == opcodes.JUMPDEST and current:
            close(Terminator("fallthrough"), inst.pc)
        current.append(inst)
        following = inst.pc + inst.size
        if inst.opcode == opcodes.JUMP:
            close(Terminator("jump"), None)
        elif inst.opcode == opcodes.JUMPI:
            close(Terminator("jumpi"), following if idx + 1 < len(instrs) else None)
        elif opcodes.is_terminal(inst.opcode):
            close(Terminator("terminal", inst.mnemonic), None)
    close(Terminator("terminal", None), None)
    return blocks


def jumpdest_ids(blocks: list[BasicBlock]) -> frozenset[int]:
    """Block ids that are valid jump targets (blocks starting with JUMPDEST)."""
    return frozenset(
        b.id for b in blocks if b.instructions and b.instructions[0].opcode == opcodes.JUMPDEST
    )


_CALLDATA_OPS = frozenset({"CALLDATALOAD", "CALLDATASIZE", "CALLDATACOPY"})


def looks_like_creation_code(instrs: list[Instruction], scan_limit: int = 256) -> bool:
    """Heuristic for deployment bytecode.

    A constructor prologue copies the runtime section to memory and RETURNs it
    without ever touching calldata; a runtime dispatcher reads calldata within
    its first few instructions. Flag as creation code when CODECOPY..RETURN
    shows up in the prologue before any calldata access.
    """
    saw_codecopy = False
    for inst in instrs[:scan_limit]:
        if inst.mnemonic in _CALLDATA_OPS:
            return False
        if inst.mnemonic == "CODECOPY":
            saw_codecopy = True
        elif inst.mnemonic == "RETURN" and saw_codecopy:
            return True
    return False
