"""256-bit word arithmetic shared by the simulator's constant folding and the replay engine."""

from __future__ import annotations

WORD_BITS = 256
WORD_MOD = 1 << WORD_BITS
WORD_MAX = WORD_MOD - 1
SIGN_BIT = 1 << (WORD_BITS - 1)


def u256(x: int) -> int:
    return x & WORD_MAX


def to_signed(x: int) -> int:
    """Interpret an unsigned 256-bit word as two's-complement."""
    return x - WORD_MOD if x & SIGN_BIT else x


def _sdiv(a: int, b: int) -> int:
    if b == 0:
        return 0
    sa, sb = to_signed(a), to_signed(b)
    q = abs(sa) // abs(sb)
    return u256(-q if (sa < 0) != (sb < 0) else q)


def _smod(a: int, b: int) -> int:
    if b == 0:
        return 0
    sa, sb = to_signed(a), to_signed(b)
    r = abs(sa) % abs(sb)
    return u256(-r if sa < 0 else r)


def _signextend(k: int, x: int) -> int:
    if k >= 31:
        return x
    bit = 8 * k + 7
    mask = (1 << (bit + 1)) - 1
    if x & (1 << bit):
        return u256(x | ~mask)
    return x & mask


def _byte(i: int, x: int) -> int:
    if i >= 32:
        return 0
    return (x >> (8 * (31 - i))) & 0xFF


def _shl(shift: int, v: int) -> int:
    return 0 if shift >= WORD_BITS else u256(v << shift)


def _shr(shift: int, v: int) -> int:
    return 0 if shift >= WORD_BITS else v >> shift


def _sar(shift: int, v: int) -> int:
    sv = to_signed(v)
    if shift >= WORD_BITS:
        return WORD_MAX if sv < 0 else 0
    return u256(sv >> shift)


# Operand order follows the machine: the first argument is the top of the stack.
_FOLDS = {
    "ADD": lambda a, b: u256(a + b),
    "SUB": lambda a, b: u256(a - b),
    "MUL": lambda a, b: u256(a * b),
    "DIV": lambda a, b: 0 if b == 0 else a // b,
    "SDIV": _sdiv,
    "MOD": lambda a, b: 0 if b == 0 else a % b,
    "SMOD": _smod,
    "ADDMOD": lambda a, b, n: 0 if n == 0 else (a + b) % n,
    "MULMOD": lambda a, b, n: 0 if n == 0 else (a * b) % n,
    "EXP": lambda a, b: pow(a, b, WORD_MOD),
    "SIGNEXTEND": _signextend,
    "AND": lambda a, b: a & b,
    "OR": lambda a, b: a | b,
    "XOR": lambda a, b: a ^ b,
    "NOT": lambda a: u256(~a),
    "BYTE": _byte,
    "SHL": _shl,
    "SHR": _shr,
    "SAR": _sar,
    "LT": lambda a, b: int(a < b),
    "GT": lambda a, b: int(a > b),
    "SLT": lambda a, b: int(to_signed(a) < to_signed(b)),
    "SGT": lambda a, b: int(to_signed(a) > to_signed(b)),
    "EQ": lambda a, b: int(a == b),
    "ISZERO": lambda a: int(a == 0),
}

FOLDABLE = frozenset(_FOLDS)


def fold(mnemonic: str, args: list[int]) -> int:
    """Apply the word semantics of a foldable opcode to concrete operands."""
    return _FOLDS[mnemonic](*args)
