"""Hand-assembled bytecode corpus: known-vulnerable and known-safe contracts.

Each fixture records what a correct scan must conclude about it, including
the call site and the seed kinds, so classification tests have exact
expectations instead of just a boolean.
"""

from __future__ import annotations

from dataclasses import dataclass

from asmkit import Asm, Label


@dataclass
class CorpusFixture:
    name: str
    code: bytes
    vulnerable: bool
    patterns: frozenset[str] = frozenset()
    source_kinds: frozenset[str] = frozenset()
    call_pc: int | None = None
    found_at_run: int = 1
    needs_suppress_flag: bool = False  # safe only when future-blockhash suppression is on
    has_loop: bool = False


def _transfer_tail(a: Asm, value_ops=None, to_ops=None) -> None:
    """retLen retOfs inLen inOfs value to gas CALL POP STOP"""
    a.push(0).push(0).push(0).push(0)
    if value_ops:
        value_ops(a)
    else:
        a.push(1)
    if to_ops:
        to_ops(a)
    else:
        a.op("CALLER")
    a.op("GAS")
    a.op("CALL").op("POP").op("STOP")


def _guarded_transfer(random_ops, value_ops=None, to_ops=None) -> tuple[bytes, int]:
    """Contract: if calldata[0] == <random>, transfer. Returns (code, call pc)."""
    a = Asm()
    win = Label()
    a.push(0).op("CALLDATALOAD")
    random_ops(a)
    a.op("EQ")
    a.push_label(win).op("JUMPI")
    a.op("STOP")
    a.label(win)
    call_marker = Label()
    _transfer_tail(a, value_ops, to_ops)
    code = a.assemble()
    return code, _find_call_pc(code)


def _find_call_pc(code: bytes) -> int:
    from randscan.decoder import decode_bytecode

    pcs = [i.pc for i in decode_bytecode(code) if i.mnemonic == "CALL"]
    assert len(pcs) == 1, "corpus helper expects exactly one CALL"
    return pcs[0]


def _vuln_guard(name: str, random_ops, kinds: set[str]) -> CorpusFixture:
    code, call_pc = _guarded_transfer(random_ops)
    return CorpusFixture(
        name, code, True,
        patterns=frozenset({"CALLJUMPI"}),
        source_kinds=frozenset(kinds),
        call_pc=call_pc,
    )


def vulnerable_fixtures() -> list[CorpusFixture]:
    out: list[CorpusFixture] = []

    out.append(_vuln_guard(
        "guard_timestamp_mod",
        lambda a: a.push(10).op("TIMESTAMP").op("MOD"),
        {"TIMESTAMP", "MOD_TIME"},
    ))
    out.append(_vuln_guard("guard_number", lambda a: a.op("NUMBER"), {"NUMBER"}))
    out.append(_vuln_guard("guard_difficulty", lambda a: a.op("DIFFICULTY"), {"DIFFICULTY"}))
    out.append(_vuln_guard("guard_gaslimit", lambda a: a.op("GASLIMIT"), {"GASLIMIT"}))
    out.append(_vuln_guard("guard_coinbase", lambda a: a.op("COINBASE"), {"COINBASE"}))
    out.append(_vuln_guard(
        "guard_prev_blockhash",
        lambda a: a.push(1).op("NUMBER").op("SUB").op("BLOCKHASH"),
        {"BLOCKHASH", "NUMBER"},
    ))
    out.append(_vuln_guard("guard_timestamp_raw", lambda a: a.op("TIMESTAMP"), {"TIMESTAMP"}))

    # seed data decides the transfer amount
    a = Asm()
    a.push(0).push(0).push(0).push(0)
    a.push(100).op("TIMESTAMP").op("MOD")  # value = ts % 100
    a.op("CALLER").op("GAS").op("CALL").op("POP").op("STOP")
    code = a.assemble()
    out.append(CorpusFixture(
        "value_from_random", code, True,
        patterns=frozenset({"CALLValue"}),
        source_kinds=frozenset({"TIMESTAMP", "MOD_TIME"}),
        call_pc=_find_call_pc(code),
    ))

    # seed data decides the destination address
    a = Asm()
    a.push(0).push(0).push(0).push(0)
    a.push(1)  # value
    a.push(1).op("NUMBER").op("SUB").op("BLOCKHASH")
    a.op("PUSH20", (1 << 160) - 1).op("AND")  # to = hash & address mask
    a.op("GAS").op("CALL").op("POP").op("STOP")
    code = a.assemble()
    out.append(CorpusFixture(
        "to_from_random", code, True,
        patterns=frozenset({"CALLToAddress"}),
        source_kinds=frozenset({"BLOCKHASH", "NUMBER"}),
        call_pc=_find_call_pc(code),
    ))

    # cross-transaction: first invocation stores a seed-derived win flag,
    # a later one pays out on it
    a = Asm()
    withdraw, win = Label(), Label()
    a.push(0).op("CALLDATALOAD")
    a.push(1).op("EQ")
    a.push_label(withdraw).op("JUMPI")
    a.push(0x20).op("CALLDATALOAD")
    a.push(10).op("TIMESTAMP").op("MOD")
    a.op("EQ")
    a.push(0).op("SSTORE")
    a.op("STOP")
    a.label(withdraw)
    a.push(0).op("SLOAD")
    a.push_label(win).op("JUMPI")
    a.op("STOP")
    a.label(win)
    _transfer_tail(a)
    code = a.assemble()
    out.append(CorpusFixture(
        "stateful_jackpot", code, True,
        patterns=frozenset({"CALLJUMPI"}),
        source_kinds=frozenset({"TIMESTAMP", "MOD_TIME"}),
        call_pc=_find_call_pc(code),
        found_at_run=2,
    ))

    # loop on an opaque exit condition before a seed-guarded transfer;
    # exercises snapshot pruning
    a = Asm()
    head, win = Label(), Label()
    a.label(head)
    a.push(0).op("CALLDATALOAD")
    a.push_label(head).op("JUMPI")  # opaque condition: loop back
    a.op("TIMESTAMP")
    a.push(0x20).op("CALLDATALOAD")
    a.op("EQ")
    a.push_label(win).op("JUMPI")
    a.op("STOP")
    a.label(win)
    _transfer_tail(a)
    code = a.assemble()
    out.append(CorpusFixture(
        "loop_then_guard", code, True,
        patterns=frozenset({"CALLJUMPI"}),
        source_kinds=frozenset({"TIMESTAMP"}),
        call_pc=_find_call_pc(code),
        has_loop=True,
    ))

    # guard, destination, and amount all seed-derived (matches mode=all too)
    a = Asm()
    win = Label()
    a.push(0).op("CALLDATALOAD")
    a.push(10).op("TIMESTAMP").op("MOD")
    a.op("EQ")
    a.push_label(win).op("JUMPI")
    a.op("STOP")
    a.label(win)
    a.push(0).push(0).push(0).push(0)
    a.push(100).op("TIMESTAMP").op("MOD")  # value
    a.push(1).op("NUMBER").op("SUB").op("BLOCKHASH")
    a.op("PUSH20", (1 << 160) - 1).op("AND")  # to
    a.op("GAS").op("CALL").op("POP").op("STOP")
    code = a.assemble()
    out.append(CorpusFixture(
        "full_house", code, True,
        patterns=frozenset({"CALLJUMPI", "CALLToAddress", "CALLValue"}),
        source_kinds=frozenset({"TIMESTAMP", "MOD_TIME", "BLOCKHASH", "NUMBER"}),
        call_pc=_find_call_pc(code),
    ))

    return out


def safe_fixtures() -> list[CorpusFixture]:
    out: list[CorpusFixture] = []

    # plain payout, no randomness anywhere
    a = Asm()
    _transfer_tail(a)
    out.append(CorpusFixture("plain_transfer", a.assemble(), False))

    # guess checked against a constant
    code, _ = _guarded_transfer(lambda a: a.push(7))
    out.append(CorpusFixture("calldata_guard", code, False))

    # future block hash: unknowable in advance, safe with the suppression flag
    code, _ = _guarded_transfer(lambda a: a.push(1).op("NUMBER").op("ADD").op("BLOCKHASH"))
    out.append(CorpusFixture("future_blockhash", code, False, needs_suppress_flag=True))

    # commit-reveal shape: hash of the reveal must match the stored commitment
    a = Asm()
    win = Label()
    a.push(0).op("CALLDATALOAD")
    a.push(0).op("MSTORE")
    a.push(0x20).push(0).op("SHA3")
    a.push(0).op("SLOAD")
    a.op("EQ")
    a.push_label(win).op("JUMPI")
    a.op("STOP")
    a.label(win)
    _transfer_tail(a)
    out.append(CorpusFixture("commit_reveal", a.assemble(), False))

    # arithmetic-only number derivation from calldata: no seed instruction
    code, _ = _guarded_transfer(
        lambda a: a.push(0x20).op("CALLDATALOAD").push(3).op("MUL").push(17).op("ADD")
    )
    out.append(CorpusFixture("arith_rng", code, False))

    # timestamp is read and persisted but never influences any transfer
    a = Asm()
    a.op("TIMESTAMP").push(5).op("SSTORE")
    _transfer_tail(a)
    out.append(CorpusFixture("unused_timestamp", a.assemble(), False))

    # seed-guarded STATICCALL: cannot move funds, not a sink
    a = Asm()
    win = Label()
    a.op("TIMESTAMP")
    a.push(0).op("CALLDATALOAD")
    a.op("EQ")
    a.push_label(win).op("JUMPI")
    a.op("STOP")
    a.label(win)
    a.push(0).push(0).push(0).push(0)
    a.op("CALLER").op("GAS").op("STATICCALL").op("POP").op("STOP")
    out.append(CorpusFixture("staticcall_guarded", a.assemble(), False))

    # self-destruct to the caller behind an untainted guard
    a = Asm()
    win = Label()
    a.push(0).op("CALLDATALOAD")
    a.push(1).op("EQ")
    a.push_label(win).op("JUMPI")
    a.op("STOP")
    a.label(win)
    a.op("CALLER").op("SELFDESTRUCT")
    out.append(CorpusFixture("selfdestruct_clean", a.assemble(), False))

    # seed reaches a conditional jump but there is no transfer at all
    a = Asm()
    ok = Label()
    a.op("TIMESTAMP")
    a.push(0).op("CALLDATALOAD")
    a.op("EQ")
    a.push_label(ok).op("JUMPI")
    a.op("STOP")
    a.label(ok)
    a.push(1).push(0).op("SSTORE").op("STOP")
    out.append(CorpusFixture("no_call", a.assemble(), False))

    # balance-dependent guard: balances are not randomness seeds statically
    a = Asm()
    win = Label()
    a.op("ADDRESS").op("BALANCE")
    a.push(0).op("CALLDATALOAD")
    a.op("GT")
    a.push_label(win).op("JUMPI")
    a.op("STOP")
    a.label(win)
    _transfer_tail(a)
    out.append(CorpusFixture("balance_guard", a.assemble(), False))

    return out


def all_fixtures() -> list[CorpusFixture]:
    return vulnerable_fixtures() + safe_fixtures()
