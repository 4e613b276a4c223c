"""End-to-end run against a compiler-idiom lottery contract.

The victim is shaped like real emitted code: free-memory-pointer prologue,
4-byte selector dispatch with a reverting fallback, mapping slots derived by
hashing (caller ++ slot) through scratch memory, and a two-step flow where
bet() records a seed-derived win flag and claim() pays out on it. The flag
only reaches the transfer via storage, so the finding must surface on the
second simulated run.
"""

import json

import pytest

import replay_fixtures as RF
from asmkit import Asm, Label
from randscan.decoder import decode_bytecode
from randscan.engine import EngineConfig, scan_bytecode
from randscan.replay import ReplayEngine, parse_fixture
from randscan.replay.detectors import detect_manipulation

BET_SELECTOR = 0xAAAAAAAA
CLAIM_SELECTOR = 0xBBBBBBBB


def _mapping_key(a: Asm, slot: int) -> None:
    """keccak(caller ++ slot) via the scratch cells, solc-style."""
    a.op("CALLER").push(0).op("MSTORE")
    a.push(slot).push(0x20).op("MSTORE")
    a.push(0x40).push(0).op("SHA3")


def lottery_contract() -> bytes:
    a = Asm()
    bet, claim, pay, fallback = Label("bet"), Label("claim"), Label("pay"), Label("fb")
    a.push(0x80).push(0x40).op("MSTORE")
    a.push(4).op("CALLDATASIZE").op("LT")
    a.push_label(fallback).op("JUMPI")
    a.push(0).op("CALLDATALOAD").push(0xE0).op("SHR")
    a.op("DUP1").op("PUSH4", BET_SELECTOR).op("EQ").push_label(bet).op("JUMPI")
    a.op("DUP1").op("PUSH4", CLAIM_SELECTOR).op("EQ").push_label(claim).op("JUMPI")
    a.label(fallback)
    a.push(0).op("DUP1").op("REVERT")

    a.label(bet)
    # stakes[caller] += callvalue
    _mapping_key(a, 0)
    a.op("DUP1").op("SLOAD")
    a.op("CALLVALUE").op("ADD")
    a.op("SWAP1").op("SSTORE")
    # won[caller] = (guess == timestamp % 10)
    a.push(4).op("CALLDATALOAD")
    a.push(10).op("TIMESTAMP").op("MOD")
    a.op("EQ")
    _mapping_key(a, 1)
    a.op("SSTORE")
    a.op("STOP")

    a.label(claim)
    _mapping_key(a, 1)
    a.op("SLOAD")
    a.push_label(pay).op("JUMPI")
    a.op("STOP")

    a.label(pay)
    _mapping_key(a, 0)
    a.op("SLOAD")
    a.push(2).op("MUL")  # prize = 2 * stake
    a.push(0).push(0).push(0).push(0)
    a.op("DUP5")  # prize as the transfer value
    a.op("CALLER").op("GAS").op("CALL").op("POP").op("POP")
    # burn the flag so a second claim gets nothing
    _mapping_key(a, 1)
    a.push(0).op("SWAP1").op("SSTORE")
    a.op("STOP")
    return a.assemble()


@pytest.fixture(scope="module")
def outcome():
    return scan_bytecode(lottery_contract(), EngineConfig(), contract_id="lottery")


def test_single_finding_at_payout_call(outcome):
    (finding,) = outcome.report.findings
    call_pcs = [i.pc for i in decode_bytecode(lottery_contract()) if i.mnemonic == "CALL"]
    assert [finding.call_pc] == call_pcs
    assert finding.patterns == ("CALLJUMPI",)


def test_flag_flows_through_storage_so_run_two_finds_it(outcome):
    (finding,) = outcome.report.findings
    assert finding.run_index == 2
    assert len(outcome.runs) == 2
    assert not outcome.runs[0].sink_records


def test_sources_are_timestamp_and_its_modulo(outcome):
    (finding,) = outcome.report.findings
    assert {s.kind for s in finding.sources} == {"TIMESTAMP", "MOD_TIME"}
    assert all(s.run_index == 1 for s in finding.sources)  # seeds entered in run 1


def test_chain_walks_store_and_load(outcome):
    (finding,) = outcome.report.findings
    ops = [op for chain in finding.chains for _, op in chain]
    assert "SLOAD" in ops  # the guard's taint came out of storage
    assert "MOD" in ops


def test_all_mode_does_not_fire_here():
    out = scan_bytecode(lottery_contract(), EngineConfig(pattern_mode="all"))
    assert out.report.findings == []


def test_untainted_mapping_slots_do_not_alias():
    # stakes[caller] (slot 0) feeds the prize; won[caller] (slot 1) the guard.
    # If the key comparison confused them, the prize would carry seed taint
    # and CALLValue would fire as well.
    out = scan_bytecode(lottery_contract(), EngineConfig())
    (finding,) = out.report.findings
    assert "CALLValue" not in finding.patterns


def _two_phase_attacker() -> bytes:
    """Bets the predicted number when called with 1 byte of calldata, claims
    the winnings when called with 2 bytes."""
    a = Asm()
    bet = Label("bet")
    RF.receive_guard(a)
    a.op("CALLDATASIZE").push(1).op("EQ")
    a.push_label(bet).op("JUMPI")
    # claim: call victim.claim()
    a.op("PUSH4", CLAIM_SELECTOR).push(0xE0).op("SHL").push(0).op("MSTORE")
    a.push(0).push(0)
    a.push(4).push(0)
    a.push(0)
    a.op("PUSH20", RF.VICTIM)
    a.op("GAS").op("CALL").op("POP").op("STOP")
    a.label(bet)
    # bet: selector word first, predicted guess packed at byte 4
    a.op("PUSH4", BET_SELECTOR).push(0xE0).op("SHL").push(0).op("MSTORE")
    a.push(10).op("TIMESTAMP").op("MOD")
    a.push(4).op("MSTORE")
    a.push(0).push(0)
    a.push(0x24).push(0)
    a.op("CALLVALUE")
    a.op("PUSH20", RF.VICTIM)
    a.op("GAS").op("CALL").op("POP").op("STOP")
    return a.assemble()


def test_two_step_attack_split_across_detectors():
    """Per-transaction dynamic taint flags the bet leg (the manipulated guess
    reaches the victim's control flow) but not the claim leg, where the profit
    actually moves: the cross-transaction half is exactly what the repeated
    static runs exist for."""
    doc = RF._fixture(
        accounts={
            RF.addr_hex(RF.EOA): RF._account(balance=10 * RF.ETHER),
            RF.addr_hex(RF.ATTACKER): RF._account(code=_two_phase_attacker()),
            RF.addr_hex(RF.VICTIM): RF._account(balance=50 * RF.ETHER, code=lottery_contract()),
        },
        transactions=[
            RF._tx("0x01", RF.EOA, RF.ATTACKER, RF.ETHER, b"\x01"),
            RF._tx("0x02", RF.EOA, RF.ATTACKER, 0, b"\x01\x02"),
        ],
        caller=RF.ATTACKER,
        target=RF.VICTIM,
    )
    fx = parse_fixture(doc, "two-step")
    engine = ReplayEngine(fx)
    bet_trace = engine.replay_transaction(fx.transactions[0])
    claim_trace = engine.replay_transaction(fx.transactions[1])
    assert bet_trace.status == claim_trace.status == "success"

    # the claim really collected: stake 1, payout 2
    assert engine.balances[RF.ATTACKER] == 2 * RF.ETHER
    assert engine.balances[RF.VICTIM] == 49 * RF.ETHER

    bet_verdict = detect_manipulation(bet_trace, RF.ATTACKER, RF.VICTIM)
    assert bet_verdict is not None
    assert bet_verdict.loss == 0  # no Ether moved in the bet leg
    assert detect_manipulation(claim_trace, RF.ATTACKER, RF.VICTIM) is None

    # the reference machine agrees on the whole two-transaction flow
    import reference_evm as ref

    world = ref.replay_fixture(fx)
    for addr in world:
        assert world[addr]["balance"] == engine.balances.get(addr, 0)
        ours = {k: v for k, v in engine.storage.get(addr, {}).items() if v}
        assert {k: v for k, v in world[addr]["storage"].items() if v} == ours


def test_cli_end_to_end_on_lottery(tmp_path):
    from click.testing import CliRunner

    from randscan.cli import main

    path = tmp_path / "lottery.hex"
    path.write_text("0x" + lottery_contract().hex())
    report = tmp_path / "report.json"
    runner = CliRunner()
    result = runner.invoke(main, ["scan", str(path), "--out", str(report)])
    assert result.exit_code == 1
    doc = json.loads(report.read_text())
    (finding,) = doc["contracts"][0]["findings"]
    assert finding["run_index"] == 2
    explained = runner.invoke(main, ["explain", str(report), "F0"])
    assert "SLOAD" in explained.output
