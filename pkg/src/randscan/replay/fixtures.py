"""World-state fixtures for transaction replay.

One JSON document per scenario: the slice of chain state a replay touches
(accounts with balance/code/storage), the block environment, the recorded
transactions, and the caller/target pair under suspicion. All 256-bit
quantities are 0x-hex strings; addresses are 20-byte 0x-hex strings. Balances
and storage words are treated bit-exactly.

Replays must be closed over their reads: referencing an account or block hash
the fixture does not provide is an error, never a silent default. Reading a
storage key that was never written is not missing state (the machine defines
it as zero) and resolves to 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA_VERSION = 1


class FixtureError(ValueError):
    """Malformed or incomplete fixture; message carries file and field path."""


@dataclass
class BlockEnv:
    number: int = 0
    timestamp: int = 0
    coinbase: int = 0
    difficulty: int = 0
    gaslimit: int = 0
    chainid: int = 1
    basefee: int = 0
    gasprice: int = 0
    blockhashes: dict[int, int] = field(default_factory=dict)

    def with_overrides(self, number: int, overrides: dict[str, int]) -> "BlockEnv":
        env = BlockEnv(
            number=number,
            timestamp=overrides.get("timestamp", self.timestamp),
            coinbase=overrides.get("coinbase", self.coinbase),
            difficulty=overrides.get("difficulty", self.difficulty),
            gaslimit=overrides.get("gaslimit", self.gaslimit),
            chainid=overrides.get("chainid", self.chainid),
            basefee=overrides.get("basefee", self.basefee),
            gasprice=overrides.get("gasprice", self.gasprice),
            blockhashes=self.blockhashes,
        )
        return env


@dataclass
class Account:
    balance: int = 0
    code: bytes = b""
    nonce: int = 1
    storage: dict[int, int] = field(default_factory=dict)


@dataclass
class TransactionRecord:
    id: str
    sender: int
    to: int
    value: int
    input: bytes
    block_number: int
    env_overrides: dict[str, int] = field(default_factory=dict)


@dataclass
class WorldStateFixture:
    path: str
    accounts: dict[int, Account]
    block_env: BlockEnv
    transactions: list[TransactionRecord]
    caller: int
    target: int


def _hex_int(raw, where: str) -> int:
    if not isinstance(raw, str) or not raw.startswith("0x"):
        raise FixtureError(f"{where}: expected 0x-hex string, got {raw!r}")
    try:
        return int(raw, 16)
    except ValueError:
        raise FixtureError(f"{where}: invalid hex {raw!r}") from None


def _hex_bytes(raw, where: str) -> bytes:
    if not isinstance(raw, str) or not raw.startswith("0x"):
        raise FixtureError(f"{where}: expected 0x-hex string, got {raw!r}")
    body = raw[2:]
    if len(body) % 2:
        raise FixtureError(f"{where}: odd-length hex {raw!r}")
    try:
        return bytes.fromhex(body)
    except ValueError:
        raise FixtureError(f"{where}: invalid hex {raw!r}") from None


def _address(raw, where: str) -> int:
    value = _hex_int(raw, where)
    if len(raw) != 42:
        raise FixtureError(f"{where}: addresses must be 20-byte 0x-hex, got {raw!r}")
    return value


def address_hex(addr: int) -> str:
    return "0x" + addr.to_bytes(20, "big").hex()


def word_hex(value: int) -> str:
    return hex(value)


def load_fixture(path: str | Path) -> WorldStateFixture:
    path = Path(path)
    name = str(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FixtureError(f"{name}: unreadable fixture ({exc})") from None
    return parse_fixture(doc, name)


def parse_fixture(doc: dict, name: str) -> WorldStateFixture:
    if not isinstance(doc, dict):
        raise FixtureError(f"{name}: fixture must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise FixtureError(f"{name}.schema_version: expected {SCHEMA_VERSION}, got {version!r}")

    known = {"schema_version", "block_env", "accounts", "transactions", "caller", "target"}
    for key in doc:
        if key not in known:
            raise FixtureError(f"{name}.{key}: unknown field")

    env_doc = doc.get("block_env", {})
    env = BlockEnv(
        number=_hex_int(env_doc.get("number", "0x0"), f"{name}.block_env.number"),
        timestamp=_hex_int(env_doc.get("timestamp", "0x0"), f"{name}.block_env.timestamp"),
        coinbase=_hex_int(env_doc.get("coinbase", "0x0"), f"{name}.block_env.coinbase"),
        difficulty=_hex_int(env_doc.get("difficulty", "0x0"), f"{name}.block_env.difficulty"),
        gaslimit=_hex_int(env_doc.get("gaslimit", "0x0"), f"{name}.block_env.gaslimit"),
        chainid=_hex_int(env_doc.get("chainid", "0x1"), f"{name}.block_env.chainid"),
        basefee=_hex_int(env_doc.get("basefee", "0x0"), f"{name}.block_env.basefee"),
        gasprice=_hex_int(env_doc.get("gasprice", "0x0"), f"{name}.block_env.gasprice"),
        blockhashes={
            _hex_int(k, f"{name}.block_env.blockhashes"): _hex_int(
                v, f"{name}.block_env.blockhashes[{k}]"
            )
            for k, v in env_doc.get("blockhashes", {}).items()
        },
    )

    accounts: dict[int, Account] = {}
    for addr_hex, acct_doc in doc.get("accounts", {}).items():
        where = f"{name}.accounts.{addr_hex}"
        addr = _address(addr_hex, where)
        accounts[addr] = Account(
            balance=_hex_int(acct_doc.get("balance", "0x0"), f"{where}.balance"),
            code=_hex_bytes(acct_doc.get("code", "0x"), f"{where}.code"),
            nonce=_hex_int(acct_doc.get("nonce", "0x1"), f"{where}.nonce"),
            storage={
                _hex_int(k, f"{where}.storage"): _hex_int(v, f"{where}.storage[{k}]")
                for k, v in acct_doc.get("storage", {}).items()
            },
        )

    txs: list[TransactionRecord] = []
    for i, tx_doc in enumerate(doc.get("transactions", [])):
        where = f"{name}.transactions[{i}]"
        overrides = {
            k: _hex_int(v, f"{where}.env.{k}") for k, v in tx_doc.get("env", {}).items()
        }
        txs.append(
            TransactionRecord(
                id=tx_doc.get("id", f"tx{i}"),
                sender=_address(tx_doc.get("from", "0x" + "00" * 20), f"{where}.from"),
                to=_address(tx_doc.get("to", "0x" + "00" * 20), f"{where}.to"),
                value=_hex_int(tx_doc.get("value", "0x0"), f"{where}.value"),
                input=_hex_bytes(tx_doc.get("input", "0x"), f"{where}.input"),
                block_number=_hex_int(tx_doc.get("block_number", "0x0"), f"{where}.block_number"),
                env_overrides=overrides,
            )
        )

    caller = _address(doc.get("caller", "0x" + "00" * 20), f"{name}.caller")
    target = _address(doc.get("target", "0x" + "00" * 20), f"{name}.target")

    fixture = WorldStateFixture(name, accounts, env, txs, caller, target)
    _validate(fixture)
    return fixture


def _validate(fixture: WorldStateFixture) -> None:
    for i, tx in enumerate(fixture.transactions):
        where = f"{fixture.path}.transactions[{i}]"
        if tx.sender not in fixture.accounts:
            raise FixtureError(f"{where}.from: account {address_hex(tx.sender)} not in fixture")
        to_acct = fixture.accounts.get(tx.to)
        if to_acct is None:
            raise FixtureError(f"{where}.to: account {address_hex(tx.to)} not in fixture")
        if not to_acct.code:
            raise FixtureError(f"{where}.to: {address_hex(tx.to)} has no code (not a contract)")


@dataclass
class WorkItem:
    fixture: WorldStateFixture
    tx: TransactionRecord
    caller: int
    target: int


def ingest_suspects(
    inputs: list[str | Path],
    allow: frozenset[int] = frozenset(),
    deny: frozenset[int] = frozenset(),
) -> tuple[list[WorkItem], list[dict]]:
    """Load fixtures from files/directories, filter by address, and return
    work items in lexicographic transaction-id order plus load diagnostics."""
    files: list[Path] = []
    for raw in inputs:
        p = Path(raw)
        if p.is_dir():
            files.extend(sorted(p.glob("*.json")))
        else:
            files.append(p)

    items: list[WorkItem] = []
    diagnostics: list[dict] = []
    for path in files:
        try:
            fixture = load_fixture(path)
        except FixtureError as exc:
            diagnostics.append({"kind": "fixture-error", "file": str(path), "detail": str(exc)})
            continue
        if deny and (fixture.caller in deny or fixture.target in deny):
            continue
        if allow and not (fixture.caller in allow or fixture.target in allow):
            continue
        for tx in fixture.transactions:
            items.append(WorkItem(fixture, tx, fixture.caller, fixture.target))

    items.sort(key=lambda it: it.tx.id)
    return items, diagnostics
