"""Concrete machine for transaction replay with shadow taint tracking.

Executes recorded transactions against a world-state fixture using real word
semantics (hashing included) while mirroring every value's taint: per stack
slot, per 32-byte memory cell, per storage slot. Taint tags carry the kind of
seed instruction plus the concrete datum it produced, so the same on-chain
value read in two different contracts yields the same tag and can intersect.

Gas is not metered: fixtures are crafted and verdicts here never hinge on
out-of-gas behavior. Reverts restore balances, storage, created accounts, and
settled transfers of the reverted frame, bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .. import arith
from ..keccak import keccak256, keccak256_int
from ..opcodes import TABLE, push_width
from ..values import VULNERABLE_KINDS
from .fixtures import BlockEnv, TransactionRecord, WorldStateFixture, address_hex

TaintTag = tuple  # (kind, concrete datum)

CELL = 32
_GAS_STUB = 10_000_000
_MAX_DEPTH = 1024
_ADDR_MASK = (1 << 160) - 1
# gas is not metered, so bound memory explicitly; real executions never get
# near this because expansion costs grow quadratically
MEMORY_LIMIT = 1 << 24


class ReplayError(RuntimeError):
    """Fixture does not cover state the replay touched."""


@dataclass
class ExecutionTrace:
    tx: TransactionRecord
    events: list[dict] = field(default_factory=list)
    settled_transfers: list[tuple[int, int, int]] = field(default_factory=list)
    status: str = "success"  # success | reverted
    partial: bool = False


class _Memory:
    def __init__(self) -> None:
        self.data = bytearray()
        self.taints: dict[int, frozenset] = {}
        self.touched = 0

    def _expand(self, end: int) -> None:
        if end > MEMORY_LIMIT:
            raise _FrameFailure(f"memory extent {end:#x} beyond limit")
        if end > self.touched:
            self.touched = (end + CELL - 1) // CELL * CELL
        if end > len(self.data):
            self.data.extend(b"\x00" * (self.touched - len(self.data)))

    def check_extent(self, offset: int, length: int) -> None:
        if length and offset + length > MEMORY_LIMIT:
            raise _FrameFailure(f"memory extent {offset + length:#x} beyond limit")

    def read(self, offset: int, length: int) -> bytes:
        if length == 0:
            return b""
        self._expand(offset + length)
        return bytes(self.data[offset : offset + length])

    def read_taint(self, offset: int, length: int) -> frozenset:
        if length == 0:
            return frozenset()
        cells = range(offset // CELL, (offset + length - 1) // CELL + 1)
        return frozenset().union(*(self.taints.get(c, frozenset()) for c in cells))

    def write(self, offset: int, data: bytes, taint: frozenset = frozenset()) -> None:
        if not data:
            return
        self._expand(offset + len(data))
        self.data[offset : offset + len(data)] = data
        first, last = offset // CELL, (offset + len(data) - 1) // CELL + 1
        for cell in range(first, last):
            covers = offset <= cell * CELL and offset + len(data) >= (cell + 1) * CELL
            if covers:
                if taint:
                    self.taints[cell] = taint
                else:
                    self.taints.pop(cell, None)
            elif taint:
                self.taints[cell] = self.taints.get(cell, frozenset()) | taint

    def write_with_cell_taints(self, offset: int, data: bytes, source: "_Memory",
                               src_offset: int) -> None:
        """Copy bytes plus the taint of each source cell they came from."""
        for i in range(0, len(data), CELL):
            chunk = data[i : i + CELL]
            taint = source.read_taint(src_offset + i, len(chunk))
            self.write(offset + i, chunk, taint)

    def msize(self) -> int:
        return self.touched


@dataclass
class _Frame:
    address: int  # storage/balance context
    code: bytes
    caller: int
    origin: int
    value: int
    calldata: bytes
    calldata_taints: dict[int, frozenset]
    depth: int
    static: bool
    env: BlockEnv


class ReplayEngine:
    """Replays a fixture's transactions in order against evolving state."""

    def __init__(self, fixture: WorldStateFixture, vulnerable: frozenset[str] = VULNERABLE_KINDS):
        self.fixture = fixture
        self.vulnerable = vulnerable
        self.balances: dict[int, int] = {a: acct.balance for a, acct in fixture.accounts.items()}
        self.storage: dict[int, dict[int, int]] = {
            a: dict(acct.storage) for a, acct in fixture.accounts.items()
        }
        self.codes: dict[int, bytes] = {a: acct.code for a, acct in fixture.accounts.items()}
        self.nonces: dict[int, int] = {a: acct.nonce for a, acct in fixture.accounts.items()}
        self.storage_taints: dict[int, dict[int, frozenset]] = {}
        self._trace: ExecutionTrace | None = None
        self._returndata: bytes = b""
        self._returndata_taints: dict[int, frozenset] = {}

    # -- journaling -----------------------------------------------------------

    def _snapshot(self) -> tuple:
        return (
            dict(self.balances),
            {a: dict(s) for a, s in self.storage.items()},
            dict(self.codes),
            dict(self.nonces),
            {a: dict(t) for a, t in self.storage_taints.items()},
            len(self._trace.settled_transfers),
        )

    def _restore(self, snap: tuple) -> None:
        balances, storage, codes, nonces, staints, n_transfers = snap
        self.balances = balances
        self.storage = storage
        self.codes = codes
        self.nonces = nonces
        self.storage_taints = staints
        del self._trace.settled_transfers[n_transfers:]

    # -- transaction entry ------------------------------------------------------

    def replay_transaction(self, tx: TransactionRecord) -> ExecutionTrace:
        trace = ExecutionTrace(tx)
        self._trace = trace
        self.storage_taints = {}  # dynamic taint is scoped to one transaction
        env = self.fixture.block_env.with_overrides(tx.block_number, tx.env_overrides)

        snap = self._snapshot()
        if self.balances.get(tx.sender, 0) < tx.value:
            raise ReplayError(f"sender {address_hex(tx.sender)} cannot cover tx value")
        self._transfer(tx.sender, tx.to, tx.value)

        frame = _Frame(
            address=tx.to,
            code=self._code_of(tx.to),
            caller=tx.sender,
            origin=tx.sender,
            value=tx.value,
            calldata=tx.input,
            calldata_taints={},
            depth=0,
            static=False,
            env=env,
        )
        success, _, _ = self._execute(frame)
        if not success:
            self._restore(snap)
            trace.status = "reverted"
        return trace

    # -- state helpers ------------------------------------------------------------

    def _code_of(self, addr: int) -> bytes:
        code = self.codes.get(addr)
        if code is None:
            raise ReplayError(f"missing account {address_hex(addr)} in fixture")
        return code

    def _balance_of(self, addr: int) -> int:
        if addr not in self.balances:
            raise ReplayError(f"missing account {address_hex(addr)} in fixture")
        return self.balances[addr]

    def _transfer(self, src: int, dst: int, value: int) -> None:
        if not value:
            return
        self.balances[src] = self.balances.get(src, 0) - value
        self.balances[dst] = self.balances.get(dst, 0) + value
        self._trace.settled_transfers.append((src, dst, value))
        self._event("transfer", src=src, dst=dst, value=value)

    def _event(self, kind: str, **payload) -> None:
        payload["kind"] = kind
        self._trace.events.append(payload)

    def _source(self, kind: str, datum: int, frame: _Frame, pc: int) -> frozenset:
        if kind != "BALANCE" and kind not in self.vulnerable:
            return frozenset()
        tag: TaintTag = (kind, datum)
        self._event("source", address=frame.address, pc=pc, tag=tag)
        return frozenset({tag})

    # -- frame execution -----------------------------------------------------------

    def _execute(self, frame: _Frame) -> tuple[bool, bytes, dict[int, frozenset]]:
        """Run one call frame. Returns (success, returndata, returndata cell taints)."""
        stack: list[int] = []
        taints: list[frozenset] = []
        mem = _Memory()
        code = frame.code
        jumpdests = _jumpdests(code)
        self._returndata = b""
        self._returndata_taints = {}
        pc = 0

        def push(v: int, t: frozenset = frozenset()) -> None:
            if len(stack) >= 1024:
                raise _FrameFailure("stack overflow")
            stack.append(v & arith.WORD_MAX)
            taints.append(t)

        def pop(n: int) -> tuple[list[int], list[frozenset]]:
            if len(stack) < n:
                raise _FrameFailure("stack underflow")
            vs = [stack.pop() for _ in range(n)]
            ts = [taints.pop() for _ in range(n)]
            return vs, ts

        try:
            while pc < len(code):
                op = code[pc]
                if op not in TABLE:
                    raise _FrameFailure(f"invalid opcode {op:#x}")
                mn = TABLE[op][0]
                self._event("step", address=frame.address, depth=frame.depth, pc=pc, op=mn)
                width = push_width(op)

                if width:
                    imm = code[pc + 1 : pc + 1 + width]
                    push(int.from_bytes(imm.ljust(width, b"\x00"), "big"))
                    pc += 1 + width
                    continue
                pc += 1

                if mn == "PUSH0":
                    push(0)
                elif mn.startswith("DUP"):
                    n = int(mn[3:])
                    if len(stack) < n:
                        raise _FrameFailure("stack underflow")
                    push(stack[-n], taints[-n])
                elif mn.startswith("SWAP"):
                    n = int(mn[4:])
                    if len(stack) < n + 1:
                        raise _FrameFailure("stack underflow")
                    stack[-1], stack[-n - 1] = stack[-n - 1], stack[-1]
                    taints[-1], taints[-n - 1] = taints[-n - 1], taints[-1]
                elif mn == "POP":
                    pop(1)
                elif mn in arith.FOLDABLE:
                    pops = 3 if mn in ("ADDMOD", "MULMOD") else (1 if mn in ("NOT", "ISZERO") else 2)
                    vs, ts = pop(pops)
                    result = arith.fold(mn, vs)
                    taint = frozenset().union(*ts)
                    if mn in ("MOD", "SMOD") and any(t[0] == "TIMESTAMP" for t in taint):
                        taint |= self._source("MOD_TIME", result, frame, pc - 1)
                    push(result, taint)
                elif mn == "SHA3":
                    (ofs, length), (_, _) = pop(2)
                    data = mem.read(ofs, length)
                    push(keccak256_int(data), mem.read_taint(ofs, length))
                elif mn == "ADDRESS":
                    push(frame.address)
                elif mn == "BALANCE":
                    (addr,), (t,) = pop(1)
                    addr &= _ADDR_MASK
                    value = self._balance_of(addr)
                    self._event("balance", address=frame.address, queried=addr, pc=pc - 1)
                    push(value, t | self._source("BALANCE", addr, frame, pc - 1))
                elif mn == "SELFBALANCE":
                    value = self._balance_of(frame.address)
                    self._event("balance", address=frame.address, queried=frame.address, pc=pc - 1)
                    push(value, self._source("BALANCE", frame.address, frame, pc - 1))
                elif mn == "ORIGIN":
                    push(frame.origin)
                elif mn == "CALLER":
                    push(frame.caller)
                elif mn == "CALLVALUE":
                    push(frame.value)
                elif mn == "CALLDATALOAD":
                    (ofs,), (t,) = pop(1)
                    word = frame.calldata[ofs : ofs + 32].ljust(32, b"\x00")
                    push(int.from_bytes(word, "big"), t | _cd_taint(frame, ofs, 32))
                elif mn == "CALLDATASIZE":
                    push(len(frame.calldata))
                elif mn == "CALLDATACOPY":
                    (dest, ofs, length), _ = pop(3)
                    mem.check_extent(dest, length)
                    data = frame.calldata[ofs : ofs + length].ljust(length, b"\x00")
                    for i in range(0, length, CELL):
                        chunk = data[i : i + CELL]
                        mem.write(dest + i, chunk, _cd_taint(frame, ofs + i, len(chunk)))
                elif mn == "CODESIZE":
                    push(len(code))
                elif mn == "CODECOPY":
                    (dest, ofs, length), _ = pop(3)
                    mem.check_extent(dest, length)
                    mem.write(dest, code[ofs : ofs + length].ljust(length, b"\x00"))
                elif mn == "GASPRICE":
                    push(frame.env.gasprice)
                elif mn == "EXTCODESIZE":
                    (addr,), _ = pop(1)
                    push(len(self._code_of(addr & _ADDR_MASK)))
                elif mn == "EXTCODECOPY":
                    (addr, dest, ofs, length), _ = pop(4)
                    ext = self._code_of(addr & _ADDR_MASK)
                    mem.check_extent(dest, length)
                    mem.write(dest, ext[ofs : ofs + length].ljust(length, b"\x00"))
                elif mn == "EXTCODEHASH":
                    (addr,), _ = pop(1)
                    push(keccak256_int(self._code_of(addr & _ADDR_MASK)))
                elif mn == "RETURNDATASIZE":
                    push(len(self._returndata))
                elif mn == "RETURNDATACOPY":
                    (dest, ofs, length), _ = pop(3)
                    if ofs + length > len(self._returndata):
                        raise _FrameFailure("returndata out of bounds")
                    data = self._returndata[ofs : ofs + length]
                    for i in range(0, length, CELL):
                        chunk = data[i : i + CELL]
                        cells = range((ofs + i) // CELL, (ofs + i + max(len(chunk), 1) - 1) // CELL + 1)
                        taint = frozenset().union(
                            *(self._returndata_taints.get(c, frozenset()) for c in cells)
                        )
                        mem.write(dest + i, chunk, taint)
                elif mn == "BLOCKHASH":
                    (num,), (t,) = pop(1)
                    if num not in frame.env.blockhashes:
                        raise ReplayError(
                            f"missing blockhash for block {num} in fixture {self.fixture.path}"
                        )
                    value = frame.env.blockhashes[num]
                    push(value, t | self._source("BLOCKHASH", value, frame, pc - 1))
                elif mn == "COINBASE":
                    push(frame.env.coinbase, self._source("COINBASE", frame.env.coinbase, frame, pc - 1))
                elif mn == "TIMESTAMP":
                    push(frame.env.timestamp, self._source("TIMESTAMP", frame.env.timestamp, frame, pc - 1))
                elif mn == "NUMBER":
                    push(frame.env.number, self._source("NUMBER", frame.env.number, frame, pc - 1))
                elif mn == "DIFFICULTY":
                    push(frame.env.difficulty, self._source("DIFFICULTY", frame.env.difficulty, frame, pc - 1))
                elif mn == "GASLIMIT":
                    push(frame.env.gaslimit, self._source("GASLIMIT", frame.env.gaslimit, frame, pc - 1))
                elif mn == "CHAINID":
                    push(frame.env.chainid)
                elif mn == "BASEFEE":
                    push(frame.env.basefee)
                elif mn == "MLOAD":
                    (ofs,), (t,) = pop(1)
                    push(int.from_bytes(mem.read(ofs, 32), "big"), t | mem.read_taint(ofs, 32))
                elif mn == "MSTORE":
                    (ofs, value), (_, vt) = pop(2)
                    mem.write(ofs, value.to_bytes(32, "big"), vt)
                elif mn == "MSTORE8":
                    (ofs, value), (_, vt) = pop(2)
                    mem.write(ofs, bytes([value & 0xFF]), vt)
                elif mn == "SLOAD":
                    (key,), (t,) = pop(1)
                    slot = self.storage.setdefault(frame.address, {})
                    taint = self.storage_taints.get(frame.address, {}).get(key, frozenset())
                    push(slot.get(key, 0), t | taint)
                elif mn == "SSTORE":
                    if frame.static:
                        raise _FrameFailure("state change in static context")
                    (key, value), (_, vt) = pop(2)
                    self.storage.setdefault(frame.address, {})[key] = value
                    self.storage_taints.setdefault(frame.address, {})[key] = vt
                elif mn == "JUMP":
                    (dest,), _ = pop(1)
                    if dest not in jumpdests:
                        raise _FrameFailure(f"jump to non-JUMPDEST {dest:#x}")
                    pc = dest
                elif mn == "JUMPI":
                    (dest, cond), (_, ct) = pop(2)
                    self._event("jumpi", address=frame.address, pc=pc - 1, taints=ct)
                    if cond:
                        if dest not in jumpdests:
                            raise _FrameFailure(f"jump to non-JUMPDEST {dest:#x}")
                        pc = dest
                elif mn == "PC":
                    push(pc - 1)
                elif mn == "MSIZE":
                    push(mem.msize())
                elif mn == "GAS":
                    push(_GAS_STUB)
                elif mn == "JUMPDEST":
                    pass
                elif mn.startswith("LOG"):
                    if frame.static:
                        raise _FrameFailure("state change in static context")
                    pop(int(mn[3:]) + 2)
                elif mn in ("CREATE", "CREATE2"):
                    self._do_create(mn, frame, mem, pop, push, pc - 1)
                elif mn in ("CALL", "CALLCODE", "DELEGATECALL", "STATICCALL"):
                    self._do_call(mn, frame, mem, pop, push, pc - 1)
                elif mn == "RETURN":
                    (ofs, length), _ = pop(2)
                    data = mem.read(ofs, length)
                    return True, data, _slice_taints(mem, ofs, length)
                elif mn == "REVERT":
                    (ofs, length), _ = pop(2)
                    data = mem.read(ofs, length)
                    self._event("revert", address=frame.address, pc=pc - 1, depth=frame.depth)
                    return False, data, _slice_taints(mem, ofs, length)
                elif mn == "STOP":
                    return True, b"", {}
                elif mn == "INVALID":
                    raise _FrameFailure("INVALID executed")
                elif mn == "SELFDESTRUCT":
                    if frame.static:
                        raise _FrameFailure("state change in static context")
                    (beneficiary,), _ = pop(1)
                    beneficiary &= _ADDR_MASK
                    balance = self.balances.get(frame.address, 0)
                    if beneficiary not in self.balances:
                        self.balances[beneficiary] = 0
                    self.balances[frame.address] = 0
                    self.balances[beneficiary] += balance
                    self._trace.settled_transfers.append((frame.address, beneficiary, balance))
                    self._event("transfer", src=frame.address, dst=beneficiary, value=balance)
                    return True, b"", {}
                else:
                    self._trace.partial = True
                    raise _FrameFailure(f"unsupported opcode {mn}")
            return True, b"", {}  # ran off the end: implicit STOP
        except _FrameFailure as failure:
            self._event(
                "frame-failure", address=frame.address, depth=frame.depth, detail=str(failure)
            )
            return False, b"", {}

    # -- calls and creates ----------------------------------------------------------

    def _do_call(self, mn: str, frame: _Frame, mem: _Memory, pop, push, pc: int) -> None:
        if mn in ("CALL", "CALLCODE"):
            (gas, to, value, in_ofs, in_len, ret_ofs, ret_len), ts = pop(7)
            to_taint, value_taint = ts[1], ts[2]
        else:
            (gas, to, in_ofs, in_len, ret_ofs, ret_len), ts = pop(6)
            value = 0
            to_taint, value_taint = ts[1], frozenset()
        to &= _ADDR_MASK

        calldata = mem.read(in_ofs, in_len)
        cd_taints = _slice_taints(mem, in_ofs, in_len)
        arg_taints = to_taint | value_taint | mem.read_taint(in_ofs, in_len)

        if mn == "CALL":
            self._event(
                "call", src=frame.address, dst=to, value=value, pc=pc, taints=arg_taints
            )
        if frame.static and mn == "CALL" and value:
            raise _FrameFailure("value transfer in static context")

        code = self._code_of(to)
        if frame.depth + 1 > _MAX_DEPTH or self.balances.get(frame.address, 0) < value:
            push(0)
            return

        if mn == "CALL":
            sub = _Frame(to, code, frame.address, frame.origin, value, calldata, cd_taints,
                         frame.depth + 1, frame.static, frame.env)
            transfer = (frame.address, to, value)
        elif mn == "CALLCODE":
            sub = _Frame(frame.address, code, frame.address, frame.origin, value, calldata,
                         cd_taints, frame.depth + 1, frame.static, frame.env)
            transfer = None
        elif mn == "DELEGATECALL":
            sub = _Frame(frame.address, code, frame.caller, frame.origin, frame.value, calldata,
                         cd_taints, frame.depth + 1, frame.static, frame.env)
            transfer = None
        else:  # STATICCALL
            sub = _Frame(to, code, frame.address, frame.origin, 0, calldata, cd_taints,
                         frame.depth + 1, True, frame.env)
            transfer = None

        snap = self._snapshot()
        if transfer and transfer[2] >= 0:
            self._transfer(*transfer)
        if not code:
            success, ret, ret_taints = True, b"", {}
        else:
            success, ret, ret_taints = self._execute(sub)
        if not success:
            self._restore(snap)

        self._returndata = ret
        self._returndata_taints = ret_taints
        # only the bytes actually returned are copied; the rest of the
        # region keeps its previous contents
        data = ret[:ret_len]
        for i in range(0, len(data), CELL):
            chunk = data[i : i + CELL]
            cells = range(i // CELL, (i + len(chunk) - 1) // CELL + 1)
            taint = frozenset().union(*(ret_taints.get(c, frozenset()) for c in cells))
            mem.write(ret_ofs + i, chunk, taint)
        push(1 if success else 0)

    def _do_create(self, mn: str, frame: _Frame, mem: _Memory, pop, push, pc: int) -> None:
        if frame.static:
            raise _FrameFailure("state change in static context")
        if mn == "CREATE":
            (value, ofs, length), _ = pop(3)
            salt = None
        else:
            (value, ofs, length, salt), _ = pop(4)
        init_code = mem.read(ofs, length)

        nonce = self.nonces.get(frame.address, 1)
        if salt is None:
            child = _create_address(frame.address, nonce)
        else:
            child = _create2_address(frame.address, salt, init_code)
        self.nonces[frame.address] = nonce + 1

        if frame.depth + 1 > _MAX_DEPTH or self.balances.get(frame.address, 0) < value:
            push(0)
            return

        snap = self._snapshot()
        self.balances.setdefault(child, 0)
        self.storage.setdefault(child, {})
        self.codes[child] = b""
        self.nonces.setdefault(child, 1)
        if value:
            self._transfer(frame.address, child, value)

        sub = _Frame(child, init_code, frame.address, frame.origin, value, b"", {},
                     frame.depth + 1, False, frame.env)
        success, ret, _ = self._execute(sub)
        if not success:
            self._restore(snap)
            self._returndata, self._returndata_taints = ret, {}
            push(0)
            return
        self.codes[child] = ret
        self._returndata, self._returndata_taints = b"", {}
        self._event("create", parent=frame.address, address=child)
        push(child)


class _FrameFailure(Exception):
    pass


def _jumpdests(code: bytes) -> frozenset[int]:
    out = set()
    pc = 0
    while pc < len(code):
        op = code[pc]
        if op == 0x5B:
            out.add(pc)
        pc += 1 + push_width(op)
    return frozenset(out)


def _cd_taint(frame: _Frame, offset: int, length: int) -> frozenset:
    if not frame.calldata_taints or length == 0:
        return frozenset()
    cells = range(offset // CELL, (offset + length - 1) // CELL + 1)
    return frozenset().union(*(frame.calldata_taints.get(c, frozenset()) for c in cells))


def _slice_taints(mem: _Memory, offset: int, length: int) -> dict[int, frozenset]:
    """Cell-indexed taints of a memory slice, re-based to slice-local cells."""
    out: dict[int, frozenset] = {}
    for i in range(0, length, CELL):
        taint = mem.read_taint(offset + i, min(CELL, length - i))
        if taint:
            out[i // CELL] = taint
    return out


def _rlp_encode(item) -> bytes:
    if isinstance(item, int):
        if item == 0:
            data = b""
        else:
            data = item.to_bytes((item.bit_length() + 7) // 8, "big")
        return _rlp_encode(data)
    if isinstance(item, bytes):
        if len(item) == 1 and item[0] < 0x80:
            return item
        if len(item) <= 55:
            return bytes([0x80 + len(item)]) + item
        size = len(item).to_bytes((len(item).bit_length() + 7) // 8, "big")
        return bytes([0xB7 + len(size)]) + size + item
    # list
    body = b"".join(_rlp_encode(x) for x in item)
    if len(body) <= 55:
        return bytes([0xC0 + len(body)]) + body
    size = len(body).to_bytes((len(body).bit_length() + 7) // 8, "big")
    return bytes([0xF7 + len(size)]) + size + body


def _create_address(sender: int, nonce: int) -> int:
    digest = keccak256(_rlp_encode([sender.to_bytes(20, "big"), nonce]))
    return int.from_bytes(digest[12:], "big")


def _create2_address(sender: int, salt: int, init_code: bytes) -> int:
    preimage = b"\xff" + sender.to_bytes(20, "big") + salt.to_bytes(32, "big") + keccak256(init_code)
    return int.from_bytes(keccak256(preimage)[12:], "big")
