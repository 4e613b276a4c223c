"""Attack-transaction detectors over replay traces.

Manipulation/prediction: fold the trace's conditional-jump and call events
into two taint aggregates, one for the suspected attack (caller) contract and
one for the victim (target). A conditional jump's condition taints feed the
aggregate of the contract it executed in; a call's argument taints feed the
caller aggregate when it goes caller->target and the target aggregate when it
goes target->caller. A non-empty intersection means both contracts consumed
the same seed data: the transaction is an attack.

Rollback: a losing bet is unwound by the attack contract itself. The tx shows
caller->target invocation, a self-balance query whose result taints a later
conditional jump, and a REVERT; the matching winning tx shows the invocation,
a target->caller payout, and the same balance-guarded jump, but commits. The
pair is reported when the two transactions sit within a block window.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..values import VULNERABLE_KINDS
from .interpreter import ExecutionTrace


@dataclass
class AttackReport:
    kind: str  # ManipulationOrPrediction | Rollback
    transactions: tuple[str, ...]
    caller: int
    target: int
    evidence: tuple
    loss: int


def _filter(tags: frozenset, kinds: frozenset[str]) -> frozenset:
    return frozenset(t for t in tags if t[0] in kinds)


def net_gain(trace: ExecutionTrace, beneficiary: int, payer: int) -> int:
    """Wei moved payer->beneficiary net of the reverse direction, floored at 0."""
    inflow = sum(v for s, d, v in trace.settled_transfers if s == payer and d == beneficiary)
    outflow = sum(v for s, d, v in trace.settled_transfers if s == beneficiary and d == payer)
    return max(0, inflow - outflow)


def detect_manipulation(
    trace: ExecutionTrace,
    caller: int,
    target: int,
    vulnerable: frozenset[str] = VULNERABLE_KINDS,
) -> AttackReport | None:
    taint_caller: set = set()
    taint_target: set = set()
    for ev in trace.events:
        if ev["kind"] == "jumpi":
            tags = _filter(ev["taints"], vulnerable)
            if ev["address"] == caller:
                taint_caller |= tags
            elif ev["address"] == target:
                taint_target |= tags
        elif ev["kind"] == "call":
            tags = _filter(ev["taints"], vulnerable)
            if ev["src"] == caller and ev["dst"] == target:
                taint_caller |= tags
            elif ev["src"] == target and ev["dst"] == caller:
                taint_target |= tags

    intersection = taint_caller & taint_target
    if not intersection:
        return None
    return AttackReport(
        kind="ManipulationOrPrediction",
        transactions=(trace.tx.id,),
        caller=caller,
        target=target,
        evidence=tuple(sorted(intersection, key=repr)),
        loss=net_gain(trace, caller, target),
    )


def _rollback_steps(trace: ExecutionTrace, caller: int, target: int) -> dict:
    """Indices of the four-step machinery shared by both rollback-pattern
    transaction shapes; -1 marks a missing step."""
    first_call = -1
    balance_query = -1
    tainted_jumpi = -1
    revert_after = -1
    balance_tag = ("BALANCE", caller)
    for i, ev in enumerate(trace.events):
        kind = ev["kind"]
        if kind == "call" and first_call < 0 and ev["src"] == caller and ev["dst"] == target:
            first_call = i
        elif kind == "balance" and balance_query < 0 and ev["address"] == caller and ev["queried"] == caller:
            balance_query = i
        elif (
            kind == "jumpi"
            and tainted_jumpi < 0
            and first_call >= 0
            and ev["address"] == caller
            and balance_tag in ev["taints"]
        ):
            tainted_jumpi = i
        elif kind == "revert" and tainted_jumpi >= 0 and revert_after < 0 and ev["address"] == caller:
            revert_after = i
    return {
        "call": first_call,
        "balance": balance_query,
        "jumpi": tainted_jumpi,
        "revert": revert_after,
    }


def is_rollback_tx(trace: ExecutionTrace, caller: int, target: int) -> bool:
    steps = _rollback_steps(trace, caller, target)
    return (
        trace.status == "reverted"
        and steps["call"] >= 0
        and steps["balance"] >= 0
        and steps["jumpi"] >= 0
        and steps["revert"] >= 0
    )


def is_profit_tx(trace: ExecutionTrace, caller: int, target: int) -> bool:
    steps = _rollback_steps(trace, caller, target)
    paid = any(s == target and d == caller and v > 0 for s, d, v in trace.settled_transfers)
    return (
        trace.status == "success"
        and steps["call"] >= 0
        and paid
        and steps["balance"] >= 0
        and steps["jumpi"] >= 0
    )


def detect_rollback(
    traces: list[ExecutionTrace], caller: int, target: int, window: int = 6000
) -> list[AttackReport]:
    """Pair rollback transactions with profit transactions of the same
    caller/target pair occurring within `window` blocks."""
    rollbacks = [t for t in traces if is_rollback_tx(t, caller, target)]
    profits = [t for t in traces if is_profit_tx(t, caller, target)]

    reports: list[AttackReport] = []
    for rb in rollbacks:
        candidates = [
            p for p in profits if abs(p.tx.block_number - rb.tx.block_number) <= window
        ]
        if not candidates:
            continue
        best = min(
            candidates,
            key=lambda p: (abs(p.tx.block_number - rb.tx.block_number), p.tx.id),
        )
        reports.append(
            AttackReport(
                kind="Rollback",
                transactions=(rb.tx.id, best.tx.id),
                caller=caller,
                target=target,
                evidence=(
                    ("rollback", rb.tx.id, rb.tx.block_number),
                    ("profit", best.tx.id, best.tx.block_number),
                ),
                loss=net_gain(best, caller, target),
            )
        )
    return reports

