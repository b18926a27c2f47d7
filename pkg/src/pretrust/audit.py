"""Conservation and chain-integrity checks, live or from an exported snapshot."""

from __future__ import annotations

import json
from dataclasses import dataclass

from .crypto import Address
from .ledger import GENESIS_PREV, Block, LedgerState, validate_block


@dataclass(frozen=True)
class Violation:
    invariant: str
    detail: str

    def __str__(self) -> str:
        return f"{self.invariant}: {self.detail}"


def _conservation(ext_balances: dict, contract: int, deposited: int, withdrawn: int,
                  initial: int, internal_total: int, accounts: list[dict]) -> list[Violation]:
    out = []
    ext = sum(ext_balances.values())
    if ext + contract != initial:
        out.append(Violation("external_conservation",
                             f"external {ext} + contract {contract} != initial {initial}"))
    if contract != deposited - withdrawn:
        out.append(Violation("contract_balance",
                             f"contract {contract} != deposited {deposited} - withdrawn {withdrawn}"))
    if contract != internal_total:
        out.append(Violation("internal_backing",
                             f"contract {contract} != internal tokens {internal_total}"))
    for a in accounts:
        if min(a["balance"], a["deposit"], a["locked"]) < 0:
            out.append(Violation("non_negative", f"account {a['addr']} has a negative field"))
        if a["locked"] > a["deposit"]:
            out.append(Violation("lock_bound", f"account {a['addr']} locked {a['locked']} > deposit"))
    return out


def check_chain(blocks: list[Block], rosters_for, start: int = 0) -> list[Violation]:
    """Revalidate ``blocks[start:]`` and the hash links of the whole chain."""
    out = []
    prev = GENESIS_PREV
    for h, b in enumerate(blocks):
        if b.height != h or b.prev_hash != prev:
            out.append(Violation("chain_integrity", f"shard {b.shard} link broken at {h}"))
            break
        if h >= start and not validate_block(b, rosters_for(b.epoch, b.shard), prev, h):
            out.append(Violation("chain_integrity", f"shard {b.shard} block {h} invalid"))
            break
        prev = b.hash
    return out


def check_world(world, chain_from: dict[int, int] | None = None) -> list[Violation]:
    led: LedgerState = world.ledger
    ch = world.chain
    out = _conservation(
        ch.balances, ch.contract_balance, ch.total_deposited, ch.total_withdrawn,
        ch.initial_total, led.total_internal(), [a.to_json() for a in led.accounts.values()],
    )
    for s, rc in sorted(led.record_chains.items()):
        start = (chain_from or {}).get(s, 0)
        out += check_chain(rc.blocks, led.roster_at, start)
    prev = GENESIS_PREV
    for h, ab in enumerate(led.arbitration_chain):
        if ab.height != h or ab.prev_hash != prev:
            out.append(Violation("arbitration_chain", f"link broken at {h}"))
            break
        prev = ab.hash
    return out


def export_snapshot(world) -> dict:
    led: LedgerState = world.ledger
    return {
        "format": "pretrust-snapshot/1",
        "params": led.params.to_json(),
        "chain": world.chain.snapshot(),
        "ledger": led.snapshot(),
        "rosters": [
            {str(s): [a.hex() for a in r] for s, r in sorted(e.rosters.items())}
            for e in led.epochs
        ],
        "blocks": {
            str(s): [b.to_bytes().hex() for b in rc.blocks]
            for s, rc in sorted(led.record_chains.items())
        },
    }


def audit_snapshot(snap: dict) -> list[Violation]:
    try:
        chain = snap["chain"]
        ledger = snap["ledger"]
        accounts = ledger["accounts"]
        internal = (
            sum(a["balance"] + a["deposit"] for a in accounts)
            + sum(ledger["escrow"].values())
            + sum(c[1] for c in ledger["certified"].values())
        )
        out = _conservation(chain["balances"], chain["contract_balance"],
                            chain["total_deposited"], chain["total_withdrawn"],
                            chain["initial_total"], internal, accounts)
        rosters = [
            {int(s): tuple(Address(bytes.fromhex(a)) for a in r) for s, r in e.items()}
            for e in snap["rosters"]
        ]

        def roster_at(epoch: int, shard: int):
            return rosters[epoch].get(shard, ()) if 0 <= epoch < len(rosters) else ()

        for s, blocks in sorted(snap["blocks"].items(), key=lambda kv: int(kv[0])):
            decoded = [Block.from_bytes(bytes.fromhex(b)) for b in blocks]
            if any(b.shard != int(s) for b in decoded):
                out.append(Violation("chain_integrity", f"block filed under wrong shard {s}"))
            out += check_chain(decoded, roster_at)
            head = ledger["chain_heads"].get(s)
            tip = decoded[-1].hash.hex() if decoded else GENESIS_PREV.hex()
            if head is None or head["tip"] != tip or head["height"] != len(decoded) - 1:
                out.append(Violation("chain_integrity", f"shard {s} head does not match blocks"))
        return out
    except (KeyError, TypeError, ValueError) as e:
        return [Violation("snapshot_format", str(e))]


def load_snapshot(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)
