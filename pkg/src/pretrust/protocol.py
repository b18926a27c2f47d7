"""Guarantee, withdrawal and arbitration guards, and the node state machines
that drive them inside the simulator.

Every guard failure raises :class:`ProtocolFailure` naming the guard, and a
failing guard leaves the ledger untouched.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

from .crypto import Address, Digest, KeyPair
from .ledger import (
    ArbitrationRecord,
    InsufficientCapacity,
    LedgerState,
)
from .messages import (
    BlockExpectation,
    Guarantee,
    PreGuarantee1,
    PreGuarantee2,
    TxInfo,
    WithdrawalCheck,
    WithdrawalRequest,
    make_guarantee,
    make_pg1,
    make_pg2,
    make_withdrawal_check,
    verify_structure,
)
from .sharding import EpochState, assign_tx_shard, compute_global_hash, derive_epoch, elect_guarantor

if TYPE_CHECKING:
    from .simulator import World

log = logging.getLogger(__name__)

__all__ = [
    "ProtocolFailure",
    "ArbitrationRecord",
    "verify_txinfo",
    "payer_counter_sign",
    "group_generate_guarantee",
    "payee_verify",
    "handle_withdrawal_request",
    "file_arbitration",
    "epoch_tick",
]


class ProtocolFailure(Exception):
    def __init__(self, guard: str, detail: str = "") -> None:
        super().__init__(f"{guard}: {detail}" if detail else guard)
        self.guard = guard


def _fail(guard: str, detail: str = "") -> None:
    raise ProtocolFailure(guard, detail)


# -- algorithms -------------------------------------------------------------

def verify_txinfo(guarantor: KeyPair, txinfo: TxInfo, ledger: LedgerState) -> PreGuarantee1:
    """Guarantor-side check of a TxInfo; on success issue PreGuarantee1.

    Guards: signatures, both parties known and not withdrawal-locked, the
    guarantor sits in the payer's current group, the payer's txSN is the next
    one and the payee's is fresh, and spendable balance >= c + fee.
    """
    if not verify_structure(txinfo):
        _fail("signatures")
    payer = ledger.accounts.get(txinfo.payer)
    payee = ledger.accounts.get(txinfo.payee)
    if payer is None or payee is None:
        _fail("unknown_party")
    if payer.withdrawal_locked or payee.withdrawal_locked:
        _fail("withdrawal_locked")
    shard = ledger.shard_of_account(txinfo.payer)
    if guarantor.address not in ledger.roster_at(ledger.epoch.index, shard):
        _fail("not_in_group")
    if txinfo.txsn_payer != payer.next_txsn or txinfo.txsn_payee in payee.payee_sns:
        _fail("txsn", f"payer sn {txinfo.txsn_payer}, expected {payer.next_txsn}")
    need = txinfo.amount + txinfo.fee
    if ledger.spendable(txinfo.payer) < need:
        _fail("balance", f"spendable {ledger.spendable(txinfo.payer)} < {need}")
    if txinfo.id in ledger.exposure or txinfo.id in ledger.guaranteed:
        _fail("txsn", "TxInfo already in flight")
    tip = ledger.record_chains[shard].height
    expectation = BlockExpectation(shard, tip + 1, tip + 1 + ledger.params.expectation_window)
    ledger.accept_txinfo(txinfo.id, txinfo.payer, txinfo.payee, need,
                         txinfo.txsn_payer, txinfo.txsn_payee, shard, expectation.height_max)
    guar_sn = ledger.issue_guarsn(guarantor.address)
    return make_pg1(guarantor, txinfo, guar_sn, expectation)


def candidate_rank(pg1: PreGuarantee1, ledger: LedgerState) -> int | None:
    """Position of the pg1's guarantor in the priority list of the group that
    was in force when it was issued, or None if it was not a member."""
    epoch = issue_epoch(pg1, ledger)
    roster = ledger.roster_at(epoch, pg1.expectation.shard)
    if pg1.guarantor not in roster:
        return None
    return elect_guarantor(roster, pg1.txinfo.id).index(pg1.guarantor)


def issue_epoch(pg1: PreGuarantee1, ledger: LedgerState) -> int:
    return pg1.expectation.height_min // ledger.params.blocks_per_epoch


def payer_counter_sign(
    payer: KeyPair,
    pg1: PreGuarantee1,
    ledger: LedgerState,
    responded: set[Digest],
    elapsed: int | None = None,
    expected: TxInfo | None = None,
) -> PreGuarantee2:
    """Counter-sign the first acceptable PreGuarantee1 for a TxInfo.

    ``elapsed`` is the time since the TxInfo was sent; the k-th candidate of
    the priority list is acceptable only after k response timeouts.
    ``responded`` holds TxInfo ids already answered and is updated on success.
    """
    t = pg1.txinfo
    if not verify_structure(pg1) or t.payer != payer.address:
        _fail("signatures")
    if expected is not None and t != expected:
        _fail("signatures", "TxInfo differs from the one co-signed")
    if pg1.expectation.shard != assign_tx_shard(payer.address, ledger.params.shard_bits):
        _fail("shard")
    rank = candidate_rank(pg1, ledger)
    if rank is None:
        _fail("shard", "guarantor is not in the payer's group")
    if elapsed is not None and elapsed < rank * ledger.params.response_timeout:
        _fail("priority", f"candidate {rank} answered before its turn")
    if t.id in responded:
        _fail("duplicate")
    responded.add(t.id)
    return make_pg2(payer, pg1)


def group_generate_guarantee(
    roster_keys: Sequence[KeyPair], pg2: PreGuarantee2, ledger: LedgerState,
    epoch: EpochState | None = None,
) -> Guarantee:
    """Group-sign a PreGuarantee2 and lock (c + fee) * collateral_ratio of the
    guarantor's deposit.

    ``roster_keys`` are the keys of the current group responsible for the
    guarantor's account shard; ``epoch`` defaults to the ledger's current one.
    """
    epoch = epoch or ledger.epoch
    if not verify_structure(pg2):
        _fail("signatures")
    pg1 = pg2.pg1
    g_addr = pg1.guarantor
    shard = ledger.shard_of_account(g_addr)
    roster = list(epoch.rosters[shard])
    if sorted(k.address for k in roster_keys) != sorted(roster):
        _fail("group", "signers are not the guarantor's current group")
    if pg1.expectation.shard != ledger.shard_of_account(pg1.txinfo.payer):
        _fail("priority", "expectation names the wrong shard")
    if candidate_rank(pg1, ledger) is None:
        _fail("priority", "guarantor was not a candidate of the payer's group")
    if pg1.txinfo.id in ledger.guaranteed:
        _fail("duplicate", "TxInfo already guaranteed")
    if not ledger.guarsn_valid(g_addr, pg1.guar_sn):
        _fail("guarsn")
    lock = ledger.params.lock_amount(pg1.txinfo.amount, pg1.txinfo.fee)
    if ledger.account(g_addr).available_deposit < lock:
        _fail("deposit", f"available {ledger.account(g_addr).available_deposit} < {lock}")
    g = make_guarantee(list(roster_keys), pg2, epoch.index, shard, roster)
    try:
        ledger.register_guarantee(g, lock)
    except InsufficientCapacity as e:
        _fail("deposit", str(e))
    return g


def payee_verify(payee: Address, guarantee: Guarantee, ledger: LedgerState,
                 expected: TxInfo | None = None) -> bool:
    """Accept iff the chain verifies, names this payee, matches what the payee
    co-signed, and carries a fresh signature of the guarantor's group."""
    if not verify_structure(guarantee):
        return False
    t = guarantee.txinfo
    if t.payee != payee or (expected is not None and t != expected):
        return False
    if candidate_rank(guarantee.pg1, ledger) is None:
        return False
    return ledger.gsig_is_current(guarantee)


def handle_withdrawal_request(
    roster_keys: Sequence[KeyPair], request: WithdrawalRequest, ledger: LedgerState, shard: int
) -> WithdrawalCheck:
    """Deduct the requested tokens at once and emit a group-signed check."""
    if not verify_structure(request):
        _fail("signatures")
    acct = ledger.accounts.get(request.addr)
    if acct is None:
        _fail("unknown_party")
    if ledger.shard_of_account(request.addr) != shard:
        _fail("shard")
    if request.addr in ledger.escrow or acct.withdrawal_locked:
        _fail("pending")
    if ledger.withdrawable(request.addr) < request.token:
        _fail("balance", f"withdrawable {ledger.withdrawable(request.addr)} < {request.token}")
    roster = list(ledger.roster_at(ledger.epoch.index, shard))
    ledger.deduct_withdrawal(request.addr, request.token)
    return make_withdrawal_check(list(roster_keys), request, ledger.epoch.index, shard, roster)


def file_arbitration(claimant: Address, guarantee: Guarantee, ledger: LedgerState) -> ArbitrationRecord:
    """Claim compensation for a guarantee missing from its expected blocks.

    Succeeds only once the payer shard has grown past the expectation window
    and no block inside the window holds the guarantee.
    """
    if not verify_structure(guarantee) or not ledger.gsig_is_current(guarantee):
        _fail("signatures")
    t = guarantee.txinfo
    if claimant != t.payee:
        _fail("claimant")
    if t.id in ledger.arbitrated:
        _fail("duplicate")
    exp = guarantee.expectation
    chain = ledger.record_chains[exp.shard]
    if chain.height <= exp.height_max:
        _fail("window_open", f"payer shard at {chain.height}, window ends {exp.height_max}")
    if ledger.is_recorded_in_window(guarantee):
        _fail("recorded")
    return ArbitrationRecord(
        guarantee=guarantee,
        claimant=claimant,
        compensation=ledger.params.compensation(t.amount),
        punishment=ledger.params.punishment(t.amount),
    )


def epoch_ready(ledger: LedgerState) -> bool:
    n = ledger.params.blocks_per_epoch
    end = (ledger.epoch.index + 1) * n - 1
    return all(c.height == end for c in ledger.record_chains.values())


def epoch_tick(ledger: LedgerState, now: int = 0) -> EpochState:
    """Derive the next epoch from the end blocks of every shard and install it."""
    if not epoch_ready(ledger):
        raise ProtocolFailure("epoch", "not every shard has produced its end block")
    end_blocks = [ledger.record_chains[s].blocks[-1].hash for s in sorted(ledger.record_chains)]
    gh = compute_global_hash(end_blocks, ledger.params.shard_bits)
    nxt = derive_epoch(ledger.epoch.index + 1, gh, ledger.active_guarantors(),
                       ledger.params.shard_bits, started_at=now)
    ledger.advance_epoch(nxt)
    return nxt


# -- node state machines --------------------------------------------------

@dataclass
class Outstanding:
    txinfo: TxInfo
    sent_at: int
    tag: str


class Node:
    node_id: str

    def handle(self, kind: str, payload, world: "World") -> None:
        getattr(self, "on_" + kind)(payload, world)


@dataclass
class PaymentIntent:
    payee: Address
    amount: int
    fee: int
    tag: str = "background"


@dataclass
class WithdrawalIntent:
    token: int
    tag: str = "background"


class ClientNode(Node):
    """Payer, payee and withdrawing party. One own payment in flight at a time."""

    PAYMENT_TIMEOUT = 10_000

    def __init__(self, keys: KeyPair) -> None:
        self.keys = keys
        self.addr = keys.address
        self.node_id = f"client:{self.addr.hex()}"
        self.queue: list[PaymentIntent] = []
        self.busy: Digest | None = None
        self.outstanding: dict[Digest, Outstanding] = {}
        self.responded: set[Digest] = set()
        self.cosigned: dict[Digest, TxInfo] = {}
        self.next_payee_sn = 0
        self.accepted: dict[Digest, Guarantee] = {}
        self.claimed: set[Digest] = set()
        self.last_txinfo: TxInfo | None = None

    # payer side

    def on_pay(self, intent: PaymentIntent, world: "World") -> None:
        if self.busy is not None:
            self.queue.append(intent)
            return
        self.start_payment(intent, world)

    def allocate_payee_sn(self) -> int:
        sn = self.next_payee_sn
        self.next_payee_sn += 1
        return sn

    def start_payment(self, intent: PaymentIntent, world: "World", txinfo: TxInfo | None = None) -> None:
        if txinfo is None:
            payee_node = world.client(intent.payee)
            txinfo = world.assemble(self, payee_node, intent.amount, intent.fee)
        self.last_txinfo = txinfo
        self.busy = txinfo.id
        self.outstanding[txinfo.id] = Outstanding(txinfo, world.now, intent.tag)
        world.metrics.tx_created(txinfo, world.now, intent.tag)
        shard = assign_tx_shard(self.addr, world.params.shard_bits)
        world.send(self.node_id, f"group:{shard}", "txinfo", txinfo)
        world.timer(self.PAYMENT_TIMEOUT, self.node_id, "payment_timeout", txinfo.id)

    def _finish(self, txid: Digest, world: "World") -> None:
        if self.busy == txid:
            self.busy = None
            if self.queue:
                self.start_payment(self.queue.pop(0), world)

    def on_payment_timeout(self, txid: Digest, world: "World") -> None:
        self._finish(txid, world)

    def on_pg1(self, pg1: PreGuarantee1, world: "World") -> None:
        out = self.outstanding.get(pg1.txinfo.id)
        try:
            if out is None:
                _fail("signatures", "unknown TxInfo")
            pg2 = payer_counter_sign(self.keys, pg1, world.ledger, self.responded,
                                     elapsed=world.now - out.sent_at, expected=out.txinfo)
        except ProtocolFailure as e:
            world.metrics.event("pg1_refused", pg1.txinfo.id, guard=e.guard)
            return
        world.metrics.tx_candidate(pg1.txinfo.id, pg1.guarantor, candidate_rank(pg1, world.ledger))
        world.send(self.node_id, f"guarantor:{pg1.guarantor.hex()}", "pg2", pg2)

    def on_txfail(self, info: tuple[Digest, str], world: "World") -> None:
        txid, guard = info
        world.metrics.tx_failed(txid, guard)
        self._finish(txid, world)

    def on_guarantee(self, g: Guarantee, world: "World") -> None:
        txid = g.txinfo.id
        if txid not in self.outstanding:
            return
        world.send(self.node_id, f"client:{g.txinfo.payee.hex()}", "payment", g)
        self._finish(txid, world)

    # payee side

    def on_payment(self, g: Guarantee, world: "World") -> None:
        txid = g.txinfo.id
        if txid in self.accepted:
            return
        if not payee_verify(self.addr, g, world.ledger, expected=self.cosigned.get(txid)):
            world.metrics.tx_rejected(txid, world.now)
            return
        self.accepted[txid] = g
        world.metrics.tx_accepted(txid, world.now)
        receipt = world.make_receipt(self, g)
        shard = assign_tx_shard(self.addr, world.params.shard_bits)
        world.send(self.node_id, f"group:{shard}", "record", receipt)

    def on_check_window(self, txid: Digest, world: "World") -> None:
        g = self.accepted.get(txid)
        if g is None or txid in self.claimed:
            return
        try:
            record = file_arbitration(self.addr, g, world.ledger)
        except ProtocolFailure as e:
            world.metrics.arbitration(txid, "FAILURE", guard=e.guard)
            return
        self.claimed.add(txid)
        world.submit_claim(record)

    # withdrawals

    def on_withdraw(self, intent: WithdrawalIntent, world: "World") -> None:
        request = world.make_withdrawal_request(self, intent.token)
        world.metrics.withdrawal(self.addr, "requested", intent.token, world.now, intent.tag)
        shard = assign_tx_shard(self.addr, world.params.shard_bits)
        world.send(self.node_id, f"group:{shard}", "withdrawal_request", request)

    def on_withdrawal_failed(self, guard: str, world: "World") -> None:
        world.metrics.withdrawal(self.addr, "failed:" + guard, 0, world.now)

    def on_certificate(self, cert, world: "World") -> None:
        self.submit_certificate(cert, world)

    def submit_certificate(self, cert, world: "World") -> None:
        world.redeem(self, cert)

    def on_submit_cert(self, cert, world: "World") -> None:
        world.redeem(self, cert)


class GuarantorNode(Node):
    def __init__(self, keys: KeyPair) -> None:
        self.keys = keys
        self.addr = keys.address
        self.node_id = f"guarantor:{self.addr.hex()}"

    def on_txinfo(self, txinfo: TxInfo, world: "World") -> None:
        shard = world.ledger.shard_of_account(txinfo.payer)
        group = world.nodes[f"group:{shard}"]
        try:
            pg1 = verify_txinfo(self.keys, txinfo, world.ledger)
        except ProtocolFailure as e:
            group.note_response(txinfo.id, ok=False)
            world.send(self.node_id, f"client:{txinfo.payer.hex()}", "txfail", (txinfo.id, e.guard))
            return
        group.note_response(txinfo.id, ok=True)
        world.send(self.node_id, f"client:{txinfo.payer.hex()}", "pg1", pg1)

    def on_pg2(self, pg2: PreGuarantee2, world: "World") -> None:
        shard = world.ledger.shard_of_account(self.addr)
        world.send(self.node_id, f"group:{shard}", "pg2", pg2)


@dataclass
class _Election:
    txinfo: TxInfo
    candidates: list[Address]
    settled: bool = False


class GroupNode(Node):
    """The consensus group of one shard. Intra-group agreement is abstracted:
    the group acts as one node and signs with every current member's key."""

    def __init__(self, shard: int) -> None:
        self.shard = shard
        self.node_id = f"group:{shard}"
        self.pending: list = []
        self.elections: dict[Digest, _Election] = {}

    def signers(self, world: "World", epoch: EpochState | None = None) -> list[KeyPair]:
        epoch = epoch or world.ledger.epoch
        return [world.keys[a] for a in epoch.rosters[self.shard]]

    def on_txinfo(self, txinfo: TxInfo, world: "World") -> None:
        txid = txinfo.id
        if world.ledger.shard_of_account(txinfo.payer) != self.shard:
            world.send(self.node_id, f"client:{txinfo.payer.hex()}", "txfail", (txid, "shard"))
            return
        candidates = elect_guarantor(world.ledger.epoch.rosters[self.shard], txid)
        self.elections[txid] = _Election(txinfo, candidates)
        for rank in range(len(candidates)):
            world.timer(rank * world.params.response_timeout, self.node_id, "candidate",
                        (txid, rank))

    def on_candidate(self, item: tuple[Digest, int], world: "World") -> None:
        txid, rank = item
        el = self.elections.get(txid)
        if el is None or el.settled:
            return
        world.timer(0, f"guarantor:{el.candidates[rank].hex()}", "txinfo", el.txinfo)

    def note_response(self, txid: Digest, ok: bool) -> None:
        el = self.elections.get(txid)
        if el is not None:
            el.settled = True

    def on_pg2(self, pg2: PreGuarantee2, world: "World") -> None:
        self.generate(pg2, world, self.signers(world), world.ledger.epoch)

    def generate(self, pg2: PreGuarantee2, world: "World", keys, epoch: EpochState) -> None:
        payer = pg2.pg1.txinfo.payer
        try:
            g = group_generate_guarantee(keys, pg2, world.ledger, epoch)
        except ProtocolFailure as e:
            world.send(self.node_id, f"client:{payer.hex()}", "txfail", (pg2.pg1.txinfo.id, e.guard))
            return
        self.emit_guarantee(g, world)

    def emit_guarantee(self, g: Guarantee, world: "World") -> None:
        payer = g.txinfo.payer
        world.send(self.node_id, f"client:{payer.hex()}", "guarantee", g)
        world.send(self.node_id, f"group:{world.ledger.shard_of_account(payer)}", "record", g)

    def on_record(self, record, world: "World") -> None:
        self.pending.append(record)

    def block_records(self, world: "World") -> list:
        return list(self.pending)

    def prune(self, world: "World") -> None:
        led = world.ledger
        height = led.record_chains[self.shard].height
        keep = []
        for rec in self.pending:
            if isinstance(rec, Guarantee):
                tid = rec.txinfo.id
                if tid in led.recorded or rec.expectation.height_max <= height:
                    continue
            else:
                if rec.guarantee.txinfo.id in led.receipts:
                    continue
            keep.append(rec)
        self.pending = keep

    def on_withdrawal_request(self, request: WithdrawalRequest, world: "World") -> None:
        try:
            check = handle_withdrawal_request(self.signers(world), request, world.ledger, self.shard)
        except ProtocolFailure as e:
            world.send(self.node_id, f"client:{request.addr.hex()}", "withdrawal_failed", e.guard)
            return
        world.send(self.node_id, "tee", "check", check)


class TeeNode(Node):
    AUDIT_DELAY = 5

    def __init__(self, tee) -> None:
        self.tee = tee
        self.node_id = "tee"

    def on_check(self, check: WithdrawalCheck, world: "World") -> None:
        from .tee import TeeRejection

        try:
            self.tee.tee_submit_check(check, world.now)
        except TeeRejection as e:
            world.metrics.withdrawal(check.request.addr, f"rejected:{e}", 0, world.now)
            return
        world.timer(self.AUDIT_DELAY, self.node_id, "certify", check.request.addr)

    def on_certify(self, addr: Address, world: "World") -> None:
        cert = self.tee.tee_certify(addr, world.now)
        if cert is None:
            world.send(self.node_id, f"client:{addr.hex()}", "withdrawal_failed", "tee_rejected")
            return
        world.metrics.withdrawal(addr, "certified", cert.token, world.now)
        world.send(self.node_id, f"client:{addr.hex()}", "certificate", cert)
        world.timer(world.params.time_interval + 1, self.node_id, "expire", None)

    def on_expire(self, _unused, world: "World") -> None:
        for digest in self.tee.expire_certificates(world.now, world.chain):
            world.metrics.event("certificate_expired", digest)
