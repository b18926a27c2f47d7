"""Internal-environment state.

Every mutation goes through a journaled method, so replaying
``state.journal`` onto a fresh state rebuilds it exactly.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

from .crypto import (
    Address,
    Digest,
    GroupSignature,
    KeyPair,
    group_sign,
    group_verify,
    group_verify_strict,
    hash_digest,
    threshold,
)
from .messages import (
    Guarantee,
    PaymentReceipt,
    deserialize,
    serialize,
    verify_structure,
    _get_gsig,
    _put_gsig,
)
from .params import SecurityParams
from .sharding import EpochState, assign_tx_shard
from .wire import Reader, Writer

log = logging.getLogger(__name__)

GUARANTOR = "guarantor"
CLIENT = "client"

Record = Union[Guarantee, PaymentReceipt]


class LedgerError(ValueError):
    pass


class InsufficientCapacity(LedgerError):
    pass


class InsufficientBalance(LedgerError):
    pass


@dataclass
class Account:
    addr: Address
    kind: str
    balance: int = 0
    deposit: int = 0
    locked: int = 0
    next_txsn: int = 0
    next_guarsn: int = 0
    withdrawal_locked: bool = False
    active: bool = True
    payee_sns: set[int] = field(default_factory=set)
    used_guarsns: set[int] = field(default_factory=set)

    @property
    def available_deposit(self) -> int:
        return self.deposit - self.locked

    def to_json(self) -> dict:
        return {
            "addr": self.addr.hex(),
            "kind": self.kind,
            "balance": self.balance,
            "deposit": self.deposit,
            "locked": self.locked,
            "next_txsn": self.next_txsn,
            "next_guarsn": self.next_guarsn,
            "withdrawal_locked": self.withdrawal_locked,
            "active": self.active,
        }


# -- blocks -------------------------------------------------------------------

@dataclass(frozen=True)
class Block:
    shard: int
    height: int
    epoch: int
    prev_hash: Digest
    records: tuple[Record, ...]
    producer_gsig: GroupSignature

    def header_bytes(self) -> bytes:
        w = Writer().raw(b"Block").u64(self.shard).u64(self.height).u64(self.epoch)
        w.blob(self.prev_hash)
        w.count(len(self.records))
        for rec in self.records:
            w.blob(serialize(rec))
        return w.getvalue()

    @property
    def hash(self) -> Digest:
        return hash_digest(self.header_bytes())

    def guarantees(self) -> list[Guarantee]:
        return [r for r in self.records if isinstance(r, Guarantee)]

    def receipts(self) -> list[PaymentReceipt]:
        return [r for r in self.records if isinstance(r, PaymentReceipt)]

    def to_bytes(self) -> bytes:
        w = Writer().raw(self.header_bytes())
        _put_gsig(w, self.producer_gsig)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Block":
        r = Reader(data)
        if r._take(5) != b"Block":
            raise ValueError("not a block")
        shard, height, epoch = r.u64(), r.u64(), r.u64()
        prev = Digest(r.blob())
        records = tuple(deserialize(r.blob()) for _ in range(r.count()))
        gsig = _get_gsig(r)
        r.done()
        return cls(shard, height, epoch, prev, records, gsig)


GENESIS_PREV = Digest(bytes(32))


def block_payload(block_hash: bytes) -> bytes:
    return b"block/v1" + block_hash


@dataclass
class RecordChain:
    shard: int
    blocks: list[Block] = field(default_factory=list)

    @property
    def height(self) -> int:
        """Height of the tip, -1 when empty."""
        return len(self.blocks) - 1

    @property
    def tip_hash(self) -> Digest:
        return self.blocks[-1].hash if self.blocks else GENESIS_PREV


@dataclass(frozen=True)
class ArbitrationRecord:
    guarantee: Guarantee
    claimant: Address
    compensation: int
    punishment: int

    @property
    def txid(self) -> Digest:
        return self.guarantee.txinfo.id


@dataclass(frozen=True)
class ArbitrationBlock:
    height: int
    prev_hash: Digest
    records: tuple[ArbitrationRecord, ...]
    producer: Address

    @property
    def hash(self) -> Digest:
        w = Writer().raw(b"ArbitrationBlock").u64(self.height).blob(self.prev_hash)
        w.blob(self.producer)
        w.count(len(self.records))
        for rec in self.records:
            w.blob(serialize(rec.guarantee)).blob(rec.claimant)
            w.u64(rec.compensation).u64(rec.punishment)
        return hash_digest(w.getvalue())


# -- block construction and validation ---------------------------------------

def epoch_for_height(height: int, blocks_per_epoch: int) -> int:
    return max(height, 0) // blocks_per_epoch


def fresh_epochs(guarantee: Guarantee, blocks_per_epoch: int) -> tuple[int, int]:
    """Epochs whose group signature is acceptable for this guarantee: the one in
    force when PreGuarantee1 was issued, or the next if a boundary was crossed."""
    e = guarantee.expectation.height_min // blocks_per_epoch
    return e, e + 1


def validate_block(
    block: Block,
    roster: Sequence[Address],
    prev_hash: bytes | None = None,
    expected_height: int | None = None,
) -> bool:
    """Hash link, height, producer threshold signature and every record's structure."""
    try:
        if prev_hash is not None and block.prev_hash != prev_hash:
            return False
        if expected_height is not None and block.height != expected_height:
            return False
        if block.producer_gsig.shard != block.shard or block.producer_gsig.epoch != block.epoch:
            return False
        payload = block_payload(block.hash)
        gsig = block.producer_gsig
        if not roster or not group_verify(roster, threshold(len(roster)), payload, gsig):
            return False
        # every included member signature must verify, so stored blocks are tamper-evident
        if not group_verify_strict(payload, gsig):
            return False
        return all(verify_structure(rec) for rec in block.records)
    except (ValueError, TypeError, AttributeError):
        return False


def journaled(fn):
    @functools.wraps(fn)
    def wrapper(self, *args, **kwargs):
        top = self._depth == 0
        self._depth += 1
        try:
            result = fn(self, *args, **kwargs)
        finally:
            self._depth -= 1
        if top:
            self.journal.append((fn.__name__, args, kwargs))
        return result

    return wrapper


@dataclass
class Transfer:
    src: Address | None
    dst: Address | None
    amount: int
    reason: str


class LedgerState:
    """Accounts, shard Record Chains, the Arbitration Chain and pending bookkeeping."""

    def __init__(self, params: SecurityParams, epoch: EpochState) -> None:
        self.params = params
        self.accounts: dict[Address, Account] = {}
        self.record_chains = {s: RecordChain(s) for s in range(params.shard_count)}
        self.arbitration_chain: list[ArbitrationBlock] = []
        self.epochs: list[EpochState] = [epoch]
        # txid -> (guarantor, amount)
        self.locks: dict[Digest, tuple[Address, int]] = {}
        # txid -> (payer, amount, shard, height_max)
        self.exposure: dict[Digest, tuple[Address, int, int, int]] = {}
        self.guaranteed: dict[Digest, Guarantee] = {}
        self.recorded: dict[Digest, tuple[int, int]] = {}
        self.receipts: dict[Digest, tuple[int, int]] = {}
        self.settled: set[Digest] = set()
        self.arbitrated: set[Digest] = set()
        # addr -> (token, from_balance, from_deposit)
        self.escrow: dict[Address, tuple[int, int, int]] = {}
        # cert digest -> (addr, token, from_balance, from_deposit)
        self.certified: dict[Digest, tuple[Address, int, int, int]] = {}
        self.losses: list[dict] = []
        self.transfers: list[Transfer] = []
        self.journal: list[tuple[str, tuple, dict]] = []
        self._depth = 0

    # -- views ----------------------------------------------------------------

    @property
    def epoch(self) -> EpochState:
        return self.epochs[-1]

    def account(self, addr: bytes) -> Account:
        try:
            return self.accounts[addr]
        except KeyError:
            raise LedgerError(f"unknown account {bytes(addr).hex()}") from None

    def exposure_of(self, addr: bytes) -> int:
        return sum(amt for payer, amt, _, _ in self.exposure.values() if payer == addr)

    def spendable(self, addr: bytes) -> int:
        return self.account(addr).balance - self.exposure_of(addr)

    def active_guarantors(self) -> list[Address]:
        return sorted(a.addr for a in self.accounts.values() if a.kind == GUARANTOR and a.active)

    def roster_at(self, epoch: int, shard: int) -> tuple[Address, ...]:
        if not 0 <= epoch < len(self.epochs):
            return ()
        return self.epochs[epoch].rosters.get(shard, ())

    def shard_of_account(self, addr: bytes) -> int:
        return assign_tx_shard(addr, self.params.shard_bits)

    def is_recorded_in_window(self, guarantee: Guarantee) -> bool:
        exp = guarantee.expectation
        chain = self.record_chains.get(exp.shard)
        if chain is None:
            return False
        target = serialize(guarantee)
        for h in range(exp.height_min, min(exp.height_max, chain.height) + 1):
            if any(serialize(g) == target for g in chain.blocks[h].guarantees()):
                return True
        return False

    def gsig_is_current(self, guarantee: Guarantee) -> bool:
        """The group signature is fresh and by the historical roster of the
        guarantor's account shard."""
        gsig = guarantee.gsig
        if gsig.epoch not in fresh_epochs(guarantee, self.params.blocks_per_epoch):
            return False
        if gsig.shard != self.shard_of_account(guarantee.guarantor):
            return False
        roster = self.roster_at(gsig.epoch, gsig.shard)
        return bool(roster) and group_verify(
            roster, threshold(len(roster)), guarantee.payload(), gsig
        )

    def total_internal(self) -> int:
        return (
            sum(a.balance + a.deposit for a in self.accounts.values())
            + sum(t for t, _, _ in self.escrow.values())
            + sum(c[1] for c in self.certified.values())
        )

    # -- membership -------------------------------------------------------------

    @classmethod
    def bootstrap_from_membership(
        cls, entries: Iterable, params: SecurityParams, epoch: EpochState
    ) -> "LedgerState":
        state = cls(params, epoch)
        for e in entries:
            state.add_member(e.addr, e.kind, e.deposit)
        return state

    @journaled
    def add_member(self, addr: Address, kind: str, deposit: int) -> Account:
        if addr in self.accounts:
            raise LedgerError(f"duplicate address {addr.hex()}")
        if kind not in (GUARANTOR, CLIENT):
            raise LedgerError(f"unknown account kind {kind!r}")
        if deposit <= 0:
            raise LedgerError("deposit must be positive")
        if kind == GUARANTOR:
            acct = Account(addr, kind, deposit=deposit)
        else:
            acct = Account(addr, kind, balance=deposit)
        self.accounts[addr] = acct
        return acct

    @journaled
    def advance_epoch(self, epoch: EpochState) -> None:
        if epoch.index != self.epoch.index + 1:
            raise LedgerError(f"epoch {epoch.index} does not follow {self.epoch.index}")
        self.epochs.append(epoch)

    # -- guarantee bookkeeping ---------------------------------------------------

    @journaled
    def accept_txinfo(self, txid: Digest, payer: Address, payee: Address, amount: int,
                      txsn_payer: int, txsn_payee: int, shard: int, height_max: int) -> None:
        """Consume serial numbers and reserve the payer's exposure."""
        p, q = self.account(payer), self.account(payee)
        if txsn_payer != p.next_txsn or txsn_payee in q.payee_sns:
            raise LedgerError("serial number already used")
        if self.spendable(payer) < amount:
            raise InsufficientBalance("payer cannot cover exposure")
        p.next_txsn += 1
        q.payee_sns.add(txsn_payee)
        self.exposure[txid] = (payer, amount, shard, height_max)

    @journaled
    def issue_guarsn(self, guarantor: Address) -> int:
        acct = self.account(guarantor)
        sn = acct.next_guarsn
        acct.next_guarsn += 1
        return sn

    def guarsn_valid(self, guarantor: Address, sn: int) -> bool:
        acct = self.accounts.get(guarantor)
        return acct is not None and sn < acct.next_guarsn and sn not in acct.used_guarsns

    @journaled
    def lock_capacity(self, guarantor: Address, amount: int) -> Account:
        acct = self.account(guarantor)
        if amount < 0:
            raise LedgerError("negative lock")
        if acct.available_deposit < amount:
            raise InsufficientCapacity(
                f"available deposit {acct.available_deposit} < required {amount}"
            )
        acct.locked += amount
        return acct

    @journaled
    def register_guarantee(self, g: Guarantee, lock: int) -> None:
        """Record a group-signed guarantee and lock its collateral (at most once per TxInfo)."""
        txid = g.txinfo.id
        if txid in self.guaranteed:
            raise LedgerError("TxInfo already guaranteed")
        if not self.guarsn_valid(g.guarantor, g.pg1.guar_sn):
            raise LedgerError("invalid guarSN")
        self.lock_capacity(g.guarantor, lock)
        self.account(g.guarantor).used_guarsns.add(g.pg1.guar_sn)
        self.locks[txid] = (g.guarantor, lock)
        self.guaranteed[txid] = g

    def _release(self, txid: Digest) -> int:
        entry = self.locks.pop(txid, None)
        if entry is None:
            return 0
        g, amt = entry
        acct = self.account(g)
        acct.locked -= min(amt, acct.locked)
        return amt

    @journaled
    def unlock_on_block(self, block: Block, members: Iterable[Address] | None = None) -> dict[Address, int]:
        """Release collateral of guarantees recorded in ``block``.

        Only guarantees whose payer maps to the block's shard count, and only
        those by ``members`` when given.
        """
        roster = self.roster_at(block.epoch, block.shard)
        if not validate_block(block, roster):
            return {}
        members = set(members) if members is not None else None
        released: dict[Address, int] = {}
        for g in block.guarantees():
            if self.shard_of_account(g.txinfo.payer) != block.shard:
                continue
            if members is not None and g.guarantor not in members:
                continue
            txid = g.txinfo.id
            if txid not in self.locks:
                continue
            guarantor = self.locks[txid][0]
            released[guarantor] = released.get(guarantor, 0) + self._release(txid)
        return released

    def _credit(self, addr: Address, amount: int, reason: str, src: Address | None = None) -> None:
        if amount:
            self.account(addr).balance += amount
            self.transfers.append(Transfer(src, addr, amount, reason))

    @journaled
    def apply_settlement(self, g: Guarantee) -> dict[Address, int]:
        """Move c+fee from payer: c to payee, the fee to guarantor and signers.

        Rounding: the guarantor gets floor(fee * share); the rest is split
        evenly (floor) among the distinct gsig signers and any remainder goes
        to the guarantor.
        """
        t = g.txinfo
        txid = t.id
        if txid in self.settled:
            raise LedgerError("already settled")
        payer = self.account(t.payer)
        total = t.amount + t.fee
        if payer.balance < total:
            raise InsufficientBalance("payer balance below c + fee at settlement")
        deltas: dict[Address, int] = {}

        def add(a: Address, v: int) -> None:
            deltas[a] = deltas.get(a, 0) + v

        payer.balance -= total
        add(t.payer, -total)
        self._credit(t.payee, t.amount, "settlement", t.payer)
        add(t.payee, t.amount)
        g_cut, shares, remainder = split_fee(t.fee, self.params.fee_share_guarantor,
                                             len(set(g.gsig.signers)))
        self._credit(g.guarantor, g_cut + remainder, "fee", t.payer)
        add(g.guarantor, g_cut + remainder)
        for signer in sorted(set(g.gsig.signers)):
            self._credit(signer, shares, "fee", t.payer)
            add(signer, shares)
        self.exposure.pop(txid, None)
        self.settled.add(txid)
        return deltas

    # -- record chains ------------------------------------------------------------

    @journaled
    def append_block(self, block: Block) -> dict:
        chain = self.record_chains[block.shard]
        expected_epoch = epoch_for_height(block.height, self.params.blocks_per_epoch)
        roster = self.roster_at(block.epoch, block.shard)
        if block.epoch != expected_epoch or block.epoch != self.epoch.index:
            raise LedgerError(f"block epoch {block.epoch} != current {self.epoch.index}")
        if not validate_block(block, roster, chain.tip_hash, chain.height + 1):
            raise LedgerError(f"invalid block at shard {block.shard} height {block.height}")
        chain.blocks.append(block)
        for g in block.guarantees():
            self.recorded[g.txinfo.id] = (block.shard, block.height)
        for r in block.receipts():
            self.receipts.setdefault(r.guarantee.txinfo.id, (block.shard, block.height))
        unlocked = self.unlock_on_block(block)
        settled = []
        for txid in sorted(set(self.recorded) & set(self.receipts) - self.settled):
            self.apply_settlement(self.guaranteed.get(txid) or self._recorded_guarantee(txid))
            settled.append(txid)
        # release exposure whose window closed on this shard without a record
        for txid, (payer, amt, shard, hmax) in sorted(self.exposure.items()):
            if shard == block.shard and hmax < block.height and txid not in self.recorded:
                del self.exposure[txid]
        return {"unlocked": unlocked, "settled": settled}

    def _recorded_guarantee(self, txid: Digest) -> Guarantee:
        shard, height = self.recorded[txid]
        for g in self.record_chains[shard].blocks[height].guarantees():
            if g.txinfo.id == txid:
                return g
        raise LedgerError("recorded guarantee missing")

    # -- arbitration --------------------------------------------------------------

    @journaled
    def record_arbitration_block(
        self, records: Sequence[ArbitrationRecord], producer: Address
    ) -> ArbitrationBlock:
        prev = self.arbitration_chain[-1].hash if self.arbitration_chain else GENESIS_PREV
        block = ArbitrationBlock(len(self.arbitration_chain), prev, tuple(records), producer)
        for rec in records:
            self._punish(rec, producer)
        self.arbitration_chain.append(block)
        return block

    def _punish(self, rec: ArbitrationRecord, producer: Address) -> None:
        txid = rec.txid
        if txid in self.arbitrated:
            raise LedgerError("already arbitrated")
        self._release(txid)
        g = self.account(rec.guarantee.guarantor)
        for dst, amount, reason in (
            (rec.claimant, rec.compensation, "compensation"),
            (producer, rec.punishment, "punishment"),
        ):
            from_deposit = min(g.deposit, amount)
            g.deposit -= from_deposit
            from_balance = min(g.balance, amount - from_deposit)
            g.balance -= from_balance
            paid = from_deposit + from_balance
            self._credit(dst, paid, reason, g.addr)
            if paid < amount:
                self.losses.append({"txid": txid.hex(), "to": dst.hex(), "owed": amount,
                                    "paid": paid, "reason": reason})
                log.warning("arbitration shortfall %s: paid %d of %d", reason, paid, amount)
        if g.locked > g.deposit:
            self.losses.append({"txid": txid.hex(), "uncovered_lock": g.locked - g.deposit})
            g.locked = g.deposit
        self.exposure.pop(txid, None)
        self.arbitrated.add(txid)

    # -- withdrawals ----------------------------------------------------------------

    def withdrawable(self, addr: Address) -> int:
        acct = self.account(addr)
        spendable = acct.balance - self.exposure_of(addr)
        if acct.kind == GUARANTOR:
            return spendable + acct.available_deposit
        return spendable

    @journaled
    def deduct_withdrawal(self, addr: Address, token: int) -> None:
        acct = self.account(addr)
        if addr in self.escrow:
            raise LedgerError("withdrawal already pending")
        if token <= 0 or self.withdrawable(addr) < token:
            raise InsufficientBalance(f"cannot withdraw {token}")
        from_balance = min(token, max(acct.balance - self.exposure_of(addr), 0))
        from_deposit = token - from_balance
        acct.balance -= from_balance
        acct.deposit -= from_deposit
        self.escrow[addr] = (token, from_balance, from_deposit)

    def escrowed(self, addr: Address) -> int | None:
        e = self.escrow.get(addr)
        return e[0] if e else None

    @journaled
    def set_withdrawal_lock(self, addr: Address, locked: bool) -> None:
        self.account(addr).withdrawal_locked = locked

    @journaled
    def restore_withdrawal(self, addr: Address) -> int:
        token, from_balance, from_deposit = self.escrow.pop(addr)
        acct = self.account(addr)
        acct.balance += from_balance
        acct.deposit += from_deposit
        return token

    @journaled
    def certify_withdrawal(self, addr: Address, cert_digest: Digest) -> None:
        token, from_balance, from_deposit = self.escrow.pop(addr)
        self.certified[cert_digest] = (addr, token, from_balance, from_deposit)

    @journaled
    def finalize_withdrawal(self, cert_digest: Digest) -> None:
        addr, _, _, _ = self.certified.pop(cert_digest)
        acct = self.account(addr)
        if acct.kind == GUARANTOR and acct.deposit == 0 and acct.locked == 0:
            acct.active = False

    @journaled
    def expire_certificate(self, cert_digest: Digest) -> None:
        addr, _, from_balance, from_deposit = self.certified.pop(cert_digest)
        acct = self.account(addr)
        acct.balance += from_balance
        acct.deposit += from_deposit

    # -- replay / export -------------------------------------------------------------

    def replay(self) -> "LedgerState":
        fresh = LedgerState(self.params, self.epochs[0])
        for name, args, kwargs in self.journal:
            getattr(fresh, name)(*args, **kwargs)
        return fresh

    def snapshot(self) -> dict:
        return {
            "epoch": self.epoch.index,
            "accounts": [self.accounts[a].to_json() for a in sorted(self.accounts)],
            "chain_heads": {
                str(s): {"height": c.height, "tip": c.tip_hash.hex()}
                for s, c in sorted(self.record_chains.items())
            },
            "arbitration_height": len(self.arbitration_chain) - 1,
            "escrow": {a.hex(): e[0] for a, e in sorted(self.escrow.items())},
            "certified": {d.hex(): [c[0].hex(), c[1]] for d, c in sorted(self.certified.items())},
            "locks": {t.hex(): [g.hex(), a] for t, (g, a) in sorted(self.locks.items())},
            "losses": self.losses,
        }


def split_fee(fee: int, share, n_signers: int) -> tuple[int, int, int]:
    """(guarantor cut, per-signer share, remainder to guarantor)."""
    g_cut = int(fee * share)
    pool = fee - g_cut
    if n_signers <= 0:
        return g_cut, 0, pool
    return g_cut, pool // n_signers, pool % n_signers


def produce_block(
    state: LedgerState,
    shard: int,
    pending: Sequence[Record],
    signers: Sequence[KeyPair],
) -> Block:
    """Build the next block of ``shard`` from ``pending`` and sign it.

    Guarantees are included when structurally valid, not yet recorded, signed
    by a fresh group of the guarantor's shard, and their expectation window
    covers the new height; receipts when their payee maps to this shard and
    their guarantee is not yet receipted.
    """
    chain = state.record_chains[shard]
    height = chain.height + 1
    epoch = state.epoch.index
    chosen: list[Record] = []
    seen: set[Digest] = set()
    for rec in pending:
        if not verify_structure(rec):
            continue
        if isinstance(rec, Guarantee):
            t = rec.txinfo
            if (
                t.id in seen
                or t.id in state.recorded
                or state.shard_of_account(t.payer) != shard
                or rec.expectation.shard != shard
                or not rec.expectation.covers(height)
                or not state.gsig_is_current(rec)
                or state.account(t.payer).balance < t.amount + t.fee
            ):
                continue
        else:
            t = rec.guarantee.txinfo
            if (
                t.id in seen
                or t.id in state.receipts
                or state.shard_of_account(t.payee) != shard
            ):
                continue
        seen.add(t.id)
        chosen.append(rec)
    roster = state.roster_at(epoch, shard)
    unsigned = Block(shard, height, epoch, chain.tip_hash, tuple(chosen),
                     GroupSignature(epoch, shard, (), ()))
    gsig = group_sign(list(signers), block_payload(unsigned.hash), epoch=epoch, shard=shard,
                      roster_addrs=roster)
    return Block(shard, height, epoch, chain.tip_hash, tuple(chosen), gsig)


def append_arbitration_block(
    state: LedgerState, records: Sequence[ArbitrationRecord], guarantors: Sequence[Address], rng
) -> ArbitrationBlock:
    """Mine the next Arbitration Chain block; the producer wins a uniform lottery
    among ``guarantors`` (a stand-in for proof of work) and receives the
    punishment share of every record."""
    if not guarantors:
        raise LedgerError("no guarantor can mine the arbitration block")
    pool = sorted(guarantors)
    producer = pool[rng.below(len(pool))]
    return state.record_arbitration_block(list(records), producer)
