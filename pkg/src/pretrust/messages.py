"""Signed messages of the guarantee handshake and the withdrawal flow.

The guarantee chain nests: TxInfo -> PreGuarantee1 -> PreGuarantee2 ->
Guarantee. Each layer signs the canonical encoding of the layer below plus
its own fields, so validating the outermost message validates everything.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from .crypto import (
    Address,
    Digest,
    GroupSignature,
    KeyPair,
    Signature,
    group_sign,
    group_verify_strict,
    hash_digest,
    sign,
    verify_by,
)
from .wire import DecodeError, Reader, Writer


# -- shared field codecs ----------------------------------------------------

def _put_sig(w: Writer, s: Signature) -> None:
    w.blob(s.pk).blob(s.sig)


def _get_sig(r: Reader) -> Signature:
    return Signature(pk=r.blob(), sig=r.blob())


def _put_gsig(w: Writer, g: GroupSignature) -> None:
    w.u64(g.epoch).u64(g.shard)
    w.count(len(g.roster))
    for a in g.roster:
        w.blob(a)
    w.count(len(g.member_sigs))
    for s in g.member_sigs:
        _put_sig(w, s)


def _get_gsig(r: Reader) -> GroupSignature:
    epoch, shard = r.u64(), r.u64()
    roster = tuple(Address(r.blob()) for _ in range(r.count()))
    sigs = tuple(_get_sig(r) for _ in range(r.count()))
    return GroupSignature(epoch=epoch, shard=shard, roster=roster, member_sigs=sigs)


# -- guarantee chain --------------------------------------------------------

@dataclass(frozen=True)
class TxInfo:
    payer: Address
    payee: Address
    amount: int
    fee: int
    txsn_payer: int
    txsn_payee: int
    sig_payer: Signature
    sig_payee: Signature

    @property
    def id(self) -> Digest:
        return hash_digest(self.sig_payer.sig + self.sig_payee.sig)

    def m1(self) -> bytes:
        return Writer().blob(self.payer).blob(self.payee).u64(self.amount).getvalue()

    def m2(self) -> bytes:
        return Writer().u64(self.txsn_payer).u64(self.fee).getvalue()

    def m3(self) -> bytes:
        return Writer().u64(self.txsn_payee).getvalue()

    def payer_payload(self) -> bytes:
        return b"TxInfo/payer" + self.m1() + self.m2()

    def payee_payload(self) -> bytes:
        return b"TxInfo/payee" + self.m1() + self.m3()

    def encode(self, w: Writer) -> None:
        w.blob(self.payer).blob(self.payee).u64(self.amount).u64(self.fee)
        w.u64(self.txsn_payer).u64(self.txsn_payee)
        _put_sig(w, self.sig_payer)
        _put_sig(w, self.sig_payee)

    @classmethod
    def decode(cls, r: Reader) -> "TxInfo":
        return cls(
            payer=Address(r.blob()),
            payee=Address(r.blob()),
            amount=r.u64(),
            fee=r.u64(),
            txsn_payer=r.u64(),
            txsn_payee=r.u64(),
            sig_payer=_get_sig(r),
            sig_payee=_get_sig(r),
        )


@dataclass(frozen=True)
class BlockExpectation:
    """Heights of the payer-shard Record Chain where the guarantee must land."""

    shard: int
    height_min: int
    height_max: int

    def covers(self, height: int) -> bool:
        return self.height_min <= height <= self.height_max

    def encode(self, w: Writer) -> None:
        w.u64(self.shard).u64(self.height_min).u64(self.height_max)

    @classmethod
    def decode(cls, r: Reader) -> "BlockExpectation":
        return cls(shard=r.u64(), height_min=r.u64(), height_max=r.u64())


@dataclass(frozen=True)
class PreGuarantee1:
    txinfo: TxInfo
    guar_sn: int
    expectation: BlockExpectation
    guarantor: Address
    sig_guarantor: Signature

    def payload(self) -> bytes:
        w = Writer().raw(b"PreGuarantee1")
        self.txinfo.encode(w)
        w.u64(self.guar_sn)
        self.expectation.encode(w)
        w.blob(self.guarantor)
        return w.getvalue()

    def encode(self, w: Writer) -> None:
        self.txinfo.encode(w)
        w.u64(self.guar_sn)
        self.expectation.encode(w)
        w.blob(self.guarantor)
        _put_sig(w, self.sig_guarantor)

    @classmethod
    def decode(cls, r: Reader) -> "PreGuarantee1":
        return cls(
            txinfo=TxInfo.decode(r),
            guar_sn=r.u64(),
            expectation=BlockExpectation.decode(r),
            guarantor=Address(r.blob()),
            sig_guarantor=_get_sig(r),
        )


@dataclass(frozen=True)
class PreGuarantee2:
    pg1: PreGuarantee1
    sig_payer: Signature

    def payload(self) -> bytes:
        w = Writer().raw(b"PreGuarantee2")
        self.pg1.encode(w)
        return w.getvalue()

    def encode(self, w: Writer) -> None:
        self.pg1.encode(w)
        _put_sig(w, self.sig_payer)

    @classmethod
    def decode(cls, r: Reader) -> "PreGuarantee2":
        return cls(pg1=PreGuarantee1.decode(r), sig_payer=_get_sig(r))


@dataclass(frozen=True)
class Guarantee:
    pg2: PreGuarantee2
    gsig: GroupSignature

    @property
    def txinfo(self) -> TxInfo:
        return self.pg2.pg1.txinfo

    @property
    def pg1(self) -> PreGuarantee1:
        return self.pg2.pg1

    @property
    def guarantor(self) -> Address:
        return self.pg2.pg1.guarantor

    @property
    def expectation(self) -> BlockExpectation:
        return self.pg2.pg1.expectation

    def payload(self) -> bytes:
        w = Writer().raw(b"Guarantee")
        self.pg2.encode(w)
        return w.getvalue()

    def encode(self, w: Writer) -> None:
        self.pg2.encode(w)
        _put_gsig(w, self.gsig)

    @classmethod
    def decode(cls, r: Reader) -> "Guarantee":
        return cls(pg2=PreGuarantee2.decode(r), gsig=_get_gsig(r))


@dataclass(frozen=True)
class PaymentReceipt:
    """The payee's countersigned broadcast of an accepted Guarantee."""

    guarantee: Guarantee
    sig_payee: Signature

    def payload(self) -> bytes:
        w = Writer().raw(b"PaymentReceipt")
        self.guarantee.encode(w)
        return w.getvalue()

    def encode(self, w: Writer) -> None:
        self.guarantee.encode(w)
        _put_sig(w, self.sig_payee)

    @classmethod
    def decode(cls, r: Reader) -> "PaymentReceipt":
        return cls(guarantee=Guarantee.decode(r), sig_payee=_get_sig(r))


# -- withdrawal ---------------------------------------------------------------

@dataclass(frozen=True)
class WithdrawalRequest:
    addr: Address
    token: int
    sig: Signature

    def payload(self) -> bytes:
        return Writer().raw(b"WithdrawalRequest").blob(self.addr).u64(self.token).getvalue()

    def encode(self, w: Writer) -> None:
        w.blob(self.addr).u64(self.token)
        _put_sig(w, self.sig)

    @classmethod
    def decode(cls, r: Reader) -> "WithdrawalRequest":
        return cls(addr=Address(r.blob()), token=r.u64(), sig=_get_sig(r))


@dataclass(frozen=True)
class WithdrawalCheck:
    request: WithdrawalRequest
    gsig: GroupSignature

    def payload(self) -> bytes:
        w = Writer().raw(b"WithdrawalCheck")
        self.request.encode(w)
        return w.getvalue()

    def encode(self, w: Writer) -> None:
        self.request.encode(w)
        _put_gsig(w, self.gsig)

    @classmethod
    def decode(cls, r: Reader) -> "WithdrawalCheck":
        return cls(request=WithdrawalRequest.decode(r), gsig=_get_gsig(r))


@dataclass(frozen=True)
class WithdrawalCertification:
    time: int
    addr: Address
    token: int
    sig_tee: Signature

    def payload(self) -> bytes:
        return (
            Writer().raw(b"WithdrawalCertification")
            .u64(self.time).blob(self.addr).u64(self.token)
            .getvalue()
        )

    @property
    def digest(self) -> Digest:
        return hash_digest(serialize(self))

    def encode(self, w: Writer) -> None:
        w.u64(self.time).blob(self.addr).u64(self.token)
        _put_sig(w, self.sig_tee)

    @classmethod
    def decode(cls, r: Reader) -> "WithdrawalCertification":
        return cls(time=r.u64(), addr=Address(r.blob()), token=r.u64(), sig_tee=_get_sig(r))


Message = Union[
    TxInfo,
    PreGuarantee1,
    PreGuarantee2,
    Guarantee,
    PaymentReceipt,
    WithdrawalRequest,
    WithdrawalCheck,
    WithdrawalCertification,
]

_TAGS: dict[type, int] = {
    TxInfo: 1,
    PreGuarantee1: 2,
    PreGuarantee2: 3,
    Guarantee: 4,
    PaymentReceipt: 5,
    WithdrawalRequest: 6,
    WithdrawalCheck: 7,
    WithdrawalCertification: 8,
}
_TYPES = {tag: cls for cls, tag in _TAGS.items()}


def serialize(msg: Message) -> bytes:
    w = Writer().raw(bytes([_TAGS[type(msg)]]))
    msg.encode(w)
    return w.getvalue()


def deserialize(data: bytes) -> Message:
    r = Reader(data)
    tag = r.u8()
    if tag not in _TYPES:
        raise DecodeError(f"unknown message tag {tag}")
    msg = _TYPES[tag].decode(r)
    r.done()
    return msg


# -- construction -------------------------------------------------------------

def assemble_txinfo(
    payer: KeyPair,
    payee: KeyPair,
    amount: int,
    fee: int,
    txsn_payer: int,
    txsn_payee: int,
) -> TxInfo:
    if amount <= 0:
        raise ValueError(f"amount must be positive, got {amount}")
    if fee < 0:
        raise ValueError(f"fee must be non-negative, got {fee}")
    draft = TxInfo(
        payer=payer.address,
        payee=payee.address,
        amount=amount,
        fee=fee,
        txsn_payer=txsn_payer,
        txsn_payee=txsn_payee,
        sig_payer=Signature(b"", b""),
        sig_payee=Signature(b"", b""),
    )
    return TxInfo(
        payer=draft.payer,
        payee=draft.payee,
        amount=amount,
        fee=fee,
        txsn_payer=txsn_payer,
        txsn_payee=txsn_payee,
        sig_payer=sign(payer, draft.payer_payload()),
        sig_payee=sign(payee, draft.payee_payload()),
    )


def make_pg1(
    guarantor: KeyPair, txinfo: TxInfo, guar_sn: int, expectation: BlockExpectation
) -> PreGuarantee1:
    draft = PreGuarantee1(txinfo, guar_sn, expectation, guarantor.address, Signature(b"", b""))
    return PreGuarantee1(
        txinfo, guar_sn, expectation, guarantor.address, sign(guarantor, draft.payload())
    )


def make_pg2(payer: KeyPair, pg1: PreGuarantee1) -> PreGuarantee2:
    draft = PreGuarantee2(pg1, Signature(b"", b""))
    return PreGuarantee2(pg1, sign(payer, draft.payload()))


def make_guarantee(
    signers: list[KeyPair], pg2: PreGuarantee2, epoch: int, shard: int, roster: list[Address]
) -> Guarantee:
    draft = Guarantee(pg2, GroupSignature(epoch, shard, (), ()))
    gsig = group_sign(signers, draft.payload(), epoch=epoch, shard=shard, roster_addrs=roster)
    return Guarantee(pg2, gsig)


def make_receipt(payee: KeyPair, guarantee: Guarantee) -> PaymentReceipt:
    draft = PaymentReceipt(guarantee, Signature(b"", b""))
    return PaymentReceipt(guarantee, sign(payee, draft.payload()))


def make_withdrawal_request(keys: KeyPair, token: int) -> WithdrawalRequest:
    if token <= 0:
        raise ValueError("token must be positive")
    draft = WithdrawalRequest(keys.address, token, Signature(b"", b""))
    return WithdrawalRequest(keys.address, token, sign(keys, draft.payload()))


def make_withdrawal_check(
    signers: list[KeyPair], request: WithdrawalRequest, epoch: int, shard: int, roster: list[Address]
) -> WithdrawalCheck:
    draft = WithdrawalCheck(request, GroupSignature(epoch, shard, (), ()))
    gsig = group_sign(signers, draft.payload(), epoch=epoch, shard=shard, roster_addrs=roster)
    return WithdrawalCheck(request, gsig)


def make_certification(tee: KeyPair, time: int, addr: Address, token: int) -> WithdrawalCertification:
    draft = WithdrawalCertification(time, addr, token, Signature(b"", b""))
    return WithdrawalCertification(time, addr, token, sign(tee, draft.payload()))


# -- structural validation ----------------------------------------------------

def _check_txinfo(t: TxInfo) -> bool:
    return (
        t.amount > 0
        and t.fee >= 0
        and verify_by(t.payer, t.payer_payload(), t.sig_payer)
        and verify_by(t.payee, t.payee_payload(), t.sig_payee)
    )


def _check_pg1(p: PreGuarantee1) -> bool:
    e = p.expectation
    return (
        _check_txinfo(p.txinfo)
        and e.height_min <= e.height_max
        and verify_by(p.guarantor, p.payload(), p.sig_guarantor)
    )


def _check_pg2(p: PreGuarantee2) -> bool:
    return _check_pg1(p.pg1) and verify_by(p.pg1.txinfo.payer, p.payload(), p.sig_payer)


def _check_guarantee(g: Guarantee) -> bool:
    return _check_pg2(g.pg2) and group_verify_strict(g.payload(), g.gsig)


def _check_receipt(r: PaymentReceipt) -> bool:
    return _check_guarantee(r.guarantee) and verify_by(
        r.guarantee.txinfo.payee, r.payload(), r.sig_payee
    )


def _check_request(q: WithdrawalRequest) -> bool:
    return q.token > 0 and verify_by(q.addr, q.payload(), q.sig)


def _check_check(c: WithdrawalCheck) -> bool:
    return _check_request(c.request) and group_verify_strict(c.payload(), c.gsig)


def _check_cert(c: WithdrawalCertification) -> bool:
    return c.token > 0 and verify_by(c.sig_tee.signer, c.payload(), c.sig_tee)


_CHECKS = {
    TxInfo: _check_txinfo,
    PreGuarantee1: _check_pg1,
    PreGuarantee2: _check_pg2,
    Guarantee: _check_guarantee,
    PaymentReceipt: _check_receipt,
    WithdrawalRequest: _check_request,
    WithdrawalCheck: _check_check,
    WithdrawalCertification: _check_cert,
}


def verify_structure(msg: object) -> bool:
    """True iff every embedded signature verifies and derived fields recompute.

    A WithdrawalCertification is only checked for internal consistency here;
    whether it was signed by the TEE key is the Withdraw contract's concern.
    """
    check = _CHECKS.get(type(msg))
    if check is None:
        return False
    try:
        return bool(check(msg))
    except (ValueError, TypeError, AttributeError):
        return False
