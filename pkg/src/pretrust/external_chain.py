"""Mock public chain: the contract account, RegisterAccount and Withdraw."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

from .crypto import Address, Digest, KeyPair, Signature, sign, verify, verify_by
from .messages import WithdrawalCertification, verify_structure
from .wire import Writer


class Status(str, enum.Enum):
    SUCCESS = "SUCCESS"
    FAILURE = "FAILURE"


@dataclass
class MembershipEntry:
    addr: Address
    kind: str
    deposit: int
    active: bool = True

    def to_json(self) -> dict:
        return {"addr": self.addr.hex(), "kind": self.kind, "deposit": self.deposit,
                "active": self.active}


def registration_payload(addr: bytes, deposit: int, kind: str) -> bytes:
    return Writer().raw(b"RegisterAccount").blob(addr).u64(deposit).blob(kind.encode()).getvalue()


def sign_registration(keys: KeyPair, deposit: int, kind: str) -> Signature:
    return sign(keys, registration_payload(keys.address, deposit, kind))


@dataclass
class PublicChainState:
    tee_pk: bytes
    time_interval: int
    balances: dict[Address, int] = field(default_factory=dict)
    contract_balance: int = 0
    membership: list[MembershipEntry] = field(default_factory=list)
    withdrawn_log: list[tuple[Address, int, int]] = field(default_factory=list)
    used_certs: set[Digest] = field(default_factory=set)
    call_log: list[dict] = field(default_factory=list)
    total_deposited: int = 0
    total_withdrawn: int = 0
    initial_total: int = 0

    def fund(self, addr: Address, amount: int) -> None:
        """Genesis allocation of external tokens."""
        self.balances[addr] = self.balances.get(addr, 0) + amount
        self.initial_total += amount

    def _log(self, call: str, status: Status, now: int, **fields) -> Status:
        self.call_log.append({"call": call, "status": status.value, "time": now, **fields})
        return status

    def register_account(self, addr: Address, deposit: int, kind: str, sig: Signature,
                         now: int = 0) -> Status:
        ok = (
            kind in ("guarantor", "client")
            and deposit > 0
            and verify_by(addr, registration_payload(addr, deposit, kind), sig)
            and self.balances.get(addr, 0) >= deposit
            and all(e.addr != addr for e in self.membership)
        )
        if not ok:
            return self._log("RegisterAccount", Status.FAILURE, now, addr=addr.hex(),
                             deposit=deposit, kind=kind)
        self.balances[addr] -= deposit
        self.contract_balance += deposit
        self.total_deposited += deposit
        self.membership.append(MembershipEntry(addr, kind, deposit))
        return self._log("RegisterAccount", Status.SUCCESS, now, addr=addr.hex(),
                         deposit=deposit, kind=kind)

    def withdraw(self, cert: WithdrawalCertification, now: int) -> Status:
        """Pay out a TEE certification once, if presented within the time interval
        (boundary inclusive)."""
        fields = {"addr": cert.addr.hex(), "token": cert.token, "cert_time": cert.time}
        digest = cert.digest
        ok = (
            verify_structure(cert)
            and verify(self.tee_pk, cert.payload(), cert.sig_tee)
            and now >= cert.time
            and now - cert.time <= self.time_interval
            and digest not in self.used_certs
            and cert.token <= self.contract_balance
        )
        if not ok:
            return self._log("Withdraw", Status.FAILURE, now, **fields)
        self.used_certs.add(digest)
        self.contract_balance -= cert.token
        self.balances[cert.addr] = self.balances.get(cert.addr, 0) + cert.token
        self.total_withdrawn += cert.token
        self.withdrawn_log.append((cert.addr, cert.token, now))
        return self._log("Withdraw", Status.SUCCESS, now, **fields)

    def read_membership(self) -> list[MembershipEntry]:
        return list(self.membership)

    def deactivate(self, addr: Address) -> None:
        for e in self.membership:
            if e.addr == addr:
                e.active = False

    def check_invariant(self) -> bool:
        return self.contract_balance == self.total_deposited - self.total_withdrawn

    def export_call_log(self) -> str:
        return "".join(json.dumps(c, sort_keys=True) + "\n" for c in self.call_log)

    def snapshot(self) -> dict:
        return {
            "balances": {a.hex(): v for a, v in sorted(self.balances.items())},
            "contract_balance": self.contract_balance,
            "total_deposited": self.total_deposited,
            "total_withdrawn": self.total_withdrawn,
            "initial_total": self.initial_total,
            "membership": [e.to_json() for e in self.membership],
        }
