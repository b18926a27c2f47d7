"""Mock trusted execution environment for withdrawals.

The TEE is an honest oracle holding the certification key pair. It locks an
account when a group-signed WithdrawalCheck arrives, audits the check
against the ledger's recorded deduction, and either certifies or rolls the
deduction back. Either way the lock is released.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .crypto import Address, Digest, KeyPair, group_verify, threshold
from .external_chain import PublicChainState
from .ledger import LedgerState
from .messages import WithdrawalCertification, WithdrawalCheck, make_certification, verify_structure

log = logging.getLogger(__name__)


class TeeRejection(Exception):
    pass


@dataclass
class TeeState:
    keys: KeyPair
    ledger: LedgerState
    pending: dict[Address, WithdrawalCheck] = field(default_factory=dict)
    issued: dict[Digest, WithdrawalCertification] = field(default_factory=dict)
    rejections: list[dict] = field(default_factory=list)

    @property
    def pk(self) -> bytes:
        return self.keys.pk

    def tee_submit_check(self, check: WithdrawalCheck, now: int) -> dict:
        """Accept a check and lock the requester. Raises TeeRejection with no side effects."""
        addr = check.request.addr
        if not verify_structure(check):
            raise TeeRejection("malformed withdrawal check")
        if addr not in self.ledger.accounts:
            raise TeeRejection("unknown account")
        shard = self.ledger.shard_of_account(addr)
        roster = self.ledger.roster_at(self.ledger.epoch.index, shard)
        if check.gsig.shard != shard or check.gsig.epoch != self.ledger.epoch.index or not (
            group_verify(roster, threshold(len(roster)), check.payload(), check.gsig)
        ):
            raise TeeRejection("check not signed by the requester's current group")
        if addr in self.pending:
            raise TeeRejection("a withdrawal check is already pending")
        self.pending[addr] = check
        self.ledger.set_withdrawal_lock(addr, True)
        return {"addr": addr.hex(), "locked": True, "time": now}

    def tee_certify(self, addr: Address, now: int) -> WithdrawalCertification | None:
        """Certify the pending check if the ledger holds exactly that deduction.

        On mismatch the deduction (if any) is restored and None is returned.
        """
        check = self.pending.pop(addr, None)
        if check is None:
            raise TeeRejection("no pending check")
        token = check.request.token
        deducted = self.ledger.escrowed(addr)
        self.ledger.set_withdrawal_lock(addr, False)
        if deducted != token:
            if deducted is not None:
                self.ledger.restore_withdrawal(addr)
            self.rejections.append({"addr": addr.hex(), "token": token,
                                    "deducted": deducted, "time": now})
            log.info("withdrawal of %d rejected: ledger deduction %s", token, deducted)
            return None
        cert = make_certification(self.keys, now, addr, token)
        self.ledger.certify_withdrawal(addr, cert.digest)
        self.issued[cert.digest] = cert
        return cert

    def expire_certificates(self, now: int, chain: PublicChainState) -> list[Digest]:
        """Restore tokens of certificates that can no longer be redeemed."""
        expired = []
        for digest, cert in sorted(self.issued.items()):
            if digest not in self.ledger.certified:
                continue
            if digest in chain.used_certs:
                continue
            if now - cert.time > chain.time_interval:
                self.ledger.expire_certificate(digest)
                expired.append(digest)
        return expired
