"""Hashing, Ed25519 keys and signatures, and the threshold group signature.

Signatures carry the signer's public key so every message in the system is
self-verifying: a signature is valid for an address only if the embedded key
hashes to that address and the Ed25519 check passes.
"""

from __future__ import annotations

import functools
import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

DIGEST_SIZE = 32
ADDRESS_SIZE = 20
PK_SIZE = 32
SIG_SIZE = 64


class Digest(bytes):
    """A 32-byte SHA-256 value."""

    def __new__(cls, value: bytes) -> "Digest":
        if len(value) != DIGEST_SIZE:
            raise ValueError(f"digest must be {DIGEST_SIZE} bytes, got {len(value)}")
        return super().__new__(cls, value)

    def __repr__(self) -> str:
        return f"Digest({self.hex()[:16]}...)"


class Address(bytes):
    """A 20-byte account identifier, the truncated hash of a public key."""

    def __new__(cls, value: bytes) -> "Address":
        if len(value) != ADDRESS_SIZE:
            raise ValueError(f"address must be {ADDRESS_SIZE} bytes, got {len(value)}")
        return super().__new__(cls, value)

    def __repr__(self) -> str:
        return f"Address({self.hex()[:10]}...)"


def hash_digest(data: bytes) -> Digest:
    return Digest(hashlib.sha256(data).digest())


def derive_address(pk: bytes) -> Address:
    return Address(hash_digest(pk)[:ADDRESS_SIZE])


@dataclass(frozen=True)
class KeyPair:
    pk: bytes
    sk: bytes

    @property
    def address(self) -> Address:
        return derive_address(self.pk)


def keygen(seed: bytes) -> KeyPair:
    """Derive an Ed25519 key pair from a 32-byte seed (the RFC 8032 private key)."""
    if len(seed) != 32:
        raise ValueError("seed must be 32 bytes")
    priv = Ed25519PrivateKey.from_private_bytes(seed)
    sk = priv.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())
    pk = priv.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return KeyPair(pk=pk, sk=sk)


@dataclass(frozen=True)
class Signature:
    pk: bytes
    sig: bytes

    @property
    def signer(self) -> Address:
        return derive_address(self.pk)


def sign(keys: KeyPair, message: bytes) -> Signature:
    priv = Ed25519PrivateKey.from_private_bytes(keys.sk)
    return Signature(pk=keys.pk, sig=priv.sign(message))


def verify(pk: bytes, message: bytes, sig: Signature) -> bool:
    """Check ``sig`` over ``message`` for ``pk``. Malformed input yields False."""
    if not isinstance(sig, Signature) or sig.pk != pk:
        return False
    if len(pk) != PK_SIZE or len(sig.sig) != SIG_SIZE:
        return False
    return _ed25519_ok(bytes(pk), bytes(sig.sig), bytes(message))


@functools.lru_cache(maxsize=1 << 16)
def _ed25519_ok(pk: bytes, sig: bytes, message: bytes) -> bool:
    # nodes re-check the same nested signatures many times; results are pure
    try:
        Ed25519PublicKey.from_public_bytes(pk).verify(sig, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def verify_by(addr: bytes, message: bytes, sig: Signature) -> bool:
    """Verify a signature that claims to come from ``addr``."""
    return sig.signer == addr and verify(sig.pk, message, sig)


def threshold(roster_size: int) -> int:
    """Signatures needed from a roster: ceil(2n/3)."""
    if roster_size <= 0:
        raise ValueError("roster must be non-empty")
    return math.ceil(2 * roster_size / 3)


@dataclass(frozen=True)
class GroupSignature:
    """Threshold multi-signature of one shard group in one epoch.

    Members sign ``group_payload(epoch, shard, roster, message)`` so the
    roster cannot be swapped after signing.
    """

    epoch: int
    shard: int
    roster: tuple[Address, ...]
    member_sigs: tuple[Signature, ...]

    @property
    def signers(self) -> list[Address]:
        return [s.signer for s in self.member_sigs]


def roster_digest(roster: Iterable[bytes]) -> Digest:
    return hash_digest(b"".join(roster))


def group_payload(epoch: int, shard: int, roster: Sequence[bytes], message: bytes) -> bytes:
    return (
        b"group-sig/v1"
        + epoch.to_bytes(8, "big")
        + shard.to_bytes(8, "big")
        + roster_digest(roster)
        + hash_digest(message)
    )


def group_sign(
    roster: Sequence[KeyPair],
    message: bytes,
    epoch: int = 0,
    shard: int = 0,
    roster_addrs: Sequence[Address] | None = None,
) -> GroupSignature:
    """Every key in ``roster`` signs. ``roster_addrs`` names the full group when
    only a subset of it is signing."""
    if not roster:
        raise ValueError("roster must be non-empty")
    if roster_addrs is None:
        roster_addrs = [k.address for k in roster]
    addrs = tuple(sorted(roster_addrs))
    payload = group_payload(epoch, shard, addrs, message)
    return GroupSignature(
        epoch=epoch,
        shard=shard,
        roster=addrs,
        member_sigs=tuple(sign(k, payload) for k in roster),
    )


def count_valid_signers(roster: Sequence[bytes], message: bytes, gsig: GroupSignature) -> int:
    """Distinct roster members with a valid signature in ``gsig``.

    The payload binds ``gsig.roster``; signatures by keys outside ``roster``
    are ignored.
    """
    payload = group_payload(gsig.epoch, gsig.shard, gsig.roster, message)
    members = set(roster)
    seen: set[bytes] = set()
    for s in gsig.member_sigs:
        addr = s.signer
        if addr in members and addr not in seen and verify(s.pk, payload, s):
            seen.add(addr)
    return len(seen)


def group_verify(
    roster: Sequence[bytes], thresh: int, message: bytes, gsig: GroupSignature
) -> bool:
    if not roster or not isinstance(gsig, GroupSignature):
        return False
    if sorted(gsig.roster) != sorted(roster):
        return False
    return count_valid_signers(roster, message, gsig) >= thresh


def group_verify_strict(message: bytes, gsig: GroupSignature) -> bool:
    """Structural check: the embedded roster is well formed and every included
    member signature is valid, distinct, from that roster, and meets threshold.

    Unlike :func:`group_verify`, a single bad member signature fails the whole
    thing, so tampering with any byte is detected.
    """
    roster = gsig.roster
    if not roster or len(set(roster)) != len(roster) or list(roster) != sorted(roster):
        return False
    n_valid = count_valid_signers(roster, message, gsig)
    return n_valid == len(gsig.member_sigs) and n_valid >= threshold(len(roster))
