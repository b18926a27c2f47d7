"""Epoch randomness, shard assignment and guarantor election."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .crypto import ADDRESS_SIZE, Address, Digest, hash_digest
from .params import ConfigError, SecurityParams

__all__ = [
    "SecurityParams",
    "EpochState",
    "EmptyShardError",
    "upper_bits",
    "compute_global_hash",
    "assign_guarantor_shards",
    "assign_tx_shard",
    "elect_guarantor",
    "genesis_hash",
    "derive_epoch",
]

class EmptyShardError(ConfigError):
    pass


def upper_bits(k: int, value: bytes) -> int:
    """Integer value of the ``k`` most significant bits of ``value``."""
    nbits = len(value) * 8
    if k < 0 or k > nbits:
        raise ValueError(f"cannot take {k} bits of a {nbits}-bit value")
    return int.from_bytes(value, "big") >> (nbits - k)


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b, strict=True))


def compute_global_hash(end_blocks: Sequence[bytes], shard_bits: int | None = None) -> Digest:
    """SHA-256 of the xor-fold of every shard's end-block hash."""
    if not end_blocks:
        raise ValueError("need at least one end-block hash")
    if shard_bits is not None and len(end_blocks) != 1 << shard_bits:
        raise ValueError(f"expected {1 << shard_bits} end blocks, got {len(end_blocks)}")
    acc = bytes(32)
    for h in end_blocks:
        if len(h) != 32:
            raise ValueError("end-block hash must be 32 bytes")
        acc = _xor(acc, h)
    return hash_digest(acc)


def assign_guarantor_shards(
    global_hash: bytes, guarantors: Iterable[Address], shard_bits: int
) -> dict[int, list[Address]]:
    """Map every shard index to its sorted roster.

    Shard of guarantor G is the top ``shard_bits`` bits of
    ``global_hash[:20] xor addr_G``. Shards may come back empty; callers that
    need a group per shard use :func:`derive_epoch`.
    """
    guarantors = list(guarantors)
    if not guarantors:
        raise ValueError("guarantor set is empty")
    prefix = global_hash[:ADDRESS_SIZE]
    rosters: dict[int, list[Address]] = {i: [] for i in range(1 << shard_bits)}
    for g in guarantors:
        rosters[upper_bits(shard_bits, _xor(prefix, g))].append(Address(g))
    for roster in rosters.values():
        roster.sort()
    return rosters


def assign_tx_shard(payer: bytes, shard_bits: int) -> int:
    return upper_bits(shard_bits, payer)


def elect_guarantor(roster: Sequence[Address], txinfo_id: bytes) -> list[Address]:
    """Roster ordered by ascending priority ``addr xor id[:20]``; the head is elected."""
    if not roster:
        raise ValueError("roster is empty")
    key = int.from_bytes(txinfo_id[:ADDRESS_SIZE], "big")
    return sorted(roster, key=lambda a: int.from_bytes(a, "big") ^ key)


def genesis_hash(seed: int) -> Digest:
    """Epoch 0 beacon: the hash of the seed as 8 big-endian bytes."""
    return hash_digest(seed.to_bytes(8, "big"))


@dataclass(frozen=True)
class EpochState:
    index: int
    global_hash: Digest
    rosters: Mapping[int, tuple[Address, ...]]
    started_at: int = 0
    shard_of: Mapping[Address, int] = field(default_factory=dict, compare=False)

    def roster(self, shard: int) -> tuple[Address, ...]:
        return self.rosters[shard]


def derive_epoch(
    index: int,
    global_hash: Digest,
    guarantors: Iterable[Address],
    shard_bits: int,
    started_at: int = 0,
) -> EpochState:
    """Build the epoch's rosters; every shard must get at least one guarantor.

    Xoring every address with the same beacon prefix only relabels the
    classes of addresses sharing their top ``shard_bits`` bits, so group
    composition is fixed by the addresses and no beacon can fill a shard
    that one beacon leaves empty. An empty shard is therefore reported at
    once as EmptyShardError rather than retried.
    """
    guarantors = sorted(set(guarantors))
    if len(guarantors) < 1 << shard_bits:
        raise EmptyShardError(
            f"{len(guarantors)} guarantors cannot cover {1 << shard_bits} shards"
        )
    rosters = assign_guarantor_shards(global_hash, guarantors, shard_bits)
    empty = [s for s, r in rosters.items() if not r]
    if empty:
        raise EmptyShardError(
            f"epoch {index}: shards {empty} have no guarantor; the guarantor addresses "
            f"do not cover every {shard_bits}-bit prefix"
        )
    return EpochState(
        index=index,
        global_hash=Digest(global_hash),
        rosters={s: tuple(r) for s, r in rosters.items()},
        started_at=started_at,
        shard_of={g: s for s, r in rosters.items() for g in r},
    )
