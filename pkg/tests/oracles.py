"""Independent reference implementations used to check the library.

Written against plain integers and bit strings rather than the library's
byte helpers, so a shared bug is unlikely.
"""

import hashlib


def upper_bits(k, value):
    bits = "".join(format(b, "08b") for b in value)
    assert k <= len(bits)
    return int(bits[:k], 2) if k else 0


def global_hash(end_blocks):
    acc = 0
    for h in end_blocks:
        acc ^= int(h.hex(), 16)
    return hashlib.sha256(acc.to_bytes(32, "big")).digest()


def guarantor_shard(global_hash_, addr, s):
    x = int(global_hash_[:20].hex(), 16) ^ int(addr.hex(), 16)
    return int(format(x, "0160b")[:s], 2) if s else 0


def assign(global_hash_, guarantors, s):
    rosters = {i: [] for i in range(2 ** s)}
    for g in guarantors:
        rosters[guarantor_shard(global_hash_, g, s)].append(g)
    return {i: sorted(r) for i, r in rosters.items()}


def tx_shard(addr, s):
    return upper_bits(s, addr)


def election(roster, txid):
    """Repeatedly take the minimum remaining priority (selection sort)."""
    key = int(txid[:20].hex(), 16)
    left = list(roster)
    out = []
    while left:
        best = min(left, key=lambda a: int(a.hex(), 16) ^ key)
        out.append(best)
        left.remove(best)
    return out
