import hashlib

import pytest
from hypothesis import given, settings, strategies as st

from pretrust.crypto import (
    Address,
    Digest,
    GroupSignature,
    Signature,
    derive_address,
    group_payload,
    group_sign,
    group_verify,
    group_verify_strict,
    hash_digest,
    keygen,
    sign,
    threshold,
    verify,
    verify_by,
)

from helpers import key

# RFC 8032 section 7.1, test 1
RFC_SEED = bytes.fromhex("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60")
RFC_PK = bytes.fromhex("d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a")
RFC_SIG = bytes.fromhex(
    "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b"
)


def test_hash_known_value():
    assert hash_digest(b"abc").hex() == (
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    )


@given(st.binary(max_size=300))
def test_hash_matches_hashlib(data):
    assert hash_digest(data) == hashlib.sha256(data).digest()


def test_digest_and_address_lengths():
    with pytest.raises(ValueError):
        Digest(b"x" * 31)
    with pytest.raises(ValueError):
        Address(b"x" * 21)


def test_rfc8032_vector():
    kp = keygen(RFC_SEED)
    assert kp.pk == RFC_PK
    assert sign(kp, b"").sig == RFC_SIG
    assert verify(RFC_PK, b"", Signature(RFC_PK, RFC_SIG))


def test_address_is_hash_prefix():
    kp = key("a")
    assert kp.address == hashlib.sha256(kp.pk).digest()[:20]
    assert derive_address(kp.pk) == kp.address


def test_keygen_rejects_short_seed():
    with pytest.raises(ValueError):
        keygen(b"short")


@settings(max_examples=30, deadline=None)
@given(st.binary(max_size=64))
def test_sign_verify_roundtrip(msg):
    kp = key("s")
    s = sign(kp, msg)
    assert verify(kp.pk, msg, s)
    assert verify_by(kp.address, msg, s)
    assert not verify(kp.pk, msg + b"\x00", s)


def test_verify_rejects_wrong_key_and_garbage():
    a, b = key("a"), key("b")
    s = sign(a, b"m")
    assert not verify(b.pk, b"m", s)
    assert not verify_by(b.address, b"m", s)
    assert not verify(a.pk, b"m", Signature(a.pk, s.sig[:-1]))
    assert not verify(a.pk, b"m", Signature(a.pk, bytes(64)))
    assert not verify(a.pk, b"m", "not a signature")


def test_threshold_matches_smallest_two_thirds():
    for n in range(1, 200):
        oracle = next(t for t in range(n + 1) if 3 * t >= 2 * n)
        assert threshold(n) == oracle
    with pytest.raises(ValueError):
        threshold(0)


def _group(n, label="m"):
    return [key(label, i) for i in range(n)]


def test_group_threshold_boundary():
    members = _group(6)
    roster = [k.address for k in members]
    t = threshold(6)
    assert t == 4
    ok = group_sign(members[:t], b"msg", 3, 1, roster)
    short = group_sign(members[: t - 1], b"msg", 3, 1, roster)
    assert group_verify(roster, t, b"msg", ok)
    assert not group_verify(roster, t, b"msg", short)
    assert group_verify_strict(b"msg", ok)
    assert not group_verify_strict(b"msg", short)


def test_group_roster_is_sorted_and_bound():
    members = _group(4)
    g = group_sign(members, b"x", 1, 2)
    assert list(g.roster) == sorted(k.address for k in members)
    other = [k.address for k in _group(5, "other")]
    assert not group_verify(other, threshold(5), b"x", g)
    # swapping the embedded roster invalidates member signatures
    swapped = GroupSignature(g.epoch, g.shard, tuple(sorted(other[:4])), g.member_sigs)
    assert not group_verify_strict(b"x", swapped)


def test_group_signature_binds_epoch_and_shard():
    members = _group(3)
    g = group_sign(members, b"x", 1, 2)
    for epoch, shard in ((2, 2), (1, 3)):
        moved = GroupSignature(epoch, shard, g.roster, g.member_sigs)
        assert not group_verify(g.roster, 2, b"x", moved)


def test_duplicate_and_outsider_signatures_do_not_count():
    members = _group(6)
    roster = [k.address for k in members]
    three = group_sign(members[:3], b"m", 0, 0, roster)
    dup = GroupSignature(0, 0, three.roster, three.member_sigs + three.member_sigs[:1])
    assert not group_verify(roster, 4, b"m", dup)
    assert not group_verify_strict(b"m", dup)
    outsider = key("outsider")
    payload = group_payload(0, 0, three.roster, b"m")
    extra = GroupSignature(0, 0, three.roster, three.member_sigs + (sign(outsider, payload),))
    assert not group_verify(roster, 4, b"m", extra)
    assert not group_verify_strict(b"m", extra)


def test_strict_rejects_one_bad_member_signature():
    members = _group(4)
    g = group_sign(members, b"m")
    bad = Signature(g.member_sigs[0].pk, bytes(64))
    tampered = GroupSignature(g.epoch, g.shard, g.roster, (bad,) + g.member_sigs[1:])
    # lenient check still has 3 of 4 valid
    assert group_verify(g.roster, 3, b"m", tampered)
    assert not group_verify_strict(b"m", tampered)
