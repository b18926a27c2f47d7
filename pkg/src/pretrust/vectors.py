"""Cross-implementation test vectors: generation and end-to-end validation.

Every value is derived from fixed seeds, so a second implementation can
regenerate the file and compare byte for byte, or just run the checks in
:func:`validate_vectors` against its own primitives.
"""

from __future__ import annotations

import json

from .crypto import (
    Address,
    Signature,
    group_verify,
    hash_digest,
    keygen,
    sign,
    threshold,
    verify,
)
from .messages import (
    BlockExpectation,
    assemble_txinfo,
    deserialize,
    make_certification,
    make_guarantee,
    make_pg1,
    make_pg2,
    make_receipt,
    serialize,
    verify_structure,
)
from .sharding import (
    assign_guarantor_shards,
    assign_tx_shard,
    compute_global_hash,
    elect_guarantor,
    genesis_hash,
    upper_bits,
)

FORMAT = "pretrust-vectors/1"


def seed_bytes(label: str, i: int) -> bytes:
    return hash_digest(f"vector/{label}/{i}".encode())


def _keys(label: str, i: int):
    return keygen(seed_bytes(label, i))


def generate() -> dict:
    out: dict = {"format": FORMAT}

    keys = [_keys("key", i) for i in range(4)]
    out["keys"] = [
        {"seed": seed_bytes("key", i).hex(), "pk": k.pk.hex(), "address": k.address.hex()}
        for i, k in enumerate(keys)
    ]
    inputs = [b"", b"abc", bytes(range(64))]
    out["hashes"] = [{"input": x.hex(), "sha256": hash_digest(x).hex()} for x in inputs]
    messages = [b"", b"fast payment", bytes(100)]
    out["signatures"] = [
        {"seed": seed_bytes("key", i).hex(), "message": m.hex(),
         "signature": sign(keys[i], m).sig.hex()}
        for i, m in enumerate(messages)
    ]
    out["upper_bits"] = [
        {"k": k, "value": v.hex(), "result": upper_bits(k, v)}
        for k, v in [(2, b"\xb5"), (0, b"\xff"), (3, b"\xff"), (12, bytes.fromhex("abcdef")),
                     (2, keys[0].address)]
    ]
    ends = [hash_digest(bytes([i])) for i in range(4)]
    out["global_hash"] = [
        {"end_blocks": [ends[0].hex()], "result": compute_global_hash(ends[:1]).hex()},
        {"end_blocks": [e.hex() for e in ends], "result": compute_global_hash(ends).hex()},
        {"end_blocks": [ends[0].hex()] * 2, "result": compute_global_hash([ends[0]] * 2).hex()},
    ]
    out["genesis_hash"] = [{"seed": s, "result": genesis_hash(s).hex()} for s in (0, 42)]

    guarantors = sorted(_keys("guarantor", i).address for i in range(12))
    gh = compute_global_hash(ends)
    shards = assign_guarantor_shards(gh, guarantors, 2)
    out["guarantor_shards"] = {
        "global_hash": gh.hex(), "shard_bits": 2,
        "guarantors": [a.hex() for a in guarantors],
        "rosters": [[a.hex() for a in shards[s]] for s in sorted(shards)],
    }
    out["tx_shards"] = [
        {"address": k.address.hex(), "shard_bits": s, "shard": assign_tx_shard(k.address, s)}
        for k in keys for s in (0, 2, 4)
    ]

    payer, payee, guarantor = _keys("payer", 0), _keys("payee", 0), _keys("guarantor", 0)
    group = [_keys("group", i) for i in range(4)] + [guarantor]
    roster = sorted(k.address for k in group)
    t = assemble_txinfo(payer, payee, 100, 4, 0, 0)
    out["election"] = {
        "roster": [a.hex() for a in roster], "txinfo_id": t.id.hex(),
        "order": [a.hex() for a in elect_guarantor(roster, t.id)],
    }
    pg1 = make_pg1(guarantor, t, 0, BlockExpectation(1, 4, 6))
    pg2 = make_pg2(payer, pg1)
    g = make_guarantee(group, pg2, 1, 2, roster)
    receipt = make_receipt(payee, g)
    out["guarantee_chain"] = {
        "payer_seed": seed_bytes("payer", 0).hex(),
        "payee_seed": seed_bytes("payee", 0).hex(),
        "guarantor_seed": seed_bytes("guarantor", 0).hex(),
        "group_seeds": [seed_bytes("group", i).hex() for i in range(4)],
        "roster": [a.hex() for a in roster],
        "threshold": threshold(len(roster)),
        "txinfo_id": t.id.hex(),
        "txinfo": serialize(t).hex(),
        "pg1": serialize(pg1).hex(),
        "pg2": serialize(pg2).hex(),
        "guarantee": serialize(g).hex(),
        "receipt": serialize(receipt).hex(),
    }
    tee = _keys("tee", 0)
    cert = make_certification(tee, 9_525, payee.address, 50)
    out["withdrawal_certification"] = {
        "tee_seed": seed_bytes("tee", 0).hex(), "tee_pk": tee.pk.hex(),
        "cert": serialize(cert).hex(), "digest": cert.digest.hex(),
    }
    return out


def validate_vectors(data: dict) -> list[str]:
    """Re-derive every vector; return a description of each mismatch."""
    errors: list[str] = []

    def check(name: str, ok: bool) -> None:
        if not ok:
            errors.append(name)

    check("format", data.get("format") == FORMAT)
    for i, v in enumerate(data["keys"]):
        k = keygen(bytes.fromhex(v["seed"]))
        check(f"keys[{i}].pk", k.pk.hex() == v["pk"])
        check(f"keys[{i}].address", hash_digest(k.pk)[:20].hex() == v["address"])
    for i, v in enumerate(data["hashes"]):
        check(f"hashes[{i}]", hash_digest(bytes.fromhex(v["input"])).hex() == v["sha256"])
    for i, v in enumerate(data["signatures"]):
        k = keygen(bytes.fromhex(v["seed"]))
        msg = bytes.fromhex(v["message"])
        check(f"signatures[{i}].sign", sign(k, msg).sig.hex() == v["signature"])
        check(f"signatures[{i}].verify",
              verify(k.pk, msg, Signature(k.pk, bytes.fromhex(v["signature"]))))
    for i, v in enumerate(data["upper_bits"]):
        check(f"upper_bits[{i}]", upper_bits(v["k"], bytes.fromhex(v["value"])) == v["result"])
    for i, v in enumerate(data["global_hash"]):
        ends = [bytes.fromhex(h) for h in v["end_blocks"]]
        check(f"global_hash[{i}]", compute_global_hash(ends).hex() == v["result"])
    for i, v in enumerate(data["genesis_hash"]):
        check(f"genesis_hash[{i}]", genesis_hash(v["seed"]).hex() == v["result"])

    gs = data["guarantor_shards"]
    shards = assign_guarantor_shards(bytes.fromhex(gs["global_hash"]),
                                     [Address(bytes.fromhex(a)) for a in gs["guarantors"]],
                                     gs["shard_bits"])
    check("guarantor_shards",
          [[a.hex() for a in shards[s]] for s in sorted(shards)] == gs["rosters"])
    for i, v in enumerate(data["tx_shards"]):
        check(f"tx_shards[{i}]",
              assign_tx_shard(bytes.fromhex(v["address"]), v["shard_bits"]) == v["shard"])
    el = data["election"]
    order = elect_guarantor([Address(bytes.fromhex(a)) for a in el["roster"]],
                            bytes.fromhex(el["txinfo_id"]))
    check("election", [a.hex() for a in order] == el["order"])

    gc = data["guarantee_chain"]
    msgs = {}
    for name in ("txinfo", "pg1", "pg2", "guarantee", "receipt"):
        raw = bytes.fromhex(gc[name])
        try:
            msg = deserialize(raw)
        except ValueError as e:
            errors.append(f"guarantee_chain.{name}: {e}")
            continue
        msgs[name] = msg
        check(f"guarantee_chain.{name}.roundtrip", serialize(msg) == raw)
        check(f"guarantee_chain.{name}.structure", verify_structure(msg))
    if len(msgs) == 5:
        t, pg1, pg2, g, r = (msgs[n] for n in ("txinfo", "pg1", "pg2", "guarantee", "receipt"))
        check("guarantee_chain.txinfo_id", t.id.hex() == gc["txinfo_id"])
        check("guarantee_chain.links", pg1.txinfo == t and pg2.pg1 == pg1 and g.pg2 == pg2
              and r.guarantee == g)
        payer = keygen(bytes.fromhex(gc["payer_seed"]))
        payee = keygen(bytes.fromhex(gc["payee_seed"]))
        guarantor = keygen(bytes.fromhex(gc["guarantor_seed"]))
        check("guarantee_chain.parties", t.payer == payer.address and t.payee == payee.address
              and pg1.guarantor == guarantor.address)
        roster = [Address(bytes.fromhex(a)) for a in gc["roster"]]
        check("guarantee_chain.gsig",
              group_verify(roster, gc["threshold"], g.payload(), g.gsig))
        group = [keygen(bytes.fromhex(s)) for s in gc["group_seeds"]] + [guarantor]
        regen = make_guarantee(group, pg2, g.gsig.epoch, g.gsig.shard, roster)
        check("guarantee_chain.regenerate", serialize(regen) == bytes.fromhex(gc["guarantee"]))

    wc = data["withdrawal_certification"]
    tee = keygen(bytes.fromhex(wc["tee_seed"]))
    check("withdrawal.tee_pk", tee.pk.hex() == wc["tee_pk"])
    cert = deserialize(bytes.fromhex(wc["cert"]))
    check("withdrawal.structure", verify_structure(cert))
    check("withdrawal.tee_sig", verify(tee.pk, cert.payload(), cert.sig_tee))
    check("withdrawal.digest", cert.digest.hex() == wc["digest"])
    return errors


def dump(path: str) -> None:
    with open(path, "w") as fh:
        json.dump(generate(), fh, indent=1, sort_keys=True)
        fh.write("\n")
