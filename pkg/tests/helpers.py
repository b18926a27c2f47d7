"""Small fixtures shared by the unit tests."""

from __future__ import annotations

from dataclasses import dataclass

from pretrust.crypto import hash_digest, keygen
from pretrust.ledger import CLIENT, GUARANTOR, LedgerState
from pretrust.params import SecurityParams
from pretrust.sharding import derive_epoch, genesis_hash


def key(label: str, i: int = 0):
    return keygen(hash_digest(f"test/{label}/{i}".encode()))


@dataclass
class Env:
    params: SecurityParams
    ledger: LedgerState
    keys: dict
    guarantors: list
    clients: list

    def group_keys(self, shard: int, epoch: int | None = None):
        e = self.ledger.epochs[-1 if epoch is None else epoch]
        return [self.keys[a] for a in e.rosters[shard]]

    def shard_of(self, kp) -> int:
        return self.ledger.shard_of_account(kp.address)


def make_env(n_guarantors=12, n_clients=6, deposit=10_000, balance=1_000, seed=7, **params) -> Env:
    p = SecurityParams(**params).validate()
    gs = [key("g", i) for i in range(n_guarantors)]
    cs = [key("c", i) for i in range(n_clients)]
    epoch = derive_epoch(0, genesis_hash(seed), [k.address for k in gs], p.shard_bits)
    led = LedgerState(p, epoch)
    for k in gs:
        led.add_member(k.address, GUARANTOR, deposit)
    for k in cs:
        led.add_member(k.address, CLIENT, balance)
    keys = {k.address: k for k in gs + cs}
    return Env(p, led, keys, gs, cs)


def txinfo(env: Env, payer, payee, amount=100, fee=4, txsn=None, payee_sn=0):
    from pretrust.messages import assemble_txinfo

    sn = env.ledger.account(payer.address).next_txsn if txsn is None else txsn
    return assemble_txinfo(payer, payee, amount, fee, sn, payee_sn)


def elected(env: Env, t):
    from pretrust.sharding import elect_guarantor

    roster = env.ledger.epoch.rosters[env.ledger.shard_of_account(t.payer)]
    return [env.keys[a] for a in elect_guarantor(roster, t.id)]


def guarantee_flow(env: Env, payer, payee, amount=100, fee=4, payee_sn=0):
    from pretrust.protocol import group_generate_guarantee, payer_counter_sign, verify_txinfo

    t = txinfo(env, payer, payee, amount, fee, payee_sn=payee_sn)
    g_keys = elected(env, t)[0]
    pg1 = verify_txinfo(g_keys, t, env.ledger)
    pg2 = payer_counter_sign(payer, pg1, env.ledger, set())
    g = group_generate_guarantee(env.group_keys(env.shard_of(g_keys)), pg2, env.ledger)
    return t, pg1, pg2, g, g_keys


def add_blocks(env: Env, shard: int, count: int = 1, records=()):
    from pretrust.ledger import produce_block

    out = []
    for i in range(count):
        b = produce_block(env.ledger, shard, list(records) if i == 0 else [],
                          env.group_keys(shard))
        env.ledger.append_block(b)
        out.append(b)
    return out
