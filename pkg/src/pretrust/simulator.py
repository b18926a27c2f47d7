"""Deterministic discrete-event simulation of the whole system.

Simulated time is in integer milliseconds. Events are ordered by
``(time, sequence)``; the sequence number is assigned at scheduling, so
same-time events run in scheduling order. All randomness comes from one
SplitMix64 stream seeded by the config.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
from dataclasses import dataclass, field
from typing import Any

from . import audit
from .crypto import Address, Digest, KeyPair, hash_digest, keygen
from .external_chain import PublicChainState, Status, sign_registration
from .ledger import CLIENT, GUARANTOR, LedgerState, append_arbitration_block, produce_block
from .messages import (
    Guarantee,
    TxInfo,
    assemble_txinfo,
    make_guarantee,
    make_receipt,
    make_withdrawal_request,
)
from .params import ConfigError, SecurityParams
from .protocol import (
    ClientNode,
    GroupNode,
    GuarantorNode,
    Node,
    PaymentIntent,
    TeeNode,
    WithdrawalIntent,
    epoch_ready,
    epoch_tick,
)
from .rng import SplitMix64
from .sharding import derive_epoch, elect_guarantor, genesis_hash
from .tee import TeeState

log = logging.getLogger(__name__)

BEHAVIORS = (
    "omit_guarantee_from_block",
    "overspend_payer",
    "replay_txSN",
    "stale_epoch_gsig",
    "expired_withdrawal_cert",
    "silent_elected_guarantor",
)


class InvariantViolation(RuntimeError):
    def __init__(self, invariant: str, event_index: int, detail: str = "") -> None:
        super().__init__(f"invariant {invariant} violated at event {event_index}: {detail}")
        self.invariant = invariant
        self.event_index = event_index


# -- configuration ----------------------------------------------------------------

@dataclass(frozen=True)
class AdversaryProfile:
    behavior: str
    target: str = "attack"

    def __post_init__(self) -> None:
        if self.behavior not in BEHAVIORS:
            raise ConfigError(f"unknown adversary behavior {self.behavior!r}")


@dataclass(frozen=True)
class LatencyModel:
    model: str = "fixed"
    hop_ms: int = 10
    min_ms: int = 5
    max_ms: int = 20

    def sample(self, rng: SplitMix64) -> int:
        if self.model == "fixed":
            return self.hop_ms
        return rng.uniform_int(self.min_ms, self.max_ms)


@dataclass(frozen=True)
class SimConfig:
    scenario: str = "happy_path"
    seed: int = 42
    params: SecurityParams = field(default_factory=SecurityParams)
    guarantors: int = 16
    clients: int = 8
    guarantor_deposit: int = 10_000
    client_deposit: int = 1_000
    external_float: int = 100
    latency: LatencyModel = field(default_factory=LatencyModel)
    public_chain_confirmation_delay: int = 600_000
    block_interval: int = 1_000
    arbitration_delay: int = 1_000
    duration: int = 30_000
    payments_per_client: int = 3
    attack_time: int = 9_500
    attack_amount: int = 100
    attack_fee: int = 4
    withdrawal_amount: int = 50
    late_guarantor_at: int | None = None
    adversary: AdversaryProfile | None = None

    def validate(self) -> "SimConfig":
        self.params.validate()
        if self.guarantors <= 0 or self.clients <= 0:
            raise ConfigError("guarantor and client counts must be positive")
        if self.guarantors < self.params.shard_count:
            raise ConfigError(
                f"need at least {self.params.shard_count} guarantors for "
                f"{self.params.shard_count} shards"
            )
        if self.clients < 4:
            raise ConfigError("scenarios need at least 4 clients")
        if self.latency.model not in ("fixed", "uniform"):
            raise ConfigError(f"unknown latency model {self.latency.model!r}")
        if self.latency.model == "uniform" and not 0 <= self.latency.min_ms <= self.latency.max_ms:
            raise ConfigError("latency range is empty")
        if self.block_interval <= 0 or self.duration <= 0:
            raise ConfigError("block_interval and duration must be positive")
        return self

    @classmethod
    def from_json(cls, data: dict) -> "SimConfig":
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "params" in data:
            data["params"] = SecurityParams.from_json(data["params"])
        if "latency" in data:
            lat = data["latency"]
            bad = set(lat) - set(LatencyModel.__dataclass_fields__)
            if bad:
                raise ConfigError(f"unknown latency keys: {sorted(bad)}")
            data["latency"] = LatencyModel(**lat)
        if data.get("adversary") is not None:
            data["adversary"] = AdversaryProfile(**data["adversary"])
        return cls(**data).validate()

    def to_json(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["params"] = self.params.to_json()
        out["latency"] = vars(self.latency).copy()
        out["adversary"] = vars(self.adversary).copy() if self.adversary else None
        return out


# -- metrics -------------------------------------------------------------------------

class Metrics:
    def __init__(self, confirmation_delay: int) -> None:
        self.on_chain_baseline = confirmation_delay
        self.txs: list[dict] = []
        self._index: dict[Digest, int] = {}
        self.arbitrations: list[dict] = []
        self.withdrawals: list[dict] = []
        self.events: list[dict] = []
        self.epochs: list[dict] = []
        self.boundary_audits = 0

    def _tx(self, txid: Digest) -> dict | None:
        i = self._index.get(txid)
        return self.txs[i] if i is not None else None

    def tx_created(self, t: TxInfo, now: int, tag: str) -> None:
        self._index[t.id] = len(self.txs)
        self.txs.append({
            "type": "tx", "txid": t.id.hex(), "tag": tag, "payer": t.payer.hex(),
            "payee": t.payee.hex(), "amount": t.amount, "fee": t.fee, "created_at": now,
            "accepted_at": None, "latency_ms": None, "guarantor": None,
            "candidate_rank": None, "status": "pending",
        })

    def tx_candidate(self, txid: Digest, guarantor: Address, rank: int | None) -> None:
        rec = self._tx(txid)
        if rec is not None:
            rec["guarantor"], rec["candidate_rank"] = guarantor.hex(), rank

    def tx_failed(self, txid: Digest, guard: str) -> None:
        rec = self._tx(txid)
        if rec is not None and rec["status"] == "pending":
            rec["status"] = "failed:" + guard

    def tx_accepted(self, txid: Digest, now: int) -> None:
        rec = self._tx(txid)
        if rec is not None:
            rec["accepted_at"] = now
            rec["latency_ms"] = now - rec["created_at"]
            rec["status"] = "accepted"

    def tx_rejected(self, txid: Digest, now: int) -> None:
        rec = self._tx(txid)
        if rec is not None:
            rec["status"] = "rejected"

    def arbitration(self, txid: Digest, status: str, **kw) -> None:
        self.arbitrations.append({"txid": txid.hex(), "status": status, **kw})

    def withdrawal(self, addr: Address, status: str, token: int, now: int, tag: str | None = None) -> None:
        entry = {"addr": addr.hex(), "status": status, "token": token, "time": now}
        if tag is not None:
            entry["tag"] = tag
        self.withdrawals.append(entry)

    def event(self, name: str, txid: Digest, **kw) -> None:
        self.events.append({"event": name, "txid": txid.hex(), **kw})

    def finalize(self, ledger: LedgerState) -> None:
        for rec in self.txs:
            if rec["status"] != "accepted":
                continue
            txid = bytes.fromhex(rec["txid"])
            if txid in ledger.settled:
                rec["status"] = "settled"
            elif txid in ledger.arbitrated:
                rec["status"] = "arbitrated"

    def latencies(self) -> list[int]:
        return [r["latency_ms"] for r in self.txs if r["latency_ms"] is not None]

    def summary(self, extra: dict) -> dict:
        lat = self.latencies()
        mean = sum(lat) / len(lat) if lat else None
        statuses: dict[str, int] = {}
        for r in self.txs:
            statuses[r["status"]] = statuses.get(r["status"], 0) + 1
        return {
            "type": "summary",
            "transactions": len(self.txs),
            "status_counts": dict(sorted(statuses.items())),
            "guarantee_latency_mean_ms": mean,
            "guarantee_latency_min_ms": min(lat) if lat else None,
            "guarantee_latency_max_ms": max(lat) if lat else None,
            "on_chain_baseline_ms": self.on_chain_baseline,
            "speedup": (self.on_chain_baseline / mean) if mean else None,
            "arbitrations": self.arbitrations,
            "withdrawals": self.withdrawals,
            "events": self.events,
            "epochs": self.epochs,
            "boundary_audits": self.boundary_audits,
            **extra,
        }


def metrics_lines(records: list[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in records)


# -- event engine -------------------------------------------------------------------------

@dataclass(order=True)
class Event:
    time: int
    seq: int
    dest: str = field(compare=False)
    kind: str = field(compare=False)
    payload: Any = field(compare=False, default=None)


class EventQueue:
    def __init__(self) -> None:
        self._heap: list[Event] = []
        self._seq = 0
        self.now = 0

    def schedule(self, dest: str, kind: str, payload: Any, delay: int) -> Event:
        if delay < 0:
            raise ValueError("negative delay")
        ev = Event(self.now + delay, self._seq, dest, kind, payload)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def next_event(self) -> Event | None:
        if not self._heap:
            return None
        ev = heapq.heappop(self._heap)
        self.now = ev.time
        return ev

    def __len__(self) -> int:
        return len(self._heap)


# -- adversaries ---------------------------------------------------------------------------

class Adversarial(Node):
    """Delegates to an honest node except at the overridden trigger points."""

    def __init__(self, inner: Node, target: Address) -> None:
        self.inner = inner
        self.target = target
        self.node_id = inner.node_id

    def __getattr__(self, name: str):
        return getattr(self.inner, name)


class OmitGuaranteeFromBlock(Adversarial):
    def block_records(self, world: "World") -> list:
        return [r for r in self.inner.block_records(world)
                if not (isinstance(r, Guarantee) and r.txinfo.payer == self.target)]


class StaleEpochGsig(Adversarial):
    def on_pg2(self, pg2, world: "World") -> None:
        led = world.ledger
        if pg2.pg1.txinfo.payer != self.target or len(led.epochs) < 2:
            return self.inner.on_pg2(pg2, world)
        prev = led.epochs[-2]
        roster = list(prev.rosters[self.inner.shard])
        g = make_guarantee([world.keys[a] for a in roster], pg2, prev.index, self.inner.shard, roster)
        world.metrics.event("stale_gsig_issued", pg2.pg1.txinfo.id, epoch=prev.index)
        self.inner.emit_guarantee(g, world)


class OverspendPayer(Adversarial):
    def on_pay(self, intent: PaymentIntent, world: "World") -> None:
        if intent.tag == "attack":
            balance = world.ledger.account(self.inner.addr).balance
            intent = PaymentIntent(intent.payee, balance, max(intent.fee, 1), intent.tag)
        self.inner.on_pay(intent, world)


class ReplayTxSN(Adversarial):
    def on_pay(self, intent: PaymentIntent, world: "World") -> None:
        if intent.tag == "replay" and self.inner.last_txinfo is not None:
            self.inner.start_payment(intent, world, txinfo=self.inner.last_txinfo)
            return
        self.inner.on_pay(intent, world)


class ExpiredWithdrawalCert(Adversarial):
    def on_certificate(self, cert, world: "World") -> None:
        world.timer(world.params.time_interval + 1, self.node_id, "submit_cert", cert)


class SilentElectedGuarantor(Adversarial):
    def on_txinfo(self, txinfo: TxInfo, world: "World") -> None:
        led = world.ledger
        roster = led.epoch.rosters[led.shard_of_account(txinfo.payer)]
        if txinfo.payer == self.target and roster and elect_guarantor(roster, txinfo.id)[0] == self.inner.addr:
            world.metrics.event("silent_guarantor", txinfo.id, guarantor=self.inner.addr.hex())
            return
        self.inner.on_txinfo(txinfo, world)


_WRAPPERS = {
    "omit_guarantee_from_block": (GroupNode, OmitGuaranteeFromBlock),
    "stale_epoch_gsig": (GroupNode, StaleEpochGsig),
    "overspend_payer": (ClientNode, OverspendPayer),
    "replay_txSN": (ClientNode, ReplayTxSN),
    "expired_withdrawal_cert": (ClientNode, ExpiredWithdrawalCert),
    "silent_elected_guarantor": (GuarantorNode, SilentElectedGuarantor),
}


def inject_adversary(profile: AdversaryProfile, node: Node, target: Address) -> Node:
    """Wrap ``node`` so the profile's behavior replaces the honest action."""
    role, wrapper = _WRAPPERS[profile.behavior]
    if not isinstance(node, role):
        raise ConfigError(f"{profile.behavior} does not apply to {type(node).__name__}")
    return wrapper(node, target)


def adversary_roles(behavior: str) -> type:
    return _WRAPPERS[behavior][0]


# -- world ---------------------------------------------------------------------------------------

def derive_keys(seed: int, role: str, index: int) -> KeyPair:
    return keygen(hash_digest(b"sim/key/" + role.encode() + seed.to_bytes(8, "big")
                              + index.to_bytes(8, "big")))


class World:
    def __init__(self, config: SimConfig) -> None:
        self.config = config.validate()
        self.params = config.params
        self.rng = SplitMix64(config.seed)
        self.net_rng = self.rng.fork("latency")
        self.workload_rng = self.rng.fork("workload")
        self.lottery_rng = self.rng.fork("lottery")
        self.queue = EventQueue()
        self.metrics = Metrics(config.public_chain_confirmation_delay)
        self.event_index = 0
        self._trace = hashlib.sha256()
        self.claims: list = []
        self._mining = False
        self._audited_heights: dict[int, int] = {}

        seed = config.seed
        self.keys: dict[Address, KeyPair] = {}
        guarantor_keys = [derive_keys(seed, "guarantor", i) for i in range(config.guarantors)]
        client_keys = [derive_keys(seed, "client", i) for i in range(config.clients)]
        tee_keys = derive_keys(seed, "tee", 0)
        self.late_keys = derive_keys(seed, "late-guarantor", 0) if config.late_guarantor_at else None

        self.chain = PublicChainState(tee_pk=tee_keys.pk, time_interval=self.params.time_interval)
        for k in guarantor_keys:
            self.chain.fund(k.address, config.guarantor_deposit + config.external_float)
        for k in client_keys:
            self.chain.fund(k.address, config.client_deposit + config.external_float)
        if self.late_keys:
            self.chain.fund(self.late_keys.address, config.guarantor_deposit + config.external_float)
        for k, kind, dep in (
            [(k, GUARANTOR, config.guarantor_deposit) for k in guarantor_keys]
            + [(k, CLIENT, config.client_deposit) for k in client_keys]
        ):
            if k.address in self.keys:
                raise ConfigError(f"address collision {k.address.hex()}")
            self.keys[k.address] = k
            status = self.chain.register_account(k.address, dep, kind,
                                                 sign_registration(k, dep, kind))
            if status is not Status.SUCCESS:
                raise ConfigError("genesis registration failed")

        g_addrs = [k.address for k in guarantor_keys]
        epoch0 = derive_epoch(0, genesis_hash(seed), g_addrs, self.params.shard_bits)
        self.ledger = LedgerState.bootstrap_from_membership(
            self.chain.read_membership(), self.params, epoch0)
        self.tee = TeeState(tee_keys, self.ledger)

        self.nodes: dict[str, Node] = {}
        self.clients = [ClientNode(k) for k in client_keys]
        for c in self.clients:
            self.nodes[c.node_id] = c
        for k in guarantor_keys:
            n = GuarantorNode(k)
            self.nodes[n.node_id] = n
        for s in range(self.params.shard_count):
            self.nodes[f"group:{s}"] = GroupNode(s)
        self.nodes["tee"] = TeeNode(self.tee)
        self.metrics.epochs.append(self._epoch_summary())

        self.attack_payer = self.clients[0].addr
        self.attack_payee = self.clients[1].addr
        if config.adversary is not None:
            self._inject(config.adversary)

    def _inject(self, profile: AdversaryProfile) -> None:
        if profile.target == "attack":
            target = self.attack_payer
        else:
            try:
                target = Address(bytes.fromhex(profile.target))
            except ValueError as e:
                raise ConfigError(f"bad adversary target {profile.target!r}") from e
        role = adversary_roles(profile.behavior)
        if role is ClientNode:
            node_id = f"client:{target.hex()}"
            if node_id not in self.nodes:
                raise ConfigError("adversary target is not a client")
            self.nodes[node_id] = inject_adversary(profile, self.nodes[node_id], target)
        else:
            for nid, node in list(self.nodes.items()):
                if isinstance(node, role):
                    self.nodes[nid] = inject_adversary(profile, node, target)

    def _epoch_summary(self) -> dict:
        e = self.ledger.epoch
        return {
            "epoch": e.index,
            "global_hash": e.global_hash.hex(),
            "roster_sizes": [len(e.rosters[s]) for s in sorted(e.rosters)],
        }

    # -- plumbing used by nodes ---------------------------------------------------------

    @property
    def now(self) -> int:
        return self.queue.now

    def send(self, src: str, dest: str, kind: str, payload) -> None:
        self.queue.schedule(dest, kind, payload, self.config.latency.sample(self.net_rng))

    def timer(self, delay: int, dest: str, kind: str, payload) -> None:
        self.queue.schedule(dest, kind, payload, delay)

    def client(self, addr: Address) -> ClientNode:
        node = self.nodes[f"client:{addr.hex()}"]
        return node.inner if hasattr(node, "inner") else node

    def assemble(self, payer: ClientNode, payee: ClientNode, amount: int, fee: int) -> TxInfo:
        txsn = self.ledger.account(payer.addr).next_txsn
        t = assemble_txinfo(payer.keys, payee.keys, amount, fee, txsn, payee.allocate_payee_sn())
        payee.cosigned[t.id] = t
        return t

    def make_receipt(self, payee: ClientNode, g: Guarantee):
        return make_receipt(payee.keys, g)

    def make_withdrawal_request(self, client: ClientNode, token: int):
        return make_withdrawal_request(client.keys, token)

    def redeem(self, client: ClientNode, cert) -> None:
        status = self.chain.withdraw(cert, self.now)
        if status is Status.SUCCESS:
            self.ledger.finalize_withdrawal(cert.digest)
            if not self.ledger.account(cert.addr).active:
                self.chain.deactivate(cert.addr)
        self.metrics.withdrawal(cert.addr, "withdraw:" + status.value, cert.token, self.now)

    def submit_claim(self, record) -> None:
        self.claims.append(record)
        if not self._mining:
            self._mining = True
            self.timer(self.config.arbitration_delay, "arbiter", "mine", None)

    # -- system events --------------------------------------------------------------------

    def _on_round(self) -> None:
        led = self.ledger
        for s in range(self.params.shard_count):
            group = self.nodes[f"group:{s}"]
            records = group.block_records(self)
            block = produce_block(led, s, records, group.signers(self))
            led.append_block(block)
            group.prune(self)
        if epoch_ready(led):
            epoch_tick(led, self.now)
            self.metrics.epochs.append(self._epoch_summary())
            self.check_invariants()
            self.metrics.boundary_audits += 1
        for c in self.clients:
            for txid, g in c.accepted.items():
                if txid in c.claimed or txid in led.recorded:
                    continue
                if led.record_chains[g.expectation.shard].height > g.expectation.height_max:
                    self.timer(0, c.node_id, "check_window", txid)
        if self.now + self.config.block_interval <= self.config.duration:
            self.timer(self.config.block_interval, "system", "round", None)

    def _on_mine(self) -> None:
        records, self.claims, self._mining = self.claims, [], False
        block = append_arbitration_block(self.ledger, records, self.ledger.active_guarantors(),
                                         self.lottery_rng)
        for rec in block.records:
            self.metrics.arbitration(rec.txid, "SUCCESS", producer=block.producer.hex(),
                                     claimant=rec.claimant.hex(), compensation=rec.compensation,
                                     punishment=rec.punishment, height=block.height)

    def _on_register(self, payload) -> None:
        keys, kind, deposit = payload
        status = self.chain.register_account(keys.address, deposit, kind,
                                             sign_registration(keys, deposit, kind), now=self.now)
        if status is Status.SUCCESS:
            self.keys[keys.address] = keys
            self.ledger.add_member(keys.address, kind, deposit)
            node = GuarantorNode(keys) if kind == GUARANTOR else ClientNode(keys)
            self.nodes[node.node_id] = node
            self.metrics.events.append({"event": "registered", "addr": keys.address.hex(),
                                        "kind": kind, "time": self.now,
                                        "epoch": self.ledger.epoch.index})

    def check_invariants(self) -> None:
        violations = audit.check_world(self, self._audited_heights)
        self._audited_heights = {s: c.height + 1 for s, c in self.ledger.record_chains.items()}
        if violations:
            v = violations[0]
            raise InvariantViolation(v.invariant, self.event_index, v.detail)

    def dispatch(self, ev: Event) -> None:
        self._trace.update(f"{ev.time}|{ev.seq}|{ev.dest}|{ev.kind}\n".encode())
        if ev.dest == "system":
            if ev.kind == "round":
                self._on_round()
            elif ev.kind == "register":
                self._on_register(ev.payload)
            return
        if ev.dest == "arbiter":
            self._on_mine()
            return
        node = self.nodes.get(ev.dest)
        if node is None:
            log.debug("dropping %s for unknown node %s", ev.kind, ev.dest)
            return
        log.debug("t=%d %s <- %s", ev.time, ev.dest, ev.kind)
        node.handle(ev.kind, ev.payload, self)

    def run(self) -> None:
        self.timer(self.config.block_interval, "system", "round", None)
        while True:
            ev = self.queue.next_event()
            if ev is None or ev.time > self.config.duration:
                break
            self.event_index += 1
            self.dispatch(ev)
        self.check_invariants_full()

    def check_invariants_full(self) -> None:
        self._audited_heights = {}
        self.check_invariants()

    @property
    def trace_digest(self) -> str:
        return self._trace.hexdigest()


@dataclass
class RunResult:
    world: World
    records: list[dict]

    @property
    def ledger(self) -> LedgerState:
        return self.world.ledger

    @property
    def summary(self) -> dict:
        return self.records[-1]

    def lines(self) -> str:
        return metrics_lines(self.records)


def run_scenario(config: SimConfig, setup=None) -> RunResult:
    """Run a configured scenario to completion.

    ``setup(world)`` schedules the workload; by default the built-in workload
    for ``config.scenario`` is used.
    """
    from .scenarios import schedule_workload

    world = World(config)
    (setup or schedule_workload)(world)
    world.run()
    world.metrics.finalize(world.ledger)
    summary = world.metrics.summary({
        "scenario": config.scenario,
        "seed": config.seed,
        "events_processed": world.event_index,
        "trace_digest": world.trace_digest,
        "audit": "PASS",
        "final_epoch": world.ledger.epoch.index,
        "arbitration_height": len(world.ledger.arbitration_chain) - 1,
    })
    return RunResult(world, world.metrics.txs + [summary])
