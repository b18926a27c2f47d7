"""Built-in scenario fixtures and the workload they schedule."""

from __future__ import annotations

from dataclasses import replace

from .ledger import GUARANTOR
from .params import ConfigError
from .protocol import PaymentIntent, WithdrawalIntent
from .simulator import AdversaryProfile, SimConfig, World

BUILTIN = {
    "happy_path": dict(late_guarantor_at=5_500),
    "omit_guarantee": dict(adversary=AdversaryProfile("omit_guarantee_from_block")),
    "overspend": dict(adversary=AdversaryProfile("overspend_payer")),
    "replay_sn": dict(adversary=AdversaryProfile("replay_txSN")),
    "stale_gsig": dict(adversary=AdversaryProfile("stale_epoch_gsig")),
    "expired_cert": dict(adversary=AdversaryProfile("expired_withdrawal_cert")),
    "silent_guarantor": dict(adversary=AdversaryProfile("silent_elected_guarantor")),
    "withdrawal_roundtrip": dict(),
}

WITHDRAWAL_SCENARIOS = ("expired_cert", "withdrawal_roundtrip")
REPLAY_DELAY = 4_000


def scenario_names() -> list[str]:
    return list(BUILTIN)


def builtin_config(name: str, seed: int = 42, **overrides) -> SimConfig:
    if name not in BUILTIN:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(BUILTIN)}")
    fields = {"scenario": name, "seed": seed, **BUILTIN[name], **overrides}
    return SimConfig(**fields).validate()


def with_seed(config: SimConfig, seed: int) -> SimConfig:
    return replace(config, seed=seed)


def schedule_background(world: World) -> None:
    """Random small payments among the clients not involved in the attack."""
    cfg = world.config
    rng = world.workload_rng
    pool = world.clients[2:]
    latest = max(cfg.duration - 12_000, 200)
    for payer in pool:
        for _ in range(cfg.payments_per_client):
            payee = pool[rng.below(len(pool) - 1)]
            if payee is payer:
                payee = pool[-1]
            at = rng.uniform_int(200, latest)
            intent = PaymentIntent(payee.addr, rng.uniform_int(1, 20), rng.uniform_int(0, 3))
            world.timer(at, payer.node_id, "pay", intent)


def schedule_workload(world: World) -> None:
    cfg = world.config
    if cfg.scenario not in BUILTIN:
        raise ConfigError(f"unknown scenario {cfg.scenario!r}")
    schedule_background(world)
    attacker = f"client:{world.attack_payer.hex()}"
    if cfg.scenario in WITHDRAWAL_SCENARIOS:
        world.timer(cfg.attack_time, attacker, "withdraw",
                    WithdrawalIntent(cfg.withdrawal_amount, "attack"))
    else:
        intent = PaymentIntent(world.attack_payee, cfg.attack_amount, cfg.attack_fee, "attack")
        world.timer(cfg.attack_time, attacker, "pay", intent)
    if cfg.scenario == "replay_sn":
        world.timer(cfg.attack_time + REPLAY_DELAY, attacker, "pay",
                    PaymentIntent(world.attack_payee, cfg.attack_amount, cfg.attack_fee, "replay"))
    if cfg.late_guarantor_at is not None and world.late_keys is not None:
        world.timer(cfg.late_guarantor_at, "system", "register",
                    (world.late_keys, GUARANTOR, cfg.guarantor_deposit))


def config_from_json(data: dict) -> SimConfig:
    """A JSON config layered over the defaults of the scenario it names."""
    name = data.get("scenario", "happy_path")
    if name not in BUILTIN:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(BUILTIN)}")
    base = {k: (vars(v).copy() if isinstance(v, AdversaryProfile) else v)
            for k, v in BUILTIN[name].items()}
    return SimConfig.from_json({**base, **data})
