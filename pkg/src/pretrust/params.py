"""Protocol security parameters."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction


class ConfigError(ValueError):
    pass


def as_fraction(value) -> Fraction:
    """Accept ints, decimal strings, ``"p/q"`` strings and Fractions."""
    if isinstance(value, float):
        return Fraction(str(value))
    return Fraction(value)


@dataclass(frozen=True)
class SecurityParams:
    shard_bits: int = 2
    blocks_per_epoch: int = 4
    collateral_ratio: Fraction = Fraction(2)
    compensation_weight: Fraction = Fraction(3, 2)
    punishment_weight: Fraction = Fraction(1, 2)
    time_interval: int = 5_000  # ms
    fee_share_guarantor: Fraction = Fraction(1, 2)
    expectation_window: int = 2  # blocks
    response_timeout: int = 200  # ms, per fallback rank

    def __post_init__(self) -> None:
        for name in ("collateral_ratio", "compensation_weight", "punishment_weight",
                     "fee_share_guarantor"):
            object.__setattr__(self, name, as_fraction(getattr(self, name)))

    @property
    def shard_count(self) -> int:
        return 1 << self.shard_bits

    def validate(self) -> "SecurityParams":
        if self.shard_bits < 0 or self.shard_bits > 16:
            raise ConfigError("shard_bits must be in [0, 16]")
        if self.blocks_per_epoch <= 0:
            raise ConfigError("blocks_per_epoch must be positive")
        if self.collateral_ratio < 1:
            raise ConfigError("collateral_ratio must be >= 1")
        if self.compensation_weight <= 0 or self.punishment_weight <= 0:
            raise ConfigError("compensation and punishment weights must be positive")
        if not 0 <= self.fee_share_guarantor <= 1:
            raise ConfigError("fee_share_guarantor must be in [0, 1]")
        if self.time_interval <= 0 or self.expectation_window <= 0:
            raise ConfigError("time_interval and expectation_window must be positive")
        if self.response_timeout <= 0:
            raise ConfigError("response_timeout must be positive")
        # ratio*(c+fee) >= c*(comp+pun) for every c > 0, fee >= 0
        if self.collateral_ratio < self.compensation_weight + self.punishment_weight:
            raise ConfigError(
                "collateral_ratio must be >= compensation_weight + punishment_weight "
                "so arbitration is always payable from the lock"
            )
        return self

    def lock_amount(self, amount: int, fee: int) -> int:
        return math.ceil((amount + fee) * self.collateral_ratio)

    def compensation(self, amount: int) -> int:
        return math.floor(amount * self.compensation_weight)

    def punishment(self, amount: int) -> int:
        return math.floor(amount * self.punishment_weight)

    def to_json(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, Fraction):
                out[k] = str(v)
        return out

    @classmethod
    def from_json(cls, data: dict) -> "SecurityParams":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown params: {sorted(unknown)}")
        return cls(**data).validate()
