"""LoRa physical layer: airtime, duty-cycle off-time and reception outcomes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Sequence

from .errors import ConfigError

VALID_BANDWIDTHS = (125_000, 250_000, 500_000)

DEFAULT_SENSITIVITY_DBM = -123.0


@dataclass(frozen=True)
class RadioConfig:
    spreading_factor: int = 7
    bandwidth: int = 125_000
    coding_rate_denominator: int = 5
    preamble_symbols: int = 8
    explicit_header: bool = True
    crc_enabled: bool = True
    low_data_rate_optimize: bool = False
    tx_power: float = 14.0
    tx_current: float = 0.044
    rx_current: float = 0.0112
    supply_voltage: float = 3.3

    def __post_init__(self):
        validate_radio(self)

    @property
    def symbol_time(self) -> float:
        return (2**self.spreading_factor) / self.bandwidth


def validate_radio(radio: RadioConfig) -> None:
    if not 7 <= radio.spreading_factor <= 12:
        raise ConfigError(f"spreading_factor must be in 7..12, got {radio.spreading_factor}")
    if radio.bandwidth not in VALID_BANDWIDTHS:
        raise ConfigError(f"bandwidth must be one of {VALID_BANDWIDTHS}, got {radio.bandwidth}")
    if not 5 <= radio.coding_rate_denominator <= 8:
        raise ConfigError(
            f"coding_rate_denominator must be in 5..8, got {radio.coding_rate_denominator}"
        )
    if radio.preamble_symbols < 0:
        raise ConfigError("preamble_symbols must be non-negative")
    for name in ("tx_current", "rx_current", "supply_voltage"):
        if not getattr(radio, name) > 0:
            raise ConfigError(f"{name} must be strictly positive")


def compute_toa(frame_bytes: int, radio: RadioConfig) -> float:
    """Time on air in seconds of a LoRa frame carrying ``frame_bytes`` bytes."""
    if frame_bytes < 1:
        raise ConfigError(f"frame_bytes must be >= 1, got {frame_bytes}")
    return _toa(frame_bytes, radio)


@lru_cache(maxsize=4096)
def _toa(frame_bytes: int, radio: RadioConfig) -> float:
    sf = radio.spreading_factor
    de = 1 if radio.low_data_rate_optimize else 0
    ih = 0 if radio.explicit_header else 1
    crc = 1 if radio.crc_enabled else 0
    cr = radio.coding_rate_denominator - 4
    numerator = 8 * frame_bytes - 4 * sf + 28 + 16 * crc - 20 * ih
    payload_symbols = 8 + max(math.ceil(numerator / (4 * (sf - 2 * de))) * (cr + 4), 0)
    return (radio.preamble_symbols + 4.25 + payload_symbols) * radio.symbol_time


def compute_toff(toa: float, duty_cycle_percent: float) -> float:
    """Mandatory silence after a transmission of length ``toa``."""
    if not 0 < duty_cycle_percent <= 100:
        raise ConfigError(f"duty cycle must be in (0, 100], got {duty_cycle_percent}")
    if toa <= 0:
        raise ConfigError(f"toa must be positive, got {toa}")
    return toa * (100 - duty_cycle_percent) / duty_cycle_percent


@dataclass
class DutyCycleLimiter:
    """Per-channel transmit permission for one node."""

    duty_cycle_percent: float
    channels: int = 1
    next_allowed_time: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not 0 < self.duty_cycle_percent <= 100:
            raise ConfigError(f"duty cycle must be in (0, 100], got {self.duty_cycle_percent}")
        if not self.next_allowed_time:
            self.next_allowed_time = [0.0] * self.channels

    def available(self, now: float) -> list[int]:
        return [c for c, t in enumerate(self.next_allowed_time) if t <= now]

    def earliest(self) -> float:
        return min(self.next_allowed_time)

    def record(self, channel: int, end: float, toa: float) -> float:
        self.next_allowed_time[channel] = end + compute_toff(toa, self.duty_cycle_percent)
        return self.next_allowed_time[channel]


class Outcome(str, Enum):
    DELIVERED = "delivered"
    DESTROYED = "destroyed"


@dataclass
class Transmission:
    source: int
    channel: int
    start: float
    duration: float
    rx_power: float
    payload_kind: str
    frame_bytes: int
    frame: object = None
    # filled in by the engine while the transmission is on air
    interferers: list["Transmission"] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.frame_bytes < 1:
            raise ValueError("frame_bytes must be >= 1")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def overlaps(self, other: "Transmission") -> bool:
        return (
            self.channel == other.channel
            and self.start < other.end
            and other.start < self.end
        )


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def survives(
    tx: Transmission,
    overlapping: Sequence[Transmission],
    sensitivity: float,
    capture_margin: float | None,
) -> bool:
    """Fate of ``tx`` given every transmission that overlaps it in time."""
    if tx.rx_power < sensitivity:
        return False
    if not overlapping:
        return True
    if capture_margin is None:
        return False
    interference = sum(dbm_to_mw(o.rx_power) for o in overlapping)
    return tx.rx_power - 10.0 * math.log10(interference) >= capture_margin


def resolve_reception(
    transmissions: Sequence[Transmission],
    sensitivity: float = DEFAULT_SENSITIVITY_DBM,
    capture_margin: float | None = None,
) -> list[Outcome]:
    """Outcome of every transmission in a same-channel set, in input order.

    ``capture_margin=None`` disables capture: any overlap destroys all parties.
    """
    outcomes = []
    for i, tx in enumerate(transmissions):
        others = [o for j, o in enumerate(transmissions) if j != i and tx.overlaps(o)]
        ok = survives(tx, others, sensitivity, capture_margin)
        outcomes.append(Outcome.DELIVERED if ok else Outcome.DESTROYED)
    return outcomes


@dataclass(frozen=True)
class PathLoss:
    """Log-distance path loss around the gateway."""

    exponent: float = 2.7
    reference_loss_db: float = 40.0
    reference_distance: float = 1.0

    def loss(self, distance: float) -> float:
        d = max(distance, self.reference_distance)
        return self.reference_loss_db + 10.0 * self.exponent * math.log10(d / self.reference_distance)

    def rx_power(self, tx_power: float, distance: float) -> float:
        return tx_power - self.loss(distance)
