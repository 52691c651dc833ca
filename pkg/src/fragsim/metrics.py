"""Run counters, energy accounting and the four evaluation metrics.

The accumulator consumes event-log records, so the numbers computed during a
run and the numbers recomputed from a saved log go through the same code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

from .errors import ConfigError
from .phy import RadioConfig, compute_toa
from .protocol import fragment_payload

UNDEFINED = "undefined"


class LogRecord(NamedTuple):
    time: float
    kind: str
    subject: str
    channel: int = -1
    bytes: int = 0
    outcome: str = "-"
    detail: str = "-"

    def to_line(self) -> str:
        channel = "-" if self.channel < 0 else str(self.channel)
        return f"{self.time!r}\t{self.kind}\t{self.subject}\t{channel}\t{self.bytes}\t{self.outcome}\t{self.detail}"

    @classmethod
    def from_line(cls, line: str) -> "LogRecord":
        time, kind, subject, channel, nbytes, outcome, detail = line.rstrip("\n").split("\t")
        return cls(float(time), kind, subject, -1 if channel == "-" else int(channel), int(nbytes), outcome, detail)

    def fields(self) -> dict[str, str]:
        if self.detail == "-":
            return {}
        return dict(item.split("=", 1) for item in self.detail.split(";"))


def goodput(m_correct: int, m_sent: int) -> Optional[float]:
    """Percentage of sent packets that reached the gateway complete."""
    if m_sent <= 0:
        return None
    return 100.0 * m_correct / m_sent


def app_capacity(m_correct: int, m_asked: int) -> Optional[float]:
    """Percentage of application-generated packets that reached the gateway."""
    if m_asked <= 0:
        return None
    return 100.0 * m_correct / m_asked


def energy_efficiency(energy_joules: float, m_correct: int) -> Optional[float]:
    if m_correct <= 0:
        return None
    return energy_joules / m_correct


def header_overhead(
    n_f: int,
    payload_bytes: int = 200,
    header_bytes: int = 9,
    radio: RadioConfig | None = None,
    toa=None,
) -> float:
    """Extra airtime (hence energy) in percent of sending a packet as ``n_f`` fragments.

    Every fragment and the unfragmented packet carry ``header_bytes``.  ``toa``
    overrides the airtime model (bytes -> seconds); it defaults to the LoRa
    formula for ``radio``.
    """
    if n_f < 2:
        raise ConfigError(f"header overhead needs n_f >= 2, got {n_f}")
    if toa is None:
        radio = radio or RadioConfig()
        toa = lambda nbytes: compute_toa(nbytes, radio)  # noqa: E731
    fragments = sum(toa(size + header_bytes) for size in fragment_payload(payload_bytes, n_f))
    return 100.0 * (fragments / toa(payload_bytes + header_bytes) - 1.0)


@dataclass
class NodeMetrics:
    m_asked: int = 0
    m_sent: int = 0
    m_correct: int = 0
    dropped: int = 0
    transmissions: int = 0
    energy_joules: float = 0.0


@dataclass(frozen=True)
class MetricsReport:
    m_asked: int
    m_sent: int
    m_correct: int
    energy_joules: float
    gateway_energy_joules: float
    dropped: int
    discarded: int
    nacks: int
    transmissions: int
    per_node: tuple[NodeMetrics, ...] = field(default=(), compare=True)

    @property
    def goodput_percent(self) -> Optional[float]:
        return goodput(self.m_correct, self.m_sent)

    @property
    def app_capacity_percent(self) -> Optional[float]:
        return app_capacity(self.m_correct, self.m_asked)

    @property
    def energy_per_correct_packet(self) -> Optional[float]:
        return energy_efficiency(self.energy_joules, self.m_correct)


def _node_index(subject: str) -> int:
    return int(subject[1:])


class MetricsAccumulator:
    """Folds event-log records into counters and energy totals."""

    def __init__(self, radio: RadioConfig, node_count: int, rx_window_seconds: float):
        self.radio = radio
        self.rx_window_seconds = rx_window_seconds
        self.nodes = [NodeMetrics() for _ in range(node_count)]
        self.energy = 0.0
        self.gateway_energy = 0.0
        self.discarded = 0
        self.nacks = 0
        self._tx_power_w = radio.supply_voltage * radio.tx_current
        self._rx_power_w = radio.supply_voltage * radio.rx_current

    def observe(self, rec: LogRecord) -> None:
        kind = rec.kind
        if kind == "TxStart":
            node = self.nodes[_node_index(rec.subject)]
            joules = self._tx_power_w * compute_toa(rec.bytes, self.radio)
            node.energy_joules += joules
            node.transmissions += 1
            self.energy += joules
            if ";first=1" in rec.detail:
                node.m_sent += 1
        elif kind == "PacketGenerated":
            self.nodes[_node_index(rec.subject)].m_asked += 1
        elif kind == "PacketDropped":
            self.nodes[_node_index(rec.subject)].dropped += 1
        elif kind == "RxWindowOpen":
            joules = self._rx_power_w * self.rx_window_seconds
            self.nodes[_node_index(rec.subject)].energy_joules += joules
            self.energy += joules
        elif kind == "NackTx":
            toa = compute_toa(rec.bytes, self.radio)
            joules = self._rx_power_w * toa
            self.nodes[int(rec.fields()["node"])].energy_joules += joules
            self.energy += joules
            self.gateway_energy += self._tx_power_w * toa
            self.nacks += 1
        elif kind == "PacketCorrect":
            self.nodes[int(rec.fields()["node"])].m_correct += 1
        elif kind == "PacketDiscarded":
            self.discarded += 1

    def report(self) -> MetricsReport:
        nodes = tuple(NodeMetrics(**vars(n)) for n in self.nodes)
        return MetricsReport(
            m_asked=sum(n.m_asked for n in nodes),
            m_sent=sum(n.m_sent for n in nodes),
            m_correct=sum(n.m_correct for n in nodes),
            energy_joules=self.energy,
            gateway_energy_joules=self.gateway_energy,
            dropped=sum(n.dropped for n in nodes),
            discarded=self.discarded,
            nacks=self.nacks,
            transmissions=sum(n.transmissions for n in nodes),
            per_node=nodes,
        )


def replay(records: Iterable[LogRecord], radio: RadioConfig, node_count: int, rx_window_seconds: float) -> MetricsReport:
    acc = MetricsAccumulator(radio, node_count, rx_window_seconds)
    for rec in records:
        acc.observe(rec)
    return acc.report()


CSV_FIELDS = (
    "node_count", "strategy", "n_f", "retx_sessions", "seed", "m_asked", "m_sent",
    "m_correct", "goodput_pct", "app_capacity_pct", "energy_J", "energy_per_pkt_J",
    "header_overhead_pct",
)


def fmt(value: Optional[float]) -> str:
    if value is None or (isinstance(value, float) and not math.isfinite(value)):
        return UNDEFINED
    return repr(float(value))


def parse_value(text: str) -> Optional[float]:
    return None if text == UNDEFINED else float(text)
