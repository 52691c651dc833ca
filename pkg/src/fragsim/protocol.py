"""Node and gateway state machines for the four transmission strategies.

Nodes run pure ALOHA under a per-channel duty-cycle timer.  Fragmenting
strategies split every packet into ``n_f`` near-equal fragments that are
sent back to back (each one waiting out its own off-time).  With group-NACK
retransmissions the final fragment of a session asks the gateway for a
bitmap of what arrived; the node then resends exactly the missing fragments,
reusing their sequence numbers.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from .errors import ConfigError, ProtocolError
from .phy import DutyCycleLimiter

log = logging.getLogger(__name__)

DEFAULT_HEADER_BYTES = 9


class StrategyKind(str, Enum):
    ALOHA = "aloha"
    BUFFERED_ALOHA = "buffered_aloha"
    FRAG_NO_RETX = "frag"
    FRAG_RETX = "frag_retx"


@dataclass(frozen=True)
class Strategy:
    kind: StrategyKind
    fragments_per_packet: int = 1
    retx_sessions_max: int = 0

    def __post_init__(self):
        kind = StrategyKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in (StrategyKind.ALOHA, StrategyKind.BUFFERED_ALOHA):
            if self.fragments_per_packet != 1 or self.retx_sessions_max != 0:
                raise ConfigError(f"{kind.value} sends whole packets without retransmissions")
        else:
            if self.fragments_per_packet < 2:
                raise ConfigError("fragmenting strategies need fragments_per_packet >= 2")
            if kind is StrategyKind.FRAG_RETX and self.retx_sessions_max < 1:
                raise ConfigError("frag_retx needs retx_sessions_max >= 1")
            if kind is StrategyKind.FRAG_NO_RETX and self.retx_sessions_max != 0:
                raise ConfigError("frag does not retransmit; use frag_retx")

    @property
    def fragmented(self) -> bool:
        return self.kind in (StrategyKind.FRAG_NO_RETX, StrategyKind.FRAG_RETX)

    @property
    def buffered(self) -> bool:
        return self.kind is not StrategyKind.ALOHA

    @property
    def label(self) -> str:
        if self.kind is StrategyKind.FRAG_NO_RETX:
            return f"frag{self.fragments_per_packet}"
        if self.kind is StrategyKind.FRAG_RETX:
            return f"frag{self.fragments_per_packet}_retx{self.retx_sessions_max}"
        return self.kind.value

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        """Inverse of :attr:`label`: ``aloha``, ``buffered_aloha``, ``frag3``, ``frag3_retx1``."""
        text = text.strip().lower()
        if text in ("aloha", "buffered_aloha"):
            return cls(StrategyKind(text))
        try:
            if text.startswith("frag"):
                head, _, tail = text[4:].partition("_retx")
                n_f = int(head)
                if tail:
                    return cls(StrategyKind.FRAG_RETX, n_f, int(tail))
                return cls(StrategyKind.FRAG_NO_RETX, n_f)
        except ValueError:
            pass
        raise ConfigError(f"unknown strategy {text!r}")

    @classmethod
    def build(cls, kind: str, fragments: int | None = None, sessions: int | None = None) -> "Strategy":
        kind = StrategyKind(kind)
        if kind is StrategyKind.FRAG_RETX:
            return cls(kind, fragments or 2, 1 if sessions is None else sessions)
        if kind is StrategyKind.FRAG_NO_RETX:
            return cls(kind, fragments or 2)
        return cls(kind)


@dataclass(frozen=True)
class AppPacket:
    packet_id: int
    node: int
    payload_bytes: int = 200
    generated_at: float = 0.0

    def __post_init__(self):
        if self.payload_bytes < 1:
            raise ValueError("payload_bytes must be >= 1")


@dataclass(frozen=True)
class Fragment:
    packet_id: int
    seq_index: int
    payload_bytes: int
    header_bytes: int = DEFAULT_HEADER_BYTES
    requests_nack: bool = False
    # last fragment of its session (first pass or retransmission round)
    final: bool = False
    retransmission: bool = False

    @property
    def frame_bytes(self) -> int:
        return self.payload_bytes + self.header_bytes


@dataclass(frozen=True)
class GroupNack:
    node: int
    packet_id: int
    bitmap: tuple[int, ...]
    header_bytes: int = DEFAULT_HEADER_BYTES

    def __post_init__(self):
        if all(self.bitmap):
            raise ProtocolError(f"NACK for packet {self.packet_id} has nothing to resend")

    @property
    def frame_bytes(self) -> int:
        return self.header_bytes + math.ceil(len(self.bitmap) / 8)

    @property
    def missing(self) -> list[int]:
        return [i for i, bit in enumerate(self.bitmap) if not bit]

    def bits(self) -> str:
        return "".join(str(b) for b in self.bitmap)


def fragment_payload(payload_bytes: int, n_f: int) -> list[int]:
    """Split a payload into ``n_f`` sizes differing by at most one byte, larger first."""
    if n_f < 1:
        raise ConfigError(f"n_f must be >= 1, got {n_f}")
    if payload_bytes < n_f:
        raise ConfigError(f"cannot split {payload_bytes} B into {n_f} fragments")
    base, extra = divmod(payload_bytes, n_f)
    return [base + 1] * extra + [base] * (n_f - extra)


@dataclass
class InFlight:
    """Send progress of the packet a fragmenting node is working on."""

    packet: AppPacket
    sizes: list[int]
    pending: deque = field(default_factory=deque)
    sessions_used: int = 0
    awaiting_nack: bool = False


Frame = Union[AppPacket, Fragment]


@dataclass(frozen=True)
class Uplink:
    frame: Frame
    channel: int
    frame_bytes: int
    # first air time of this packet; drives M_sent
    first: bool


class NodeAction(str, Enum):
    DROP = "drop"
    QUEUE = "queue"
    SEND = "send"


@dataclass
class NodeState:
    index: int
    strategy: Strategy
    duty_cycle: DutyCycleLimiter
    packet_header_bytes: int = DEFAULT_HEADER_BYTES
    fragment_header_bytes: int = DEFAULT_HEADER_BYTES
    buffer: deque = field(default_factory=deque)
    in_flight: Optional[InFlight] = None
    on_air: bool = False

    @property
    def awaiting_nack(self) -> bool:
        return self.in_flight is not None and self.in_flight.awaiting_nack

    @property
    def idle(self) -> bool:
        return not self.on_air and not self.awaiting_nack

    @property
    def drained(self) -> bool:
        return self.idle and self.in_flight is None and not self.buffer


def on_packet_generated(node: NodeState, pkt: AppPacket, now: float) -> NodeAction:
    channel_free = bool(node.duty_cycle.available(now))
    if not node.strategy.buffered:
        if node.on_air or not channel_free:
            return NodeAction.DROP
        node.buffer.append(pkt)
        return NodeAction.SEND
    node.buffer.append(pkt)
    return NodeAction.SEND if node.idle and channel_free else NodeAction.QUEUE


def _first_session(node: NodeState, pkt: AppPacket) -> InFlight:
    strategy = node.strategy
    sizes = fragment_payload(pkt.payload_bytes, strategy.fragments_per_packet)
    ask = strategy.kind is StrategyKind.FRAG_RETX
    last = len(sizes) - 1
    frags = deque(
        Fragment(
            pkt.packet_id, i, size, node.fragment_header_bytes,
            requests_nack=ask and i == last, final=i == last,
        )
        for i, size in enumerate(sizes)
    )
    return InFlight(pkt, sizes, frags)


def next_uplink(node: NodeState, now: float, rng: np.random.Generator | None = None) -> Optional[Uplink]:
    """Pop the next frame the node may put on air at ``now``, if any."""
    if not node.idle:
        return None
    channels = node.duty_cycle.available(now)
    if not channels:
        return None
    flight = node.in_flight
    if flight is None or not flight.pending:
        if not node.buffer:
            return None
        pkt = node.buffer.popleft()
        if not node.strategy.fragmented:
            channel = _pick(channels, rng)
            return Uplink(pkt, channel, pkt.payload_bytes + node.packet_header_bytes, True)
        flight = node.in_flight = _first_session(node, pkt)
    frag = flight.pending.popleft()
    first = frag.seq_index == 0 and not frag.retransmission
    if frag.final:
        if frag.requests_nack:
            flight.awaiting_nack = True
        else:
            node.in_flight = None
    return Uplink(frag, _pick(channels, rng), frag.frame_bytes, first)


def _pick(channels: list[int], rng: np.random.Generator | None) -> int:
    if len(channels) == 1 or rng is None:
        return channels[0]
    return channels[int(rng.integers(len(channels)))]


def nack_timeout(node: NodeState) -> None:
    """Both receive windows closed empty: the packet is over for the node."""
    if node.awaiting_nack:
        node.in_flight = None


def node_on_nack(node: NodeState, nack: GroupNack) -> list[Fragment]:
    """Queue a retransmission session for the zero bits of ``nack``."""
    flight = node.in_flight
    if flight is None or not flight.awaiting_nack or flight.packet.packet_id != nack.packet_id:
        log.warning("node %d: stale NACK for packet %d ignored", node.index, nack.packet_id)
        return []
    budget = node.strategy.retx_sessions_max
    if flight.sessions_used >= budget:
        log.warning("node %d: NACK beyond session budget ignored", node.index)
        return []
    missing = nack.missing
    if not missing:
        log.error("node %d: NACK without missing fragments", node.index)
        node.in_flight = None
        return []
    flight.sessions_used += 1
    ask = flight.sessions_used < budget
    plan = [
        Fragment(
            flight.packet.packet_id, i, flight.sizes[i], node.fragment_header_bytes,
            requests_nack=ask and i == missing[-1], final=i == missing[-1],
            retransmission=True,
        )
        for i in missing
    ]
    flight.pending.extendleft(reversed(plan))
    flight.awaiting_nack = False
    return plan


@dataclass
class PacketRecord:
    n_f: int
    bitmap: list[bool]
    nacks_sent: int = 0
    status: str = "open"

    @property
    def complete(self) -> bool:
        return all(self.bitmap)


@dataclass
class Reception:
    correct: Optional[tuple[int, int]] = None
    nack: Optional[GroupNack] = None
    discarded: list[tuple[int, int]] = field(default_factory=list)


class GatewayState:
    """Reassembly bookkeeping and NACK issuance at the gateway."""

    def __init__(self, strategy: Strategy, nack_header_bytes: int = DEFAULT_HEADER_BYTES):
        self.strategy = strategy
        self.nack_header_bytes = nack_header_bytes
        self.packets: dict[tuple[int, int], PacketRecord] = {}
        self.current: dict[int, int] = {}
        self.delivered: list[tuple[int, int, float]] = []
        self.discarded: list[tuple[int, int, float]] = []

    def _discard(self, key: tuple[int, int], now: float, out: Reception) -> None:
        rec = self.packets[key]
        if rec.status == "open":
            rec.status = "discarded"
            self.discarded.append((*key, now))
            out.discarded.append(key)

    def _correct(self, key: tuple[int, int], now: float, out: Reception) -> None:
        self.delivered.append((*key, now))
        out.correct = key

    def on_reception(self, node: int, frame: Frame, now: float) -> Reception:
        out = Reception()
        if isinstance(frame, AppPacket):
            key = (node, frame.packet_id)
            if key not in self.packets:
                self.packets[key] = PacketRecord(1, [True], status="correct")
                self._correct(key, now, out)
            return out

        key = (node, frame.packet_id)
        previous = self.current.get(node)
        if previous is not None and previous != frame.packet_id:
            # nodes finish a packet before starting the next one
            self._discard((node, previous), now, out)
        self.current[node] = frame.packet_id
        rec = self.packets.get(key)
        if rec is None:
            n_f = self.strategy.fragments_per_packet
            rec = self.packets[key] = PacketRecord(n_f, [False] * n_f)
        if rec.status != "open":
            return out
        rec.bitmap[frame.seq_index] = True
        if rec.complete:
            rec.status = "correct"
            self._correct(key, now, out)
        elif frame.final:
            if frame.requests_nack and rec.nacks_sent < self.strategy.retx_sessions_max:
                rec.nacks_sent += 1
                out.nack = GroupNack(
                    node, frame.packet_id, tuple(int(b) for b in rec.bitmap), self.nack_header_bytes
                )
            else:
                self._discard(key, now, out)
        return out

    def finalize(self, now: float) -> list[tuple[int, int]]:
        out = Reception()
        for key in sorted(self.packets):
            self._discard(key, now, out)
        return out.discarded

    @property
    def correct_count(self) -> int:
        return len(self.delivered)
