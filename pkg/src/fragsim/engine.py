"""Deterministic discrete-event engine driving the node and gateway machines."""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Iterator, TextIO

import numpy as np

from . import protocol as proto
from .config import ScenarioConfig
from .metrics import LogRecord, MetricsAccumulator, MetricsReport
from .phy import DutyCycleLimiter, PathLoss, Transmission, compute_toa, survives

log = logging.getLogger(__name__)


class EventKind(IntEnum):
    # value doubles as the tie-break rank at equal (time, node)
    PacketGenerated = 0
    TxStart = 1
    TxEnd = 2
    RxWindowOpen = 3
    RxWindowClose = 4
    NackTx = 5
    ChannelFree = 6


class Stream(IntEnum):
    TRAFFIC = 0
    PLACEMENT = 1
    CHANNEL = 2


def rng_for(seed: int, node: int, purpose: Stream) -> np.random.Generator:
    """Independent generator for one (node, purpose) pair of a run."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(node, int(purpose))))


def generate_traffic(
    packets: int,
    model: str,
    interval: float,
    rng: np.random.Generator,
) -> list[float]:
    """Generation instants of one node's ``packets`` application packets."""
    if packets < 1:
        raise ValueError("packets must be >= 1")
    if model == "periodic":
        phase = float(rng.uniform(0.0, interval))
        return [phase + k * interval for k in range(packets)]
    if model == "poisson":
        return [float(t) for t in np.cumsum(rng.exponential(interval, size=packets))]
    raise ValueError(f"unknown traffic model {model!r}")


def place_nodes(config: ScenarioConfig) -> list[float]:
    """Distance to the gateway of every node, uniform over the coverage disc."""
    distances = []
    for i in range(config.node_count):
        rng = rng_for(config.seed, i, Stream.PLACEMENT)
        distances.append(config.radius_m * math.sqrt(float(rng.uniform())))
    return distances


@dataclass
class RunResult:
    config: ScenarioConfig
    metrics: MetricsReport
    records: list[LogRecord]
    end_time: float

    def write_log(self, fh: TextIO) -> None:
        write_log(self.config, self.records, fh)


def _frame_detail(up: proto.Uplink) -> str:
    frame = up.frame
    first = int(up.first)
    if isinstance(frame, proto.AppPacket):
        return f"pkt={frame.packet_id};kind=packet;first={first}"
    return (
        f"pkt={frame.packet_id};kind=fragment;seq={frame.seq_index};first={first};"
        f"retx={int(frame.retransmission)};nack={int(frame.requests_nack)};final={int(frame.final)}"
    )


class Simulation:
    """One run of a scenario; instantiate once per (config, seed)."""

    def __init__(self, config: ScenarioConfig, keep_log: bool = True, forced_loss=None):
        config.validate()
        self.config = config
        self.keep_log = keep_log
        # test hook: predicate on a Transmission forcing its destruction
        self.forced_loss = forced_loss
        self.records: list[LogRecord] = []
        self.metrics = MetricsAccumulator(config.radio, config.node_count, config.rx_window_seconds)
        self.queue: list = []
        self._seq = 0
        self.now = 0.0
        self.toa = lambda nbytes: compute_toa(nbytes, config.radio)

        strategy = config.strategy
        self.nodes = [
            proto.NodeState(
                i, strategy, DutyCycleLimiter(config.duty_cycle_percent, len(config.channels)),
                config.packet_header_bytes, config.fragment_header_bytes,
            )
            for i in range(config.node_count)
        ]
        self.gateway = proto.GatewayState(strategy, config.nack_header_bytes)
        path_loss = PathLoss(config.path_loss_exponent, config.reference_loss_db)
        self.distances = place_nodes(config)
        self.rx_power = [path_loss.rx_power(config.radio.tx_power, d) for d in self.distances]
        self.channel_rng = [rng_for(config.seed, i, Stream.CHANNEL) for i in range(config.node_count)]
        self.arrivals = [
            generate_traffic(
                config.packets_per_node, config.traffic_model, config.traffic_interval,
                rng_for(config.seed, i, Stream.TRAFFIC),
            )
            for i in range(config.node_count)
        ]
        self.next_arrival = [0] * config.node_count
        self.on_air: list[list[Transmission]] = [[] for _ in config.channels]
        self.pending_nack: dict[int, proto.GroupNack] = {}

    # -- plumbing -----------------------------------------------------------

    def _push(self, time: float, node: int, kind: EventKind, payload=None) -> None:
        self._seq += 1
        heapq.heappush(self.queue, (time, node, kind, self._seq, payload))

    def _emit(self, rec: LogRecord) -> None:
        self.metrics.observe(rec)
        if self.keep_log:
            self.records.append(rec)

    def _schedule_arrival(self, node: int) -> None:
        k = self.next_arrival[node]
        if k < len(self.arrivals[node]):
            self.next_arrival[node] = k + 1
            self._push(self.arrivals[node][k], node, EventKind.PacketGenerated, k)

    # -- run ----------------------------------------------------------------

    def run(self) -> RunResult:
        horizon = self.config.horizon
        for i in range(self.config.node_count):
            self._schedule_arrival(i)
        handlers = {
            EventKind.PacketGenerated: self._on_generated,
            EventKind.TxEnd: self._on_tx_end,
            EventKind.RxWindowOpen: self._on_window_open,
            EventKind.RxWindowClose: self._on_window_close,
            EventKind.ChannelFree: self._on_channel_free,
        }
        while self.queue:
            time, node, kind, _, payload = heapq.heappop(self.queue)
            if time > horizon:
                break
            self.now = time
            handlers[kind](node, payload)
        end = self.now if math.isinf(horizon) else horizon
        for node, pkt in self.gateway.finalize(end):
            self._emit(LogRecord(end, "PacketDiscarded", "gw", detail=f"node={node};pkt={pkt}"))
        return RunResult(self.config, self.metrics.report(), self.records, end)

    # -- handlers -----------------------------------------------------------

    def _on_generated(self, node: int, k: int) -> None:
        now = self.now
        state = self.nodes[node]
        pkt = proto.AppPacket(k, node, self.config.payload_bytes, now)
        self._emit(LogRecord(now, "PacketGenerated", f"n{node}", bytes=pkt.payload_bytes, detail=f"pkt={k}"))
        action = proto.on_packet_generated(state, pkt, now)
        if action is proto.NodeAction.DROP:
            self._emit(LogRecord(now, "PacketDropped", f"n{node}", detail=f"pkt={k}"))
        elif action is proto.NodeAction.SEND:
            self._try_send(node)
        self._schedule_arrival(node)

    def _try_send(self, node: int) -> None:
        now = self.now
        state = self.nodes[node]
        up = proto.next_uplink(state, now, self.channel_rng[node])
        if up is None:
            return
        duration = self.toa(up.frame_bytes)
        kind = "packet" if isinstance(up.frame, proto.AppPacket) else "fragment"
        tx = Transmission(node, up.channel, now, duration, self.rx_power[node], kind, up.frame_bytes, up.frame)
        active = [a for a in self.on_air[up.channel] if a.end > now]
        for other in active:
            other.interferers.append(tx)
            tx.interferers.append(other)
        active.append(tx)
        self.on_air[up.channel] = active
        state.on_air = True
        end = tx.end
        free_at = state.duty_cycle.record(up.channel, end, duration)
        self._emit(LogRecord(now, "TxStart", f"n{node}", up.channel, up.frame_bytes, "-", _frame_detail(up)))
        self._push(end, node, EventKind.TxEnd, tx)
        self._push(free_at, node, EventKind.ChannelFree, up.channel)

    def _on_tx_end(self, node: int, tx: Transmission) -> None:
        now = self.now
        cfg = self.config
        state = self.nodes[node]
        state.on_air = False
        ok = survives(tx, tx.interferers, cfg.sensitivity_dbm, cfg.capture_margin_db)
        if ok and self.forced_loss is not None and self.forced_loss(tx):
            ok = False
        tx.interferers = []
        outcome = "delivered" if ok else "destroyed"
        frame = tx.frame
        pkt_id = frame.packet_id
        self._emit(LogRecord(now, "TxEnd", f"n{node}", tx.channel, tx.frame_bytes, outcome, f"pkt={pkt_id}"))
        if ok:
            res = self.gateway.on_reception(node, frame, now)
            for n, p in res.discarded:
                self._emit(LogRecord(now, "PacketDiscarded", "gw", detail=f"node={n};pkt={p}"))
            if res.correct is not None:
                n, p = res.correct
                self._emit(LogRecord(now, "PacketCorrect", "gw", detail=f"node={n};pkt={p}"))
            if res.nack is not None:
                self.pending_nack[node] = res.nack
        if isinstance(frame, proto.Fragment) and frame.requests_nack:
            self._push(now + cfg.rx1_delay, node, EventKind.RxWindowOpen, (1, now))
        else:
            self._try_send(node)

    def _on_window_open(self, node: int, payload) -> None:
        window, uplink_end = payload
        now = self.now
        self._emit(LogRecord(now, "RxWindowOpen", f"n{node}", detail=f"window={window}"))
        nack = self.pending_nack.pop(node, None)
        if nack is not None:
            self._emit(LogRecord(
                now, "NackTx", "gw", bytes=nack.frame_bytes,
                detail=f"node={node};pkt={nack.packet_id};bitmap={nack.bits()}",
            ))
            self._push(now + self.toa(nack.frame_bytes), node, EventKind.RxWindowClose, (window, uplink_end, nack))
        else:
            self._push(now + self.config.rx_window_seconds, node, EventKind.RxWindowClose, (window, uplink_end, None))

    def _on_window_close(self, node: int, payload) -> None:
        window, uplink_end, nack = payload
        state = self.nodes[node]
        detail = f"window={window};nack={'-' if nack is None else nack.bits()}"
        self._emit(LogRecord(self.now, "RxWindowClose", f"n{node}", detail=detail))
        if nack is not None:
            proto.node_on_nack(state, nack)
        elif window == 1:
            self._push(uplink_end + self.config.rx2_delay, node, EventKind.RxWindowOpen, (2, uplink_end))
            return
        else:
            proto.nack_timeout(state)
        self._try_send(node)

    def _on_channel_free(self, node: int, channel: int) -> None:
        self._emit(LogRecord(self.now, "ChannelFree", f"n{node}", channel))
        self._try_send(node)


def run(config: ScenarioConfig, keep_log: bool = True) -> RunResult:
    """Simulate ``config``; returns metrics plus the event log."""
    return Simulation(config, keep_log).run()


LOG_HEADER = "#config"


def write_log(config: ScenarioConfig, records: Iterable[LogRecord], fh: TextIO) -> None:
    import json

    fh.write(f"{LOG_HEADER}\t{json.dumps(config.to_dict(), sort_keys=True)}\n")
    for rec in records:
        fh.write(rec.to_line())
        fh.write("\n")


def read_log(lines: Iterable[str]) -> tuple[ScenarioConfig, Iterator[LogRecord]]:
    import json

    it = iter(lines)
    header = next(it, "")
    if not header.startswith(LOG_HEADER + "\t"):
        raise ValueError("event log lacks its #config header line")
    config = ScenarioConfig.from_dict(json.loads(header.split("\t", 1)[1]))
    return config, (LogRecord.from_line(line) for line in it if line.strip())


def replay_log(lines: Iterable[str]) -> MetricsReport:
    """Recompute a run's metrics from its serialized event log."""
    config, records = read_log(lines)
    acc = MetricsAccumulator(config.radio, config.node_count, config.rx_window_seconds)
    for rec in records:
        acc.observe(rec)
    return acc.report()
