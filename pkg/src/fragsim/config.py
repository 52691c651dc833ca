"""Scenario configuration and its YAML file format.

An empty file yields the baseline scenario: one 125 kHz channel at 868 MHz,
SF7, 1 % duty cycle, 200 B payloads and 9 B headers.  Example::

    node_count: 20
    strategy: frag3_retx1        # or {kind: frag_retx, fragments: 3, sessions: 1}
    traffic_model: periodic      # or poisson
    traffic_interval: 60
    radio:
      spreading_factor: 7
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Optional

import yaml

from .errors import ConfigError
from .phy import RadioConfig, compute_toa
from .protocol import Strategy, StrategyKind

TRAFFIC_MODELS = ("periodic", "poisson")


@dataclass(frozen=True)
class ScenarioConfig:
    node_count: int = 1
    channels: tuple[float, ...] = (868.1e6,)
    radio: RadioConfig = field(default_factory=RadioConfig)
    duty_cycle_percent: float = 1.0
    strategy: Strategy = field(default_factory=lambda: Strategy(StrategyKind.BUFFERED_ALOHA))
    payload_bytes: int = 200
    packet_header_bytes: int = 9
    fragment_header_bytes: int = 9
    nack_header_bytes: int = 9
    packets_per_node: int = 100
    traffic_model: str = "periodic"
    traffic_interval: float = 60.0
    # None: long enough for every source to finish and the network to drain
    sim_duration: Optional[float] = None
    seed: int = 0
    capture_margin_db: Optional[float] = None
    sensitivity_dbm: float = -123.0
    radius_m: float = 2000.0
    path_loss_exponent: float = 2.7
    reference_loss_db: float = 40.0
    rx1_delay: float = 1.0
    rx2_delay: float = 2.0
    rx_window_symbols: int = 8

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(float(c) for c in self.channels))
        self.validate()

    def validate(self) -> None:
        if self.node_count < 1:
            raise ConfigError(f"node_count must be >= 1, got {self.node_count}")
        if not self.channels:
            raise ConfigError("at least one channel is required")
        if not 0 < self.duty_cycle_percent <= 100:
            raise ConfigError(f"duty_cycle_percent must be in (0, 100], got {self.duty_cycle_percent}")
        if self.payload_bytes < self.strategy.fragments_per_packet:
            raise ConfigError("payload_bytes smaller than the fragment count")
        for name in ("packet_header_bytes", "fragment_header_bytes", "nack_header_bytes"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.packets_per_node < 1:
            raise ConfigError("packets_per_node must be >= 1")
        if self.traffic_model not in TRAFFIC_MODELS:
            raise ConfigError(f"traffic_model must be one of {TRAFFIC_MODELS}, got {self.traffic_model!r}")
        if not self.traffic_interval > 0:
            raise ConfigError("traffic_interval must be positive")
        if self.sim_duration is not None:
            if not self.sim_duration > 0:
                raise ConfigError("sim_duration must be positive")
            if self.traffic_model == "periodic" and self.sim_duration < self.packets_per_node * self.traffic_interval:
                raise ConfigError(
                    "sim_duration too short for every node to generate packets_per_node packets"
                )
        if self.rx1_delay <= 0 or self.rx2_delay <= self.rx1_delay:
            raise ConfigError("receive windows need 0 < rx1_delay < rx2_delay")
        if self.radius_m <= 0:
            raise ConfigError("radius_m must be positive")
        if self.rx_window_symbols < 1:
            raise ConfigError("rx_window_symbols must be >= 1")

    @property
    def rx_window_seconds(self) -> float:
        return self.rx_window_symbols * self.radio.symbol_time

    @property
    def horizon(self) -> float:
        if self.sim_duration is not None:
            return self.sim_duration
        return float("inf")

    @property
    def packet_toa(self) -> float:
        return compute_toa(self.payload_bytes + self.packet_header_bytes, self.radio)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        out["channels"] = list(self.channels)
        out["radio"] = dataclasses.asdict(self.radio)
        out["strategy"] = self.strategy.label
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        return _build(data, {})


_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
_RADIO_FIELDS = {f.name: f for f in dataclasses.fields(RadioConfig)}


def _strategy(value: Any) -> Strategy:
    if isinstance(value, Strategy):
        return value
    if isinstance(value, str):
        return Strategy.parse(value)
    if isinstance(value, dict):
        unknown = set(value) - {"kind", "fragments", "sessions"}
        if unknown:
            raise ConfigError(f"unknown strategy keys {sorted(unknown)}")
        try:
            return Strategy.build(value["kind"], value.get("fragments"), value.get("sessions"))
        except (KeyError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad strategy {value!r}") from exc
    raise ConfigError(f"bad strategy {value!r}")


def _coerce(name: str, value: Any, spec: dataclasses.Field) -> Any:
    default = spec.default if spec.default is not dataclasses.MISSING else None
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer")
        return value
    if isinstance(default, float) or name in ("sim_duration", "capture_margin_db"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(value)
    return value


def _build(data: dict[str, Any], lines: dict[str, int]) -> ScenarioConfig:
    def where(key: str) -> str:
        return f"line {lines[key]}: " if key in lines else ""

    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key not in _FIELDS:
            raise ConfigError(f"{where(key)}unknown key {key!r}")
        try:
            if key == "radio":
                if not isinstance(value, dict):
                    raise ConfigError("radio must be a mapping")
                radio_kwargs = {}
                for rkey, rvalue in value.items():
                    if rkey not in _RADIO_FIELDS:
                        raise ConfigError(f"{where('radio.' + str(rkey))}unknown radio key {rkey!r}")
                    radio_kwargs[rkey] = _coerce(rkey, rvalue, _RADIO_FIELDS[rkey])
                try:
                    kwargs["radio"] = RadioConfig(**radio_kwargs)
                except ConfigError as exc:
                    named = [k for k in radio_kwargs if str(exc).startswith(k)]
                    raise ConfigError(f"{where('radio.' + named[0]) if named else ''}{exc}") from None
            elif key == "strategy":
                kwargs["strategy"] = _strategy(value)
            elif key == "channels":
                if not isinstance(value, list) or not all(isinstance(c, (int, float)) for c in value):
                    raise ConfigError("channels must be a list of frequencies in Hz")
                kwargs["channels"] = tuple(value)
            else:
                kwargs[key] = _coerce(key, value, _FIELDS[key])
        except ConfigError as exc:
            msg = str(exc)
            raise ConfigError(msg if msg.startswith("line ") else f"{where(key)}{msg}") from None
    try:
        return ScenarioConfig(**kwargs)
    except ConfigError as exc:
        text = str(exc)
        for key in sorted(lines, key=len, reverse=True):
            if key.split(".")[-1] in text:
                raise ConfigError(f"{where(key)}{text}") from None
        raise


def _key_lines(node: yaml.Node, prefix: str = "") -> dict[str, int]:
    lines = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key = f"{prefix}{key_node.value}"
            lines[key] = key_node.start_mark.line + 1
            if not prefix:
                lines.update(_key_lines(value_node, key + "."))
    return lines


def loads_config(text: str) -> ScenarioConfig:
    """Parse YAML text; errors carry the offending line number."""
    try:
        data = yaml.safe_load(text)
        root = yaml.compose(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = mark.line + 1 if mark is not None else "?"
        raise ConfigError(f"line {line}: {exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(str(exc)) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("line 1: configuration must be a mapping")
    return _build(data, _key_lines(root) if root is not None else {})


def load_config(path: str) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return loads_config(fh.read())
