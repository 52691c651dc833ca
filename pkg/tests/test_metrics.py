import pytest
from hypothesis import given
from hypothesis import strategies as st

from fragsim.errors import ConfigError
from fragsim.metrics import (
    LogRecord,
    MetricsAccumulator,
    app_capacity,
    energy_efficiency,
    fmt,
    goodput,
    header_overhead,
    parse_value,
)
from fragsim.phy import RadioConfig, compute_toa


def test_goodput_examples():
    assert goodput(80, 100) == pytest.approx(80.0)
    assert goodput(0, 10) == 0.0
    assert goodput(0, 0) is None


def test_app_capacity_examples():
    assert app_capacity(80, 160) == pytest.approx(50.0)
    assert app_capacity(0, 0) is None


def test_energy_efficiency_examples():
    assert energy_efficiency(4.0, 80) == pytest.approx(0.05)
    assert energy_efficiency(1.0, 0) is None


def test_undefined_roundtrip():
    assert fmt(None) == "undefined"
    assert parse_value("undefined") is None
    assert parse_value(fmt(0.1)) == 0.1


def test_zero_header_linear_airtime_has_no_overhead():
    assert header_overhead(2, 200, 0, toa=lambda b: 0.001 * b) == pytest.approx(0.0, abs=1e-12)


def test_linear_airtime_overhead_is_extra_headers():
    # n_f - 1 extra 9 B headers over a 209 B frame
    assert header_overhead(3, 200, 9, toa=lambda b: 0.5 * b) == pytest.approx(100 * 18 / 209)


def test_overhead_needs_two_fragments():
    with pytest.raises(ConfigError):
        header_overhead(1)


@pytest.mark.parametrize("radio", [RadioConfig(), RadioConfig(coding_rate_denominator=8)])
def test_overhead_grows_with_fragment_count(radio):
    for header in (1, 9):
        values = [header_overhead(n, 200, header, radio) for n in (2, 3, 4, 5)]
        assert all(a < b for a, b in zip(values, values[1:]))


@given(st.integers(2, 10), st.integers(50, 250))
def test_smaller_header_smaller_overhead(n_f, payload):
    assert header_overhead(n_f, payload, 1) < header_overhead(n_f, payload, 9)


def test_log_record_line_roundtrip():
    rec = LogRecord(0.1 + 0.2, "TxStart", "n3", 0, 109, "-", "pkt=4;kind=fragment;seq=1;first=0")
    back = LogRecord.from_line(rec.to_line())
    assert back == rec
    assert back.fields()["seq"] == "1"


def test_accumulator_counts_and_energy():
    radio = RadioConfig()
    acc = MetricsAccumulator(radio, node_count=2, rx_window_seconds=0.01)
    for rec in [
        LogRecord(0.0, "PacketGenerated", "n0", bytes=200, detail="pkt=0"),
        LogRecord(0.0, "TxStart", "n0", 0, 209, "-", "pkt=0;kind=packet;first=1"),
        LogRecord(1.0, "PacketGenerated", "n1", bytes=200, detail="pkt=0"),
        LogRecord(1.0, "PacketDropped", "n1", detail="pkt=0"),
        LogRecord(2.0, "RxWindowOpen", "n0", detail="window=1"),
        LogRecord(2.0, "NackTx", "gw", bytes=10, detail="node=0;pkt=0;bitmap=10"),
        LogRecord(3.0, "PacketCorrect", "gw", detail="node=0;pkt=0"),
    ]:
        acc.observe(rec)
    m = acc.report()
    assert (m.m_asked, m.m_sent, m.m_correct, m.dropped, m.nacks) == (2, 1, 1, 1, 1)
    expected = 3.3 * (0.044 * compute_toa(209, radio) + 0.0112 * (0.01 + compute_toa(10, radio)))
    assert m.energy_joules == pytest.approx(expected)
    assert m.gateway_energy_joules == pytest.approx(3.3 * 0.044 * compute_toa(10, radio))
    assert m.goodput_percent == 100.0 and m.app_capacity_percent == 50.0
