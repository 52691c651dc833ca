import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fragsim.errors import ConfigError
from fragsim.phy import (
    DutyCycleLimiter,
    Outcome,
    RadioConfig,
    Transmission,
    compute_toa,
    compute_toff,
    resolve_reception,
)

SF7 = RadioConfig()


def datasheet_toa(pl, sf=7, bw=125e3, cr=1, n_preamble=8, ih=0, crc=1, de=0):
    """Airtime straight from the modem datasheet, written out independently."""
    t_sym = 2.0**sf / bw
    t_preamble = (n_preamble + 4.25) * t_sym
    payload_symb_nb = 8 + max(math.ceil((8 * pl - 4 * sf + 28 + 16 * crc - 20 * ih) / (4 * (sf - 2 * de))) * (cr + 4), 0)
    return t_preamble + payload_symb_nb * t_sym


# frozen from datasheet_toa
TOA_1B_SF7 = 0.025856
TOA_209B_SF7 = 0.333056


def test_toa_golden_values():
    assert datasheet_toa(1) == pytest.approx(TOA_1B_SF7, abs=1e-12)
    assert datasheet_toa(209) == pytest.approx(TOA_209B_SF7, abs=1e-12)
    assert compute_toa(1, SF7) == pytest.approx(TOA_1B_SF7, abs=1e-12)
    assert compute_toa(209, SF7) == pytest.approx(TOA_209B_SF7, abs=1e-12)
    assert compute_toa(209, SF7) > compute_toa(1, SF7)


@pytest.mark.parametrize("sf", range(7, 13))
@pytest.mark.parametrize("nbytes", [1, 9, 49, 109, 209, 255])
def test_toa_matches_datasheet(sf, nbytes):
    de = 1 if sf >= 11 else 0
    radio = RadioConfig(spreading_factor=sf, low_data_rate_optimize=bool(de))
    assert compute_toa(nbytes, radio) == pytest.approx(datasheet_toa(nbytes, sf=sf, de=de), rel=1e-12)


@pytest.mark.parametrize("nbytes", [1, 20, 109, 209])
def test_toa_increases_with_sf(nbytes):
    toas = [compute_toa(nbytes, RadioConfig(spreading_factor=sf)) for sf in range(7, 13)]
    assert all(a < b for a, b in zip(toas, toas[1:]))


@given(st.integers(1, 255), st.integers(1, 255), st.integers(7, 12), st.sampled_from([5, 6, 7, 8]))
def test_toa_monotone_in_bytes(a, b, sf, cr):
    radio = RadioConfig(spreading_factor=sf, coding_rate_denominator=cr)
    a, b = sorted((a, b))
    assert 0 < compute_toa(a, radio) <= compute_toa(b, radio)


@pytest.mark.parametrize("kwargs", [
    {"spreading_factor": 6},
    {"spreading_factor": 13},
    {"bandwidth": 200_000},
    {"coding_rate_denominator": 9},
    {"tx_current": 0.0},
    {"supply_voltage": -1.0},
])
def test_invalid_radio(kwargs):
    with pytest.raises(ConfigError):
        RadioConfig(**kwargs)


def test_toa_rejects_empty_frame():
    with pytest.raises(ConfigError):
        compute_toa(0, SF7)


def test_toff():
    assert compute_toff(1.0, 1) == pytest.approx(99.0)
    assert compute_toff(0.5, 50) == pytest.approx(0.5)
    assert compute_toff(0.7, 100) == 0.0


@pytest.mark.parametrize("dc", [0, -1, 100.5])
def test_toff_rejects_bad_duty_cycle(dc):
    with pytest.raises(ConfigError):
        compute_toff(1.0, dc)


def test_duty_cycle_limiter():
    dc = DutyCycleLimiter(1.0, channels=2)
    assert dc.available(0.0) == [0, 1]
    allowed = dc.record(0, end=10.0, toa=0.5)
    assert allowed == pytest.approx(10.0 + 49.5)
    assert dc.available(20.0) == [1]
    assert dc.available(allowed) == [0, 1]


def tx(start, duration=1.0, power=-80.0, source=0, channel=0):
    return Transmission(source, channel, start, duration, power, "packet", 10)


def test_single_transmission_delivered():
    assert resolve_reception([tx(0.0)], -123.0) == [Outcome.DELIVERED]


def test_below_sensitivity_destroyed():
    assert resolve_reception([tx(0.0, power=-130.0)], -123.0) == [Outcome.DESTROYED]


def test_symmetric_collision():
    out = resolve_reception([tx(0.0, source=0), tx(0.5, source=1)], -123.0)
    assert out == [Outcome.DESTROYED, Outcome.DESTROYED]


def test_touching_intervals_do_not_collide():
    out = resolve_reception([tx(0.0, source=0), tx(1.0, source=1)], -123.0)
    assert out == [Outcome.DELIVERED, Outcome.DELIVERED]


def test_capture_with_ten_db_gap():
    strong, weak = tx(0.0, power=-70.0, source=0), tx(0.3, power=-80.0, source=1)
    assert resolve_reception([strong, weak], -123.0, capture_margin=6.0) == [Outcome.DELIVERED, Outcome.DESTROYED]
    assert resolve_reception([strong, weak], -123.0, capture_margin=None) == [Outcome.DESTROYED, Outcome.DESTROYED]


def test_capture_uses_aggregate_interference():
    # two -80 dBm interferers sum to about -77 dBm: a 7 dB margin no longer holds
    a = tx(0.0, power=-70.0, source=0)
    b = tx(0.2, power=-80.0, source=1)
    c = tx(0.6, power=-80.0, source=2)
    assert resolve_reception([a, b, c], -123.0, capture_margin=7.5)[0] is Outcome.DESTROYED
    assert resolve_reception([a, b], -123.0, capture_margin=7.5)[0] is Outcome.DELIVERED


def test_other_channel_does_not_interfere():
    out = resolve_reception([tx(0.0, channel=0), tx(0.2, channel=1, source=1)], -123.0)
    assert out == [Outcome.DELIVERED, Outcome.DELIVERED]


def test_empty():
    assert resolve_reception([]) == []


def brute_force(txs, sensitivity, margin):
    """Pairwise O(n^2) interval check, independent of Transmission.overlaps."""
    fates = []
    for i, a in enumerate(txs):
        a_end = a.start + a.duration
        hit_mw = 0.0
        hits = 0
        for j, b in enumerate(txs):
            if i == j or a.channel != b.channel:
                continue
            b_end = b.start + b.duration
            if max(a.start, b.start) < min(a_end, b_end):
                hits += 1
                hit_mw += 10 ** (b.rx_power / 10)
        if a.rx_power < sensitivity:
            fates.append(Outcome.DESTROYED)
        elif hits == 0:
            fates.append(Outcome.DELIVERED)
        elif margin is None:
            fates.append(Outcome.DESTROYED)
        else:
            ok = a.rx_power - 10 * math.log10(hit_mw) >= margin
            fates.append(Outcome.DELIVERED if ok else Outcome.DESTROYED)
    return fates


def random_instance(rng):
    n = rng.randint(0, 20)
    return [
        Transmission(
            i, 0, rng.uniform(0, 10), rng.uniform(0.01, 2.0),
            rng.uniform(-130, -60), "fragment", rng.randint(1, 60),
        )
        for i in range(n)
    ]


def test_resolve_matches_brute_force_oracle():
    rng = random.Random(1234)
    for k in range(1000):
        txs = random_instance(rng)
        margin = None if k % 2 else 6.0
        assert resolve_reception(txs, -123.0, margin) == brute_force(txs, -123.0, margin)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.floats(0, 5), st.floats(0.01, 1.0)), min_size=2, max_size=20))
def test_no_capture_overlap_sets_fully_destroyed(intervals):
    txs = [Transmission(i, 0, s, d, -80.0, "packet", 10) for i, (s, d) in enumerate(intervals)]
    for t, fate in zip(txs, resolve_reception(txs, -123.0, None)):
        if any(t.overlaps(o) for o in txs if o is not t):
            assert fate is Outcome.DESTROYED
        else:
            assert fate is Outcome.DELIVERED
