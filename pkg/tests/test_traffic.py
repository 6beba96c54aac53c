import statistics
from datetime import datetime

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from homesniff.errors import InsufficientData, InvalidParameter, InvalidRange
from homesniff.identity import DeviceKind
from homesniff.mac import MacAddress
from homesniff.timeutil import DAY_US, US, format_hhmm, from_datetime, iso, parse_hhmm, weekday
from homesniff.traffic import (
    KindConfig,
    State,
    StateConfig,
    TrafficSeries,
    aggregate_windows,
    classify_device_kind,
    classify_states,
    compute_threshold,
    device_frames,
    hourly_activity,
    merge_sniffers,
    presence_intervals,
    rolling_mean,
    split_days,
    weekly_routine,
)
from homesniff.wire.records import (
    Direction,
    FrameRecord,
    FrameType,
    RadiotapMeta,
    ResolvedAddresses,
    make_frame_control,
)

DEV = MacAddress.parse("02:00:00:00:00:01")
AP = MacAddress.parse("02:00:00:00:00:fe")
T0 = from_datetime(datetime(2024, 1, 1))


def frame(ts, direction=Direction.UPLINK, size=100, sniffer="s1"):
    flags = {Direction.UPLINK: 1, Direction.DOWNLINK: 2, Direction.PEER_OR_BROADCAST: 0}[direction]
    ta, ra = (DEV, AP) if direction is Direction.UPLINK else (AP, DEV)
    return FrameRecord(sniffer, RadiotapMeta(ts, -50), make_frame_control(FrameType.DATA, 8, flags),
                       ResolvedAddresses(ta, ra, ta, ra, AP), direction, size)


def series_of(totals, window_s=10, start=T0):
    s = TrafficSeries.zeros(DEV, window_s, start, len(totals))
    s.up_pkts[:] = totals
    return s


# --- aggregation ---------------------------------------------------------------

def test_aggregate_windows_by_direction():
    frames = [frame(T0 + 1), frame(T0 + 9_999_999, Direction.DOWNLINK, 40),
              frame(T0 + 10 * US, size=7), frame(T0 + 25 * US, Direction.PEER_OR_BROADCAST),
              frame(T0 - 1), frame(T0 + 30 * US)]
    s = aggregate_windows(frames, 10, T0, T0 + 30 * US, DEV)
    assert len(s) == 3
    assert s.up_pkts.tolist() == [1, 1, 0]
    assert s.down_pkts.tolist() == [1, 0, 0]
    assert s.up_bytes.tolist() == [100, 7, 0]
    assert s.down_bytes.tolist() == [40, 0, 0]
    assert s.peer_pkts.tolist() == [0, 0, 1]
    assert s.end_us == T0 + 30 * US


def test_aggregate_windows_rejects_bad_ranges():
    with pytest.raises(InvalidParameter):
        aggregate_windows([], 0, T0, T0 + 1)
    with pytest.raises(InvalidRange):
        aggregate_windows([], 10, T0, T0)


@given(st.lists(st.integers(0, 999_999_999), max_size=200), st.integers(1, 120))
def test_aggregation_conserves_frames(offsets, window_s):
    frames = [frame(T0 + o) for o in offsets]
    s = aggregate_windows(frames, window_s, T0, T0 + 1_000_000_000, DEV)
    assert int(s.up_pkts.sum()) == len(frames)
    # oracle: direct bucket count
    expect = np.zeros(len(s), dtype=int)
    for o in offsets:
        expect[o // (window_s * US)] += 1
    assert s.up_pkts.tolist() == expect.tolist()


def test_merge_sniffers_and_device_frames():
    frames = [frame(T0, sniffer="s2"), frame(T0, sniffer="s1"), frame(T0 + 5, sniffer="s1")]
    merged = merge_sniffers(frames)
    assert [(f.ts_us, f.sniffer_id) for f in merged] == [(T0, "s1"), (T0 + 5, "s1")]
    assert len(device_frames(frames, DEV)) == 3
    assert device_frames(frames, MacAddress.parse("02:00:00:00:00:77")) == []


# --- threshold and states -----------------------------------------------------

@given(st.lists(st.integers(0, 50), min_size=1, max_size=300))
def test_threshold_is_median_of_nonzero_totals(totals):
    nz = [t for t in totals if t]
    expect = statistics.median(nz) if nz else 1.0
    assert compute_threshold(series_of(totals)) == pytest.approx(expect)


def test_threshold_of_empty_series():
    with pytest.raises(InsufficientData):
        compute_threshold(series_of([]))


def _oracle_states(totals, th, gap):
    out = []
    i = 0
    while i < len(totals):
        if totals[i] == 0:
            j = i
            while j < len(totals) and totals[j] == 0:
                j += 1
            out += [State.OFF if j - i >= gap else State.IDLE] * (j - i)
            i = j
        else:
            out.append(State.ACTIVE if totals[i] >= th else State.IDLE)
            i += 1
    return out


@given(st.lists(st.sampled_from([0, 0, 0, 1, 2, 5, 9]), max_size=200),
       st.floats(0.5, 8), st.integers(1, 12))
def test_states_match_run_length_oracle(totals, th, gap):
    tl = classify_states(series_of(totals), StateConfig(th, gap))
    assert tl.states.tolist() == [int(s) for s in _oracle_states(totals, th, gap)]


def test_state_config_validation():
    with pytest.raises(InvalidParameter):
        StateConfig(0)
    with pytest.raises(InvalidParameter):
        StateConfig(1, 0)


@given(st.lists(st.floats(-1e6, 1e6), max_size=60), st.integers(0, 7).map(lambda k: 2 * k + 1))
def test_rolling_mean_matches_naive(values, k):
    got = rolling_mean(values, k)
    h = k // 2
    for i in range(len(values)):
        part = values[max(0, i - h): i + h + 1]
        assert got[i] == pytest.approx(sum(part) / len(part), rel=1e-9, abs=1e-6)


def test_rolling_mean_rejects_even_windows():
    with pytest.raises(InvalidParameter):
        rolling_mean([1, 2], 2)


# --- kind ----------------------------------------------------------------------

def _hourly(pattern, window_s=600):
    """``pattern(hour_of_day) -> packets per window`` over two days."""
    per_hour = 3600 // window_s
    totals = [pattern(h % 24) for h in range(48) for _ in range(per_hour)]
    return series_of(totals, window_s)


def test_smart_manual_unknown():
    assert classify_device_kind(_hourly(lambda h: 1)).kind is DeviceKind.SMART
    manual = classify_device_kind(_hourly(lambda h: 3 if 8 <= h < 23 else 0))
    assert manual.kind is DeviceKind.MANUAL and manual.night_coverage == 0
    assert classify_device_kind(_hourly(lambda h: 1 if h % 2 else 0)).kind is DeviceKind.UNKNOWN


def test_kind_needs_enough_data():
    with pytest.raises(InsufficientData):
        classify_device_kind(series_of([1] * 10, 600))
    ev = classify_device_kind(series_of([1] * 24, 3600), KindConfig(min_span_h=1))
    assert ev.hours == 24


def test_hourly_activity_aligns_to_clock_hours():
    s = series_of([1] + [0] * 8 + [2] + [0] * 9, 600, T0 + 1800 * US)
    hours = hourly_activity(s)
    assert [h for h, _ in hours] == [T0 + 3600 * US, T0 + 7200 * US]
    assert [a for _, a in hours] == [False, True]


# --- presence and routine -----------------------------------------------------------

def test_presence_merges_short_gaps():
    s = series_of([1, 0, 1, 0, 0, 0, 1], 10)
    pi = presence_intervals(s, gap_s=30)
    assert pi.intervals == [(T0, T0 + 30 * US), (T0 + 60 * US, T0 + 70 * US)]
    with pytest.raises(InvalidParameter):
        presence_intervals(s, gap_s=5)


def test_split_days_clips_intervals():
    s = series_of([1] * 6, 3600, T0 + 22 * 3600 * US)
    pi = presence_intervals(s, 3600)
    days = split_days(pi, T0, T0 + DAY_US)
    assert days[T0] == [(T0 + 22 * 3600 * US, T0 + DAY_US)]
    assert days[T0 + DAY_US] == [(T0 + DAY_US, T0 + DAY_US + 4 * 3600 * US)]


def _day(day_us, spans):
    return [(day_us + int(a * 3600) * US, day_us + int(b * 3600) * US) for a, b in spans]


def test_weekly_routine_recovers_absence_and_wake():
    per_day = {}
    for k in range(14):
        d = T0 + k * DAY_US
        if weekday(d) < 5:
            per_day[d] = _day(d, [(6, 9), (16.5, 23)])
        else:
            per_day[d] = _day(d, [(9, 23)])
    r = weekly_routine(per_day, cell_s=1800)
    wk = r["weekday"]
    assert wk.days == 10
    assert wk.absences == [(9 * 3600, 16 * 3600 + 1800)]
    assert wk.wake_s == 6 * 3600
    we = r["weekend"]
    assert we.absences == [] and we.wake_s == 9 * 3600


def test_weekly_routine_validation():
    with pytest.raises(InsufficientData):
        weekly_routine({T0: []})
    days = {T0 + k * DAY_US: [] for k in range(5)}
    with pytest.raises(InvalidParameter):
        weekly_routine(days, cell_s=7)


# --- clock helpers ------------------------------------------------------------------

def test_time_helpers():
    assert iso(T0 + 90 * US) == "2024-01-01T00:01:30"
    assert iso(T0 + 1) == "2024-01-01T00:00:00.000001"
    assert weekday(T0) == 0
    assert parse_hhmm("24:00") == 86400 and parse_hhmm("06:30") == 23400
    for bad in ("24:01", "7:60", "x"):
        with pytest.raises(ValueError):
            parse_hhmm(bad)
    assert format_hhmm(23400) == "06:30" and format_hhmm(61) == "00:01:01"
