"""Windowed traffic series, off/idle/active states, smart-vs-manual kind, presence and routines."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from homesniff.errors import InsufficientData, InvalidParameter, InvalidRange
from homesniff.identity import DeviceKind
from homesniff.mac import MacAddress
from homesniff.timeutil import DAY_US, US, day_start, weekday
from homesniff.wire.records import Direction, FrameRecord

DEFAULT_WINDOW_S = 10
DEFAULT_OFF_GAP_WINDOWS = 30
DEFAULT_PRESENCE_GAP_S = 600


class State(enum.IntEnum):
    OFF = 0
    IDLE = 1
    ACTIVE = 2

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass
class TrafficSeries:
    device: Optional[MacAddress]
    window_s: int
    start_us: int
    up_pkts: np.ndarray
    down_pkts: np.ndarray
    up_bytes: np.ndarray
    down_bytes: np.ndarray
    peer_pkts: np.ndarray

    def __len__(self) -> int:
        return len(self.up_pkts)

    @property
    def totals(self) -> np.ndarray:
        return self.up_pkts + self.down_pkts

    @property
    def end_us(self) -> int:
        return self.start_us + len(self) * self.window_s * US

    def window_start(self, i: int) -> int:
        return self.start_us + i * self.window_s * US

    def slice(self, i0: int, i1: int) -> "TrafficSeries":
        return TrafficSeries(
            self.device, self.window_s, self.window_start(i0),
            self.up_pkts[i0:i1], self.down_pkts[i0:i1],
            self.up_bytes[i0:i1], self.down_bytes[i0:i1], self.peer_pkts[i0:i1],
        )

    @classmethod
    def zeros(cls, device, window_s: int, start_us: int, n: int) -> "TrafficSeries":
        z = lambda: np.zeros(n, dtype=np.int64)  # noqa: E731
        return cls(device, window_s, start_us, z(), z(), z(), z(), z())


@dataclass(frozen=True)
class StateConfig:
    th: float
    off_gap_windows: int = DEFAULT_OFF_GAP_WINDOWS

    def __post_init__(self):
        if not self.th > 0:
            raise InvalidParameter(f"threshold must be positive, got {self.th}")
        if self.off_gap_windows < 1:
            raise InvalidParameter("off_gap_windows must be >= 1")


@dataclass
class StateTimeline:
    device: Optional[MacAddress]
    window_s: int
    start_us: int
    states: np.ndarray  # int8 codes of State
    th: float = 1.0

    def __len__(self) -> int:
        return len(self.states)

    def window_start(self, i: int) -> int:
        return self.start_us + i * self.window_s * US


@dataclass
class PresenceIntervals:
    device: Optional[MacAddress]
    intervals: list[tuple[int, int]]
    gap_s: float


def window_count(start_us: int, end_us: int, window_s: int) -> int:
    return -(-(end_us - start_us) // (window_s * US))


def device_frames(frames: Iterable[FrameRecord], mac: MacAddress) -> list[FrameRecord]:
    """Frames this station transmitted or received."""
    return [f for f in frames if f.addrs.ta == mac or f.addrs.ra == mac]


def merge_sniffers(frames: Iterable[FrameRecord]) -> list[FrameRecord]:
    """Collapse copies of one transmission heard by several sniffers, in time order."""
    seen = set()
    out = []
    for f in sorted(frames, key=lambda f: (f.ts_us, f.sniffer_id)):
        key = (f.ts_us, f.addrs.ta, f.addrs.ra, f.fc.ftype, f.fc.subtype, f.body_len_bytes)
        if key not in seen:
            seen.add(key)
            out.append(f)
    return out


def aggregate_windows(
    frames: Iterable[FrameRecord],
    window_s: int,
    start_us: int,
    end_us: int,
    device: Optional[MacAddress] = None,
) -> TrafficSeries:
    if window_s < 1:
        raise InvalidParameter(f"window_s must be >= 1, got {window_s}")
    if end_us <= start_us:
        raise InvalidRange(f"end {end_us} <= start {start_us}")
    n = window_count(start_us, end_us, window_s)
    s = TrafficSeries.zeros(device, window_s, start_us, n)
    w_us = window_s * US
    for f in frames:
        ts = f.ts_us
        if ts < start_us or ts >= end_us:
            continue
        i = (ts - start_us) // w_us
        if f.direction is Direction.UPLINK:
            s.up_pkts[i] += 1
            s.up_bytes[i] += f.body_len_bytes
        elif f.direction is Direction.DOWNLINK:
            s.down_pkts[i] += 1
            s.down_bytes[i] += f.body_len_bytes
        else:
            s.peer_pkts[i] += 1
    return s


def compute_threshold(series: TrafficSeries) -> float:
    if len(series) == 0:
        raise InsufficientData("empty series")
    totals = series.totals
    nz = totals[totals > 0]
    if nz.size == 0:
        return 1.0
    return float(np.median(nz))


def _true_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [i, j) runs where mask is true."""
    if mask.size == 0:
        return []
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    d = np.diff(padded)
    return list(zip(np.flatnonzero(d == 1).tolist(), np.flatnonzero(d == -1).tolist()))


def classify_states(series: TrafficSeries, config: StateConfig) -> StateTimeline:
    totals = series.totals
    states = np.where(totals >= config.th, State.ACTIVE, State.IDLE).astype(np.int8)
    for i, j in _true_runs(totals == 0):
        if j - i >= config.off_gap_windows:
            states[i:j] = State.OFF
    return StateTimeline(series.device, series.window_s, series.start_us, states, config.th)


def rolling_mean(values, k: int) -> np.ndarray:
    """Centred moving average; windows are clipped at the ends (mean of what exists)."""
    if k < 1 or k % 2 == 0:
        raise InvalidParameter(f"window length must be a positive odd integer, got {k}")
    if isinstance(values, TrafficSeries):
        values = values.totals
    x = np.asarray(values, dtype=np.float64)
    n = x.size
    if k == 1 or n == 0:
        return x.copy()
    h = (k - 1) // 2
    c = np.concatenate(([0.0], np.cumsum(x)))
    idx = np.arange(n)
    lo = np.maximum(idx - h, 0)
    hi = np.minimum(idx + h + 1, n)
    return (c[hi] - c[lo]) / (hi - lo)


# --- smart vs manually controlled ------------------------------------------

@dataclass(frozen=True)
class KindConfig:
    smart_coverage: float = 0.9
    smart_night: float = 0.75
    manual_night: float = 0.25
    night_start_h: int = 1
    night_end_h: int = 5
    min_span_h: float = 20.0


@dataclass(frozen=True)
class KindEvidence:
    kind: DeviceKind
    hourly_coverage: float
    night_coverage: float
    hours: int


def hourly_activity(series: TrafficSeries) -> list[tuple[int, bool]]:
    """(hour_start_us, any packet) for every whole clock hour inside the series."""
    hour_us = 3600 * US
    first = -(-series.start_us // hour_us) * hour_us
    totals = series.totals
    w_us = series.window_s * US
    out = []
    h = first
    while h + hour_us <= series.end_us:
        i0 = (h - series.start_us) // w_us
        i1 = -(-(h + hour_us - series.start_us) // w_us)
        out.append((h, bool(totals[i0:i1].any())))
        h += hour_us
    return out


def classify_device_kind(series: TrafficSeries, config: KindConfig = KindConfig()) -> KindEvidence:
    span_h = len(series) * series.window_s / 3600
    if span_h < config.min_span_h:
        raise InsufficientData(f"series spans {span_h:.1f} h, need {config.min_span_h} h")
    hours = hourly_activity(series)
    if not hours:
        raise InsufficientData("no whole hours in series")
    coverage = sum(a for _, a in hours) / len(hours)
    night = [a for h, a in hours if config.night_start_h <= (h % DAY_US) // (3600 * US) < config.night_end_h]
    if not night:
        raise InsufficientData("series contains no night hours")
    night_cov = sum(night) / len(night)
    if coverage >= config.smart_coverage and night_cov >= config.smart_night:
        kind = DeviceKind.SMART
    elif night_cov <= config.manual_night:
        kind = DeviceKind.MANUAL
    else:
        kind = DeviceKind.UNKNOWN
    return KindEvidence(kind, coverage, night_cov, len(hours))


# --- presence ---------------------------------------------------------------

def presence_intervals(series: TrafficSeries, gap_s: float = DEFAULT_PRESENCE_GAP_S) -> PresenceIntervals:
    """Merge nonzero windows whose silent gap is shorter than ``gap_s``."""
    if gap_s < series.window_s:
        raise InvalidParameter(f"gap_s {gap_s} shorter than the window {series.window_s}")
    active = np.flatnonzero(series.totals > 0)
    intervals: list[tuple[int, int]] = []
    w_us = series.window_s * US
    gap_us = gap_s * US
    for i in active.tolist():
        s = series.start_us + i * w_us
        e = s + w_us
        if intervals and s - intervals[-1][1] < gap_us:
            intervals[-1] = (intervals[-1][0], e)
        else:
            intervals.append((s, e))
    return PresenceIntervals(series.device, intervals, gap_s)


def split_days(pi: PresenceIntervals, first_day_us: int, last_day_us: int) -> dict[int, list[tuple[int, int]]]:
    """Clip intervals to each local day in [first_day, last_day]."""
    days = {}
    d = day_start(first_day_us)
    while d <= last_day_us:
        days[d] = [(max(s, d), min(e, d + DAY_US)) for s, e in pi.intervals if e > d and s < d + DAY_US]
        d += DAY_US
    return days


@dataclass
class DayClassRoutine:
    day_class: str
    days: int
    cell_s: int
    presence: np.ndarray
    absences: list[tuple[int, int]] = field(default_factory=list)  # seconds of day
    wake_s: Optional[int] = None


def _day_presence(intervals: Sequence[tuple[int, int]], day_us: int, cell_s: int) -> np.ndarray:
    n = 86_400 // cell_s
    covered = np.zeros(n)
    cell_us = cell_s * US
    for s, e in intervals:
        s = max(s, day_us) - day_us
        e = min(e, day_us + DAY_US) - day_us
        if e <= s:
            continue
        c0, c1 = s // cell_us, min(-(-e // cell_us), n)
        for c in range(c0, c1):
            lo, hi = c * cell_us, (c + 1) * cell_us
            covered[c] += min(hi, e) - max(lo, s)
    return covered / cell_us


def weekly_routine(
    per_day: Mapping[int, Sequence[tuple[int, int]]],
    cell_s: int = 3600,
    absent_p: float = 0.25,
    present_p: float = 0.75,
    recurrence: float = 0.6,
    min_days: int = 5,
) -> dict[str, DayClassRoutine]:
    """Recurring absences and wake edge per day class (weekday / weekend).

    A cell is present on a day when intervals cover more than half of it.
    Only absences bounded by presence on both sides are reported; the
    overnight silence shows up as the wake edge instead.
    """
    if len(per_day) < min_days:
        raise InsufficientData(f"{len(per_day)} days of presence, need {min_days}")
    if cell_s < 1 or 86_400 % cell_s:
        raise InvalidParameter(f"cell size {cell_s} s does not divide a day")
    groups: dict[str, list[np.ndarray]] = {}
    for day_us in sorted(per_day):
        cls = "weekend" if weekday(day_us) >= 5 else "weekday"
        groups.setdefault(cls, []).append(_day_presence(per_day[day_us], day_us, cell_s) > 0.5)
    out = {}
    for cls, rows in groups.items():
        m = np.vstack(rows)
        prob = m.mean(axis=0)
        r = DayClassRoutine(cls, len(rows), cell_s, prob)
        for i, j in _true_runs(prob <= absent_p):
            if i == 0 or j == prob.size:
                continue
            absent_days = (~m[:, i:j]).mean(axis=1) >= present_p
            if absent_days.mean() >= recurrence:
                r.absences.append((i * cell_s, j * cell_s))
        for i in range(1, prob.size):
            if prob[i - 1] <= absent_p and prob[i] >= present_p:
                r.wake_s = i * cell_s
                break
        out[cls] = r
    return out
