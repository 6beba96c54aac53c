"""Traffic event generators. Deterministic per (seed, device MAC, purpose)."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from homesniff.mac import MacAddress
from homesniff.sim.scenario import DailySpan, DiurnalMultimedia, PeriodicSensor, Streaming, TrafficModel
from homesniff.timeutil import DAY_US, US, day_start, weekday


class Purpose(enum.IntEnum):
    TRAFFIC = 1
    SHADOWING = 2
    DROPS = 3
    BLE = 4
    PROBES = 5
    CALIBRATION = 6


def device_rng(seed: int, mac: MacAddress, purpose: Purpose) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(int(mac), int(purpose)))))


@dataclass(frozen=True)
class TrafficEvents:
    """Parallel arrays: timestamp (µs, strictly increasing), uplink flag, body bytes."""
    ts_us: np.ndarray
    uplink: np.ndarray
    nbytes: np.ndarray

    def __len__(self) -> int:
        return len(self.ts_us)

    @classmethod
    def empty(cls) -> "TrafficEvents":
        return cls(np.zeros(0, np.int64), np.zeros(0, bool), np.zeros(0, np.int64))


def span_instances(span: DailySpan, start_us: int, end_us: int) -> Iterator[tuple[int, int]]:
    """Absolute [a, b) occurrences of a daily span clipped to [start, end)."""
    d = day_start(start_us) - DAY_US
    while d < end_us:
        if weekday(d) in span.weekdays:
            a = d + span.start_s * US
            b = d + span.end_s * US if span.end_s > span.start_s else d + DAY_US + span.end_s * US
            a, b = max(a, start_us), min(b, end_us)
            if b > a:
                yield a, b
        d += DAY_US


def spans_mask_intervals(spans, start_us: int, end_us: int) -> list[tuple[int, int]]:
    """Union of all span occurrences as sorted disjoint intervals."""
    iv = sorted(x for s in spans for x in span_instances(s, start_us, end_us))
    out: list[tuple[int, int]] = []
    for a, b in iv:
        if out and a <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def subtract_intervals(base, cut) -> list[tuple[int, int]]:
    out = []
    for a, b in base:
        cur = a
        for c, d in cut:
            if d <= cur or c >= b:
                continue
            if c > cur:
                out.append((cur, c))
            cur = max(cur, d)
        if cur < b:
            out.append((cur, b))
    return out


def _poisson_times(rng, rate: float, intervals) -> np.ndarray:
    parts = []
    for a, b in intervals:
        n = rng.poisson(rate * (b - a) / US)
        parts.append(rng.integers(a, b, size=n))
    return np.sort(np.concatenate(parts)) if parts else np.zeros(0, np.int64)


def _slotted_times(rng, rate: float, intervals) -> np.ndarray:
    """One frame per 1/rate slot at a random offset inside the slot."""
    slot_us = int(round(US / rate))
    parts = []
    for a, b in intervals:
        starts = np.arange(a, b - slot_us + 1, slot_us, dtype=np.int64)
        parts.append(starts + rng.integers(0, slot_us, size=starts.size))
    return np.sort(np.concatenate(parts)) if parts else np.zeros(0, np.int64)


def _strictly_increasing(ts: np.ndarray) -> np.ndarray:
    ts = np.sort(ts.astype(np.int64))
    if ts.size > 1:
        # bump ties forward by a microsecond
        ts = np.maximum.accumulate(ts - np.arange(ts.size)) + np.arange(ts.size)
    return ts


def generate_traffic(model: TrafficModel, start_us: int, end_us: int, rng: np.random.Generator,
                     active_from_us: int | None = None, active_until_us: int | None = None) -> TrafficEvents:
    """Frame events for one device; ``active_from``/``active_until`` bound a guest's stay."""
    lo = max(start_us, active_from_us) if active_from_us is not None else start_us
    hi = min(end_us, active_until_us) if active_until_us is not None else end_us
    if model is None or hi <= lo:
        return TrafficEvents.empty()
    if isinstance(model, PeriodicSensor):
        phase = int(rng.integers(0, int(model.interval_s * US)))
        starts = np.arange(lo + phase, hi, int(round(model.interval_s * US)), dtype=np.int64)
        per = model.pkts + model.down_pkts
        offs = np.arange(per, dtype=np.int64) * 5_000  # 5 ms apart within a burst
        ts = (starts[:, None] + offs[None, :]).ravel()
        up = np.tile(np.array([model.uplink] * model.pkts + [not model.uplink] * model.down_pkts), starts.size)
        keep = ts < hi
        ts, up = ts[keep], up[keep]
        nbytes = np.where(up == model.uplink, model.bytes, max(40, model.bytes // 3)).astype(np.int64)
        return TrafficEvents(ts, up, nbytes)

    on = spans_mask_intervals(model.on, lo, hi)
    active = spans_mask_intervals(model.active, lo, hi)
    idle = subtract_intervals(on, active)
    if isinstance(model, DiurnalMultimedia):
        ts = np.concatenate([_poisson_times(rng, model.burst_rate, active),
                             _poisson_times(rng, model.idle_rate, idle)])
    elif isinstance(model, Streaming):
        ts = np.concatenate([_slotted_times(rng, model.rate, active),
                             _poisson_times(rng, model.idle_rate, idle)])
    else:
        raise TypeError(f"unknown traffic model {model!r}")
    if active_from_us is not None and active_from_us >= start_us:
        ts = np.concatenate([ts, [lo]])  # association burst on arrival
    if active_until_us is not None and active_until_us <= end_us:
        ts = np.concatenate([ts, [hi - 1]])  # last frame before leaving
    ts = _strictly_increasing(ts)
    ts = ts[(ts >= lo) & (ts < hi)]
    up = rng.random(ts.size) >= model.down_fraction
    nbytes = np.where(up, model.up_bytes, model.down_bytes).astype(np.int64)
    jitter = rng.integers(-model.up_bytes // 4, model.up_bytes // 4 + 1, size=ts.size)
    nbytes = np.maximum(nbytes + jitter, 0)
    return TrafficEvents(ts, up, nbytes)
