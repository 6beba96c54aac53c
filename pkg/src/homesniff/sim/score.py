"""Compare pipeline output with simulator ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from homesniff.errors import GridMismatch
from homesniff.identity import DeviceKind
from homesniff.localization import Mobility
from homesniff.pipeline import Analysis
from homesniff.sim.simulate import EXCLUDED_ZONE, OUTSIDE_ZONE, GroundTruth
from homesniff.timeutil import US

_KIND_NAMES = {DeviceKind.SMART: "smart", DeviceKind.MANUAL: "manual", DeviceKind.UNKNOWN: "unknown"}


@dataclass
class Metrics:
    state_windows: int = 0
    state_correct: int = 0
    zone_windows: int = 0
    zone_correct: int = 0
    kind_total: int = 0
    kind_correct: int = 0
    stationarity: dict[str, dict[str, int]] = field(default_factory=lambda: {
        "stationary": {"stationary": 0, "mobile": 0}, "mobile": {"stationary": 0, "mobile": 0}})
    position_errors: list[float] = field(default_factory=list)
    activity_windows: int = 0
    activity_covered: int = 0
    guest_arrival_err: list[float] = field(default_factory=list)
    guest_departure_err: list[float] = field(default_factory=list)

    @staticmethod
    def _ratio(a: int, b: int) -> float:
        return a / b if b else math.nan

    @property
    def state_accuracy(self) -> float:
        return self._ratio(self.state_correct, self.state_windows)

    @property
    def zone_accuracy(self) -> float:
        return self._ratio(self.zone_correct, self.zone_windows)

    @property
    def kind_accuracy(self) -> float:
        return self._ratio(self.kind_correct, self.kind_total)

    @property
    def activity_coverage(self) -> float:
        return self._ratio(self.activity_covered, self.activity_windows)

    @property
    def stationarity_errors(self) -> int:
        return self.stationarity["stationary"]["mobile"] + self.stationarity["mobile"]["stationary"]

    def position_quantiles(self) -> dict[str, float]:
        if not self.position_errors:
            return {"p50": math.nan, "p90": math.nan, "max": math.nan}
        e = np.array(self.position_errors)
        return {"p50": float(np.percentile(e, 50)), "p90": float(np.percentile(e, 90)), "max": float(e.max())}

    def as_rows(self) -> list[tuple[str, str]]:
        def f(v):
            if isinstance(v, float):
                return "nan" if math.isnan(v) else ("inf" if math.isinf(v) else f"{v:.6f}")
            return str(v)
        rows = [
            ("state_accuracy", f(self.state_accuracy)), ("state_windows", f(self.state_windows)),
            ("zone_accuracy", f(self.zone_accuracy)), ("zone_windows", f(self.zone_windows)),
            ("kind_accuracy", f(self.kind_accuracy)), ("kind_devices", f(self.kind_total)),
            ("activity_coverage", f(self.activity_coverage)),
            ("activity_windows", f(self.activity_windows)),
            ("stationarity_errors", f(self.stationarity_errors)),
        ]
        for t in ("stationary", "mobile"):
            for p in ("stationary", "mobile"):
                rows.append((f"stationarity_true_{t}_pred_{p}", f(self.stationarity[t][p])))
        for k, v in self.position_quantiles().items():
            rows.append((f"position_error_{k}_m", f(v)))
        rows.append(("guest_arrival_err_windows_max",
                     f(max(self.guest_arrival_err)) if self.guest_arrival_err else "nan"))
        rows.append(("guest_departure_err_windows_max",
                     f(max(self.guest_departure_err)) if self.guest_departure_err else "nan"))
        return rows


def _check_grid(analysis: Analysis, truth: GroundTruth) -> None:
    g = analysis.grid
    if (g.start_us, g.window_s, g.n) != (truth.start_us, truth.window_s, truth.n):
        raise GridMismatch(f"analysis grid {g} does not match truth grid "
                           f"({truth.start_us}, {truth.window_s}, {truth.n})")


def score_against_truth(analysis: Analysis, truth: GroundTruth) -> Metrics:
    _check_grid(analysis, truth)
    m = Metrics()
    w_us = truth.window_s * US

    for mac, st in truth.states.items():
        if st is None:
            continue
        tl = analysis.timelines.get(mac)
        pred = tl.states if tl is not None else np.zeros(truth.n, dtype=np.int8)
        m.state_windows += truth.n
        m.state_correct += int((pred == st).sum())

    for mac, kind in truth.kinds.items():
        if kind is None:
            continue
        prof = analysis.profiles.get(mac)
        got = _KIND_NAMES[prof.kind] if prof is not None else "missing"
        m.kind_total += 1
        m.kind_correct += int(got == kind)

    for mac, stationary in truth.stationary.items():
        res = analysis.mobility.get(mac)
        if res is None or truth.kinds.get(mac) is None:
            continue
        t = "stationary" if stationary else "mobile"
        p = "stationary" if res.mobility is Mobility.STATIONARY else "mobile"
        m.stationarity[t][p] += 1

    for mac, track in analysis.tracks.items():
        if mac not in truth.zones:
            continue
        if not truth.stationary.get(mac, True):
            zones = truth.zones[mac]
            for i in np.flatnonzero(track.usable).tolist():
                if zones[i] in (EXCLUDED_ZONE, OUTSIDE_ZONE):
                    continue
                m.zone_windows += 1
                m.zone_correct += int(track.zones[i] == zones[i])
        pos = truth.positions[mac]
        ok = track.usable & np.isfinite(pos).all(axis=1)
        if ok.any():
            m.position_errors.extend(np.hypot(*(track.xy[ok] - pos[ok]).T).tolist())

    if truth.activities:
        covered: dict[str, np.ndarray] = {}
        for ev in analysis.events:
            mask = covered.setdefault(ev.label, np.zeros(truth.n, dtype=bool))
            i0 = max(0, (ev.start_us - truth.start_us) // w_us)
            i1 = min(truth.n, -(-(ev.end_us - truth.start_us) // w_us))
            mask[i0:i1] = True
        for label, a, b in truth.activities:
            i0 = max(0, (a - truth.start_us) // w_us)
            i1 = min(truth.n, (b - truth.start_us) // w_us)
            m.activity_windows += i1 - i0
            if label in covered:
                m.activity_covered += int(covered[label][i0:i1].sum())

    for mac, arrive, depart in truth.guests:
        hits = sorted((g for g in analysis.guests if g.guest_mac == mac), key=lambda g: g.arrival_us)
        if not hits:
            m.guest_arrival_err.append(math.inf)
            m.guest_departure_err.append(math.inf)
            continue
        first, last = hits[0], hits[-1]
        m.guest_arrival_err.append(abs(first.arrival_us - arrive) / w_us)
        if depart is None and last.departure_us is None:
            m.guest_departure_err.append(0.0)
        elif depart is None or last.departure_us is None:
            m.guest_departure_err.append(math.inf)
        else:
            m.guest_departure_err.append(abs(last.departure_us - depart) / w_us)
    return m
