"""Activity inference: declarative rules over state timelines and zone tracks, guests, sleep/wake."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from homesniff.errors import GridMismatch, RuleError
from homesniff.identity import DeviceKind, DeviceProfile
from homesniff.mac import MacAddress
from homesniff.timeutil import DAY_US, US, day_start, parse_hhmm
from homesniff.traffic import State, StateTimeline
from homesniff.wire.records import FrameRecord

_STATE_WORDS = {"off": (State.OFF,), "idle": (State.IDLE,), "active": (State.ACTIVE,),
                "on": (State.IDLE, State.ACTIVE)}
_KIND_WORDS = {"smart": DeviceKind.SMART, "manual": DeviceKind.MANUAL,
               "manually-controlled": DeviceKind.MANUAL, "unknown": DeviceKind.UNKNOWN}
_MAC_RE = re.compile(r"^[0-9a-fA-F]{2}([:-][0-9a-fA-F]{2}){5}$")


@dataclass(frozen=True)
class StateCond:
    selector: str
    state: str
    min_fraction: float

    def describe(self) -> str:
        return f"state {self.state} >= {self.min_fraction:g}"


@dataclass(frozen=True)
class ZoneCond:
    selector: str
    zone: str
    min_fraction: float

    def describe(self) -> str:
        return f"zone {self.zone} >= {self.min_fraction:g}"


@dataclass(frozen=True)
class TimeCond:
    start_s: int
    end_s: int

    def contains(self, sod: np.ndarray) -> np.ndarray:
        if self.start_s <= self.end_s:
            return (sod >= self.start_s) & (sod < self.end_s)
        return (sod >= self.start_s) | (sod < self.end_s)


Condition = Union[StateCond, ZoneCond, TimeCond]


@dataclass(frozen=True)
class ActivityRule:
    name: str
    conditions: tuple[Condition, ...]
    min_duration_s: int
    emit_label: str
    priority: int = 0


@dataclass
class ActivityEvent:
    label: str
    start_us: int
    end_us: int
    confidence: float
    evidence: list[tuple[str, str]]
    rule: str = ""
    priority: int = 0


class Resemblance(enum.Enum):
    MULTIMEDIA = "multimedia"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class GuestEvent:
    guest_mac: MacAddress
    arrival_us: int
    departure_us: Optional[int]
    resembles: Resemblance


# --- rule file ----------------------------------------------------------------

def _fraction(tok: str, lineno: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise RuleError(lineno, f"fraction {tok!r} is not a number") from None
    if not 0 < v <= 1:
        raise RuleError(lineno, f"fraction {v} outside (0, 1]")
    return v


def compile_rules(text: str) -> list[ActivityRule]:
    """Parse rule blocks. Each block opens with ``rule NAME``; ``#`` starts a comment.

    Block lines: ``priority N``, ``min_duration_s N``, ``emit LABEL...``,
    ``state SELECTOR STATE FRACTION``, ``zone SELECTOR LABEL FRACTION``,
    ``time HH:MM-HH:MM``.
    """
    rules: list[ActivityRule] = []
    cur: Optional[dict] = None

    def close():
        if cur is None:
            return
        if not cur["conds"]:
            raise RuleError(cur["line"], f"rule {cur['name']!r} has no conditions")
        rules.append(ActivityRule(cur["name"], tuple(cur["conds"]), cur["dur"],
                                  cur["emit"] or cur["name"], cur["prio"]))

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        rest = rest.strip()
        if key == "rule":
            close()
            if not rest:
                raise RuleError(lineno, "rule without a name")
            cur = {"name": rest, "conds": [], "dur": 600, "emit": None, "prio": 0, "line": lineno}
            continue
        if cur is None:
            raise RuleError(lineno, f"{key!r} outside a rule block")
        args = rest.split()
        if key == "priority":
            try:
                cur["prio"] = int(rest)
            except ValueError:
                raise RuleError(lineno, f"bad priority {rest!r}") from None
        elif key == "min_duration_s":
            try:
                cur["dur"] = int(rest)
            except ValueError:
                raise RuleError(lineno, f"bad duration {rest!r}") from None
            if cur["dur"] <= 0:
                raise RuleError(lineno, "min_duration_s must be positive")
        elif key == "emit":
            if not rest:
                raise RuleError(lineno, "emit needs a label")
            cur["emit"] = rest
        elif key == "state":
            if len(args) != 3:
                raise RuleError(lineno, "state needs: SELECTOR STATE FRACTION")
            if args[1].lower() not in _STATE_WORDS:
                raise RuleError(lineno, f"unknown state {args[1]!r}")
            cur["conds"].append(StateCond(args[0], args[1].lower(), _fraction(args[2], lineno)))
        elif key == "zone":
            if len(args) != 3:
                raise RuleError(lineno, "zone needs: SELECTOR LABEL FRACTION")
            cur["conds"].append(ZoneCond(args[0], args[1], _fraction(args[2], lineno)))
        elif key == "time":
            m = re.fullmatch(r"(\d{1,2}:\d{2})\s*-\s*(\d{1,2}:\d{2})", rest)
            if not m:
                raise RuleError(lineno, f"bad time range {rest!r}")
            try:
                cur["conds"].append(TimeCond(parse_hhmm(m.group(1)), parse_hhmm(m.group(2))))
            except ValueError as exc:
                raise RuleError(lineno, str(exc)) from None
        else:
            raise RuleError(lineno, f"unknown predicate {key!r}")
    close()
    return sorted(rules, key=lambda r: (-r.priority, r.name))


def default_rules_text() -> str:
    return resources.files("homesniff.data").joinpath("default_rules.txt").read_text(encoding="utf-8")


# --- evaluation ---------------------------------------------------------------

@dataclass(frozen=True)
class ZoneTrack:
    device: MacAddress
    window_s: int
    start_us: int
    labels: tuple[Optional[str], ...]

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class SelectorContext:
    """Maps rule selectors to devices: a MAC, ``kind:<kind>`` or a free label."""
    kinds: Mapping[MacAddress, DeviceKind] = field(default_factory=dict)
    labels: Mapping[str, Sequence[MacAddress]] = field(default_factory=dict)

    def resolve(self, selector: str) -> list[MacAddress]:
        if _MAC_RE.match(selector):
            return [MacAddress.parse(selector)]
        if selector.startswith("kind:"):
            kind = _KIND_WORDS.get(selector[5:].lower())
            return sorted(m for m, k in self.kinds.items() if k is kind) if kind else []
        name = selector[6:] if selector.startswith("label:") else selector
        return sorted(self.labels.get(name, ()))


@dataclass(frozen=True)
class Grid:
    start_us: int
    window_s: int
    n: int

    def check(self, obj, what: str) -> None:
        if obj.start_us != self.start_us or obj.window_s != self.window_s or len(obj) != self.n:
            raise GridMismatch(f"{what} is not aligned with the evaluation grid")


def _window_sums(x: np.ndarray, length: int) -> np.ndarray:
    c = np.concatenate(([0], np.cumsum(x, dtype=np.int64)))
    return c[length:] - c[:-length]


def evaluate_rules(
    rules: Sequence[ActivityRule],
    timelines: Mapping[MacAddress, StateTimeline],
    zone_tracks: Mapping[MacAddress, ZoneTrack],
    context: SelectorContext,
    grid: Grid,
) -> list[ActivityEvent]:
    """Slide each rule's duration over the grid and emit merged firings.

    State fractions are over all windows of the slide; zone fractions are over
    windows where the device was localized. A selector matching several
    devices requires every one of them to meet the fraction.
    """
    for mac, tl in timelines.items():
        grid.check(tl, f"state timeline of {mac}")
    for mac, zt in zone_tracks.items():
        grid.check(zt, f"zone track of {mac}")
    sod = ((grid.start_us + np.arange(grid.n, dtype=np.int64) * grid.window_s * US) % DAY_US) / US
    events: list[ActivityEvent] = []
    for rule in sorted(rules, key=lambda r: (-r.priority, r.name)):
        length = max(1, -(-rule.min_duration_s // grid.window_s))
        if length > grid.n:
            continue
        npos = grid.n - length + 1
        worst = np.ones(npos)
        ok = np.ones(npos, dtype=bool)
        evidence: list[tuple[str, str]] = []
        for cond in rule.conditions:
            if isinstance(cond, TimeCond):
                inside = _window_sums(cond.contains(sod).astype(np.int64), length) == length
                ok &= inside
                continue
            devices = context.resolve(cond.selector)
            if not devices:
                ok[:] = False
                continue
            frac_all = np.ones(npos)
            for mac in devices:
                if isinstance(cond, StateCond):
                    tl = timelines.get(mac)
                    if tl is None:
                        frac = np.zeros(npos)
                    else:
                        hit = np.isin(tl.states, [int(s) for s in _STATE_WORDS[cond.state]])
                        frac = _window_sums(hit.astype(np.int64), length) / length
                else:
                    zt = zone_tracks.get(mac)
                    if zt is None:
                        frac = np.zeros(npos)
                    else:
                        obs = np.array([lab is not None for lab in zt.labels], dtype=np.int64)
                        hit = np.array([lab == cond.zone for lab in zt.labels], dtype=np.int64)
                        seen = _window_sums(obs, length)
                        frac = np.where(seen > 0, _window_sums(hit, length) / np.maximum(seen, 1), 0.0)
                frac_all = np.minimum(frac_all, frac)
                evidence.append((str(mac), cond.describe()))
            ok &= frac_all >= cond.min_fraction - 1e-12
            worst = np.minimum(worst, frac_all)
        fire = np.flatnonzero(ok)
        if fire.size == 0:
            continue
        # merge overlapping or touching slides into events
        run_start = fire[0]
        prev = fire[0]
        conf = worst[fire[0]]
        for p in fire[1:].tolist() + [None]:
            if p is not None and p <= prev + length:
                prev = p
                conf = min(conf, worst[p])
                continue
            events.append(ActivityEvent(
                label=rule.emit_label,
                start_us=grid.start_us + int(run_start) * grid.window_s * US,
                end_us=grid.start_us + int(prev + length) * grid.window_s * US,
                confidence=float(min(1.0, conf)),
                evidence=list(dict.fromkeys(evidence)) or [("-", "time")],
                rule=rule.name,
                priority=rule.priority,
            ))
            if p is not None:
                run_start = prev = p
                conf = worst[p]
    events.sort(key=lambda e: (e.start_us, -e.priority, e.rule))
    return events


# --- guests ---------------------------------------------------------------------

def _burst_ratio(times_us: Sequence[int], window_us: int, min_windows: int) -> Optional[float]:
    """p90 over p10 of nonzero per-window frame counts; None with too few windows."""
    _, counts = np.unique(np.asarray(times_us, dtype=np.int64) // window_us, return_counts=True)
    if len(counts) < min_windows:
        return None
    return float(np.percentile(counts, 90) / np.percentile(counts, 10))


def detect_guests(
    frames: Iterable[FrameRecord],
    baseline: Mapping[MacAddress, DeviceProfile],
    observation_start_us: int,
    target_bssid: Optional[MacAddress] = None,
    silence_s: int = 3600,
    capture_end_us: Optional[int] = None,
    window_s: int = 10,
    burst_ratio: float = 3.0,
    min_windows: int = 20,
) -> list[GuestEvent]:
    """One event per presence session of every station absent from the baseline.

    A session ends at the last frame before ``silence_s`` of silence. A session
    still open at capture end has no departure. Sessions whose per-window frame
    counts spread by at least ``burst_ratio`` between the 10th and 90th percentile resemble
    a manually used device.
    """
    times: dict[MacAddress, list[int]] = {}
    last_ts = None
    for f in frames:
        last_ts = f.ts_us if last_ts is None else max(last_ts, f.ts_us)
        if f.ts_us < observation_start_us:
            continue
        if target_bssid is not None and f.addrs.bssid != target_bssid:
            continue
        for mac in {f.addrs.sa, f.addrs.ta}:
            if mac.is_multicast() or mac in baseline or mac == target_bssid:
                continue
            times.setdefault(mac, []).append(f.ts_us)
    end = capture_end_us if capture_end_us is not None else last_ts
    silence_us = silence_s * US
    out = []
    for mac in sorted(times):
        ts = sorted(set(times[mac]))
        sessions = []
        s0 = prev = ts[0]
        for t in ts[1:]:
            if t - prev >= silence_us:
                sessions.append((s0, prev))
                s0 = t
            prev = t
        sessions.append((s0, prev))
        for a, b in sessions:
            departed = end is not None and end - b >= silence_us
            span_ts = [t for t in ts if a <= t <= b]
            br = _burst_ratio(span_ts, window_s * US, min_windows)
            resembles = Resemblance.MULTIMEDIA if br is not None and br >= burst_ratio \
                else Resemblance.UNKNOWN
            out.append(GuestEvent(mac, a, b if departed and b > a else None, resembles))
    out.sort(key=lambda g: (g.arrival_us, str(g.guest_mac)))
    return out


# --- sleep / wake -----------------------------------------------------------------

def detect_sleep_wake(
    timelines: Sequence[StateTimeline],
    day_us: int,
    pivot_s: int = 3 * 3600,
    min_run: int = 3,
) -> Optional[tuple[int, int]]:
    """(sleep, wake) for the day: wake after the morning pivot, sleep before the next one.

    Returns None unless every device is off at both pivots and an awake run exists.
    """
    if not timelines:
        return None
    base = timelines[0]
    for tl in timelines[1:]:
        Grid(base.start_us, base.window_s, len(base)).check(tl, "manual timeline")
    w_us = base.window_s * US
    awake = np.zeros(len(base), dtype=bool)
    for tl in timelines:
        awake |= tl.states != State.OFF
    p0 = day_start(day_us) + pivot_s * US
    p1 = p0 + DAY_US
    i0 = (p0 - base.start_us) // w_us
    i1 = min((p1 - base.start_us) // w_us, len(base))
    if i0 < 0 or i0 >= len(base) or awake[i0]:
        return None
    if i1 < len(base) and awake[i1]:
        return None
    seg = awake[i0:i1]
    wake_i = None
    run = 0
    for k, a in enumerate(seg):
        run = run + 1 if a else 0
        if run >= min_run:
            wake_i = k - min_run + 1
            break
    if wake_i is None:
        return None
    last = int(np.flatnonzero(seg)[-1])
    wake = base.start_us + (i0 + wake_i) * w_us
    sleep = base.start_us + (i0 + last + 1) * w_us
    return sleep, wake
