"""End-to-end analysis of a multi-sniffer capture: identities, states, locations, activities."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from homesniff.ble import BleAdvRecord
from homesniff.errors import InsufficientData, InvalidParameter
from homesniff.har import (
    ActivityEvent,
    ActivityRule,
    GuestEvent,
    Grid,
    SelectorContext,
    ZoneTrack,
    compile_rules,
    default_rules_text,
    detect_guests,
    detect_sleep_wake,
    evaluate_rules,
)
from homesniff.identity import (
    DeviceKind,
    DeviceProfile,
    OuiDatabase,
    ProbeEntry,
    build_profiles,
    filter_network,
    probe_inventory,
)
from homesniff.localization import (
    PathLossParams,
    RssiFingerprint,
    SnifferLayout,
    StationarityResult,
    ZoneModel,
    build_fingerprints,
    classify_stationarity,
    learn_reference_points,
    match_zones_batch,
    trilaterate_batch,
)
from homesniff.mac import MacAddress
from homesniff.timeutil import DAY_US, US, day_start
from homesniff.traffic import (
    DEFAULT_OFF_GAP_WINDOWS,
    DEFAULT_PRESENCE_GAP_S,
    DayClassRoutine,
    KindEvidence,
    PresenceIntervals,
    StateConfig,
    StateTimeline,
    TrafficSeries,
    aggregate_windows,
    classify_device_kind,
    classify_states,
    compute_threshold,
    merge_sniffers,
    presence_intervals,
    split_days,
    weekly_routine,
)
from homesniff.wire.records import FrameRecord, FrameType

log = logging.getLogger(__name__)

GRID_ALIGN_S = 3600


@dataclass
class PipelineConfig:
    window_s: int = 10
    bssid: Optional[MacAddress] = None
    layout: Optional[SnifferLayout] = None
    pathloss: PathLossParams = field(default_factory=PathLossParams)
    zone_model: Optional[ZoneModel] = None
    rules: Optional[Sequence[ActivityRule]] = None
    labels: Mapping[MacAddress, str] = field(default_factory=dict)
    oui_db: OuiDatabase = field(default_factory=lambda: OuiDatabase({}, 0))
    baseline_s: int = 12 * 3600
    start_us: Optional[int] = None
    end_us: Optional[int] = None
    off_gap_windows: int = DEFAULT_OFF_GAP_WINDOWS
    presence_gap_s: float = DEFAULT_PRESENCE_GAP_S
    routine_cell_s: Optional[int] = None  # defaults to the window
    fuzzy_ble_join: bool = True

    def __post_init__(self):
        if self.window_s < 1:
            raise InvalidParameter(f"window must be at least 1 s, got {self.window_s}")


@dataclass
class Track:
    """Per-window position estimates of one transmitter; NaN where not localisable."""
    device: MacAddress
    xy: np.ndarray
    linear_xy: np.ndarray
    residual: np.ndarray
    zones: list[Optional[str]]
    usable: np.ndarray


@dataclass
class Analysis:
    grid: Grid
    bssid: Optional[MacAddress]
    capture_end_us: Optional[int]
    layout: Optional[SnifferLayout]
    profiles: dict[MacAddress, DeviceProfile]
    series: dict[MacAddress, TrafficSeries]
    timelines: dict[MacAddress, StateTimeline]
    kinds: dict[MacAddress, Optional[KindEvidence]]
    fingerprints: dict[MacAddress, list[RssiFingerprint]]
    tracks: dict[MacAddress, Track]
    mobility: dict[MacAddress, Optional[StationarityResult]]
    events: list[ActivityEvent]
    guests: list[GuestEvent]
    sleep_wake: list[tuple[int, int, int]]
    presence: dict[MacAddress, PresenceIntervals]
    routine: Optional[dict[str, DayClassRoutine]]
    probes: dict[MacAddress, dict[bytes, ProbeEntry]]
    labels: dict[MacAddress, str]

    @property
    def devices(self) -> list[MacAddress]:
        return sorted(self.profiles)

    def label_of(self, mac: MacAddress) -> str:
        return self.labels.get(mac, str(mac))


def infer_bssid(frames: Iterable[FrameRecord]) -> Optional[MacAddress]:
    """The BSSID carried by the most data frames; ties go to the lowest address."""
    counts = Counter(f.addrs.bssid for f in frames
                     if f.fc.ftype == FrameType.DATA and f.addrs.bssid is not None
                     and not f.addrs.bssid.is_multicast())
    if not counts:
        return None
    return min(counts, key=lambda m: (-counts[m], m))


def analysis_grid(frames: Sequence[FrameRecord], window_s: int,
                  start_us: Optional[int] = None, end_us: Optional[int] = None) -> Grid:
    """Windows covering the capture, widened to whole clock hours unless bounds are given."""
    align = GRID_ALIGN_S * US
    if start_us is None:
        start_us = (min(f.ts_us for f in frames) // align) * align if frames else 0
    if end_us is None:
        end_us = -(-(max(f.ts_us for f in frames) + 1) // align) * align if frames else start_us
    w_us = window_s * US
    n = max(0, -(-(end_us - start_us) // w_us))
    return Grid(start_us, window_s, n)


def parse_labels(text: str) -> dict[MacAddress, str]:
    """``mac<TAB>label`` per line; ``#`` comments and blank lines ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise InvalidParameter(f"labels line {lineno}: expected 'mac label'")
        try:
            out[MacAddress.parse(parts[0])] = parts[1].strip()
        except ValueError as exc:
            raise InvalidParameter(f"labels line {lineno}: {exc}") from None
    return out


def learn_zone_model(frames: Iterable[FrameRecord], intervals: Sequence[tuple[str, int, int]],
                     layout: SnifferLayout, window_s: int, device: Optional[MacAddress] = None,
                     min_fingerprints: int = 10) -> ZoneModel:
    """Reference points from a labelled capture: windows lying wholly inside a label's interval."""
    frames = [f for f in frames if device is None or f.addrs.ta == device]
    if not intervals:
        raise InsufficientData("no labelled intervals")
    start = min(a for _, a, _ in intervals)
    fps = build_fingerprints(frames, layout, window_s, start)
    w_us = window_s * US
    groups: dict[str, list[RssiFingerprint]] = {}
    for label, _, _ in intervals:
        groups.setdefault(label, [])
    for per_dev in fps.values():
        for fp in per_dev:
            for label, a, b in intervals:
                if a <= fp.window_start_us and fp.window_start_us + w_us <= b:
                    groups[label].append(fp)
                    break
    return learn_reference_points(list(groups.items()), layout.ids, min_fingerprints)


def _frames_by_device(merged: Sequence[FrameRecord], devices: Iterable[MacAddress]) -> dict:
    wanted = set(devices)
    out: dict[MacAddress, list[FrameRecord]] = {m: [] for m in wanted}
    for f in merged:
        ta, ra = f.addrs.ta, f.addrs.ra
        if ta in wanted:
            out[ta].append(f)
        if ra in wanted and ra != ta:
            out[ra].append(f)
    return out


def _fingerprint_matrix(fps: Sequence[RssiFingerprint], grid: Grid, k: int) -> np.ndarray:
    m = np.full((grid.n, k), np.nan)
    w_us = grid.window_s * US
    for fp in fps:
        i = (fp.window_start_us - grid.start_us) // w_us
        if 0 <= i < grid.n:
            m[i] = [np.nan if v is None else v for v in fp.values]
    return m


def run_pipeline(frames: Iterable[FrameRecord], ble: Iterable[BleAdvRecord] = (),
                 config: Optional[PipelineConfig] = None) -> Analysis:
    cfg = config or PipelineConfig()
    frames = sorted(frames, key=lambda f: (f.ts_us, f.sniffer_id))
    ble = list(ble)
    rules = list(cfg.rules) if cfg.rules is not None else compile_rules(default_rules_text())
    grid = analysis_grid(frames, cfg.window_s, cfg.start_us, cfg.end_us)
    grid_end = grid.start_us + grid.n * grid.window_s * US
    capture_end = frames[-1].ts_us if frames else None

    bssid = cfg.bssid or infer_bssid(frames)
    net = filter_network(frames, bssid) if bssid is not None else []
    merged = merge_sniffers(net)

    profiles = build_profiles(net, ble, cfg.oui_db, fuzzy_ble_join=cfg.fuzzy_ble_join)
    baseline_end = grid.start_us + cfg.baseline_s * US
    baseline = build_profiles([f for f in net if f.ts_us < baseline_end], (), cfg.oui_db)

    series: dict[MacAddress, TrafficSeries] = {}
    timelines: dict[MacAddress, StateTimeline] = {}
    kinds: dict[MacAddress, Optional[KindEvidence]] = {}
    if grid.n:
        per_dev = _frames_by_device(merged, profiles)
        for mac in sorted(profiles):
            s = aggregate_windows(per_dev[mac], grid.window_s, grid.start_us, grid_end, device=mac)
            series[mac] = s
            timelines[mac] = classify_states(s, StateConfig(compute_threshold(s), cfg.off_gap_windows))
            try:
                ev = classify_device_kind(s)
            except InsufficientData as exc:
                log.info("%s: kind undetermined (%s)", mac, exc)
                ev = None
            kinds[mac] = ev
            profiles[mac].kind = ev.kind if ev is not None else DeviceKind.UNKNOWN

    fingerprints: dict[MacAddress, list[RssiFingerprint]] = {}
    tracks: dict[MacAddress, Track] = {}
    mobility: dict[MacAddress, Optional[StationarityResult]] = {}
    if cfg.layout is not None and grid.n:
        fingerprints = {m: fps for m, fps in
                        build_fingerprints(net, cfg.layout, grid.window_s, grid.start_us).items()
                        if m in profiles}
        k = len(cfg.layout)
        for mac in sorted(fingerprints):
            fps = fingerprints[mac]
            try:
                mobility[mac] = classify_stationarity(fps)
            except InsufficientData:
                mobility[mac] = None
            mat = _fingerprint_matrix(fps, grid, k)
            xy, resid, lin = trilaterate_batch(mat, cfg.layout, cfg.pathloss)
            if cfg.zone_model is not None:
                zones, _ = match_zones_batch(cfg.zone_model, mat)
            else:
                zones = [None] * grid.n
            tracks[mac] = Track(mac, xy, lin, resid, zones, ~np.isnan(xy[:, 0]))

    labels = dict(cfg.labels)
    for mac, p in profiles.items():
        if p.is_router and mac not in labels:
            labels[mac] = "router"
    by_label: dict[str, list[MacAddress]] = {}
    for mac, lab in labels.items():
        by_label.setdefault(lab, []).append(mac)
    context = SelectorContext({m: p.kind for m, p in profiles.items()}, by_label)
    zone_tracks = {m: ZoneTrack(m, grid.window_s, grid.start_us, tuple(t.zones)) for m, t in tracks.items()}
    events = evaluate_rules(rules, timelines, zone_tracks, context, grid) if grid.n else []

    guests = detect_guests(net, baseline, baseline_end, bssid, capture_end_us=capture_end,
                           window_s=config.window_s) if net else []

    residents = [m for m in sorted(timelines)
                 if m in baseline and profiles[m].kind is DeviceKind.MANUAL]
    sleep_wake = []
    if residents:
        d = day_start(grid.start_us)
        while d < grid_end:
            if d + DAY_US + 3 * 3600 * US < grid_end:
                sw = detect_sleep_wake([timelines[m] for m in residents], d)
                if sw is not None:
                    sleep_wake.append((d, sw[0], sw[1]))
            d += DAY_US

    presence = {m: presence_intervals(s, max(cfg.presence_gap_s, grid.window_s)) for m, s in series.items()}
    routine = None
    if residents:
        merged_iv = sorted(iv for m in residents for iv in presence[m].intervals)
        union: list[tuple[int, int]] = []
        for a, b in merged_iv:
            if union and a <= union[-1][1]:
                union[-1] = (union[-1][0], max(union[-1][1], b))
            else:
                union.append((a, b))
        first = day_start(grid.start_us)
        last = day_start(grid_end - 1)
        # only whole days enter the routine
        days = {d: iv for d, iv in split_days(PresenceIntervals(None, union, cfg.presence_gap_s),
                                              first, last).items()
                if d >= grid.start_us and d + DAY_US <= grid_end}
        try:
            routine = weekly_routine(days, cell_s=cfg.routine_cell_s or grid.window_s)
        except (InsufficientData, InvalidParameter) as exc:
            log.info("no weekly routine: %s", exc)
            routine = None

    return Analysis(
        grid=grid, bssid=bssid, capture_end_us=capture_end, layout=cfg.layout, profiles=profiles,
        series=series, timelines=timelines, kinds=kinds, fingerprints=fingerprints, tracks=tracks,
        mobility=mobility, events=events, guests=guests, sleep_wake=sleep_wake, presence=presence,
        routine=routine, probes=probe_inventory(net), labels=labels,
    )
