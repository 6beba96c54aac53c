"""Run a scenario: per-sniffer frame records, BLE adverts and grid-aligned ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from homesniff.ble import AD_COMPLETE_NAME, AD_MANUFACTURER, AD_SHORT_NAME, AdStructure, BleAdvRecord, \
    decode_views, encode_uuid16_list
from homesniff.mac import BROADCAST, MacAddress
from homesniff.sim.channel import MIN_DISTANCE_M, drop_probability
from homesniff.sim.scenario import AWAY, DeviceSpec, DiurnalMultimedia, Inhabitant, Scenario, Streaming
from homesniff.sim.traffic import Purpose, TrafficEvents, device_rng, generate_traffic, spans_mask_intervals
from homesniff.timeutil import DAY_US, US
from homesniff.traffic import State
from homesniff.wire.records import (
    Direction,
    FrameRecord,
    FrameType,
    RadiotapMeta,
    ResolvedAddresses,
    make_frame_control,
)

FLAGS_UP = 0x41  # to-DS, protected
FLAGS_DOWN = 0x42  # from-DS, protected
QOS_DATA = 8
SUBTYPE_PROBE_REQUEST = 4
SUBTYPE_BEACON = 8
BEACON_INTERVAL_S = 60
RATE_KBPS = 6000
EXCLUDED_ZONE = "excluded"
OUTSIDE_ZONE = "outside"


@dataclass
class GroundTruth:
    start_us: int
    window_s: int
    n: int
    positions: dict[MacAddress, np.ndarray] = field(default_factory=dict)
    zones: dict[MacAddress, list[str]] = field(default_factory=dict)
    states: dict[MacAddress, Optional[np.ndarray]] = field(default_factory=dict)
    kinds: dict[MacAddress, Optional[str]] = field(default_factory=dict)
    stationary: dict[MacAddress, bool] = field(default_factory=dict)
    labels: dict[MacAddress, str] = field(default_factory=dict)
    activities: list[tuple[str, int, int]] = field(default_factory=list)
    guests: list[tuple[MacAddress, int, Optional[int]]] = field(default_factory=list)
    stats: dict[MacAddress, dict] = field(default_factory=dict)

    def window_mid(self) -> np.ndarray:
        return self.start_us + (np.arange(self.n, dtype=np.int64) * 2 + 1) * self.window_s * US // 2


@dataclass
class SimulationResult:
    frames: dict[str, list[FrameRecord]]
    ble: list[BleAdvRecord]
    truth: GroundTruth

    def all_frames(self) -> list[FrameRecord]:
        out = [f for fs in self.frames.values() for f in fs]
        out.sort(key=lambda f: (f.ts_us, f.sniffer_id))
        return out


# --- geometry ---------------------------------------------------------------------

def point_in_polygon(x: np.ndarray, y: np.ndarray, poly) -> np.ndarray:
    """Even-odd rule; points on the lower/left edges count as inside."""
    inside = np.zeros(np.shape(x), dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if y1 == y2:
            continue
        cond = (y1 <= y) != (y2 <= y)
        xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= cond & (x < xi)
    return inside


def zone_of(scn: Scenario, xy: np.ndarray) -> list[str]:
    out = np.full(len(xy), OUTSIDE_ZONE, dtype=object)
    for room in reversed(scn.rooms):
        m = point_in_polygon(xy[:, 0], xy[:, 1], room.polygon)
        out[m] = room.zone
    return out.tolist()


def _cross_many(tx: np.ndarray, rx, a, b) -> np.ndarray:
    """Vectorised segments_cross for many transmitter points against one receiver and one wall."""
    def orient(ax, ay, bx, by, cx, cy):
        return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    px, py = tx[:, 0], tx[:, 1]
    d1 = orient(a[0], a[1], b[0], b[1], px, py)
    d2 = orient(a[0], a[1], b[0], b[1], rx[0], rx[1])
    d3 = orient(px, py, rx[0], rx[1], a[0], a[1])
    d4 = orient(px, py, rx[0], rx[1], b[0], b[1])
    collinear = (d1 == 0) & (d2 == 0)
    return (d1 * d2 <= 0) & (d3 * d4 <= 0) & ~collinear


def mean_rssi_many(tx: np.ndarray, rx, p0: np.ndarray, n: float, walls) -> np.ndarray:
    d = np.maximum(np.hypot(tx[:, 0] - rx[0], tx[:, 1] - rx[1]), MIN_DISTANCE_M)
    loss = np.zeros(len(tx))
    for w in walls:
        loss += np.where(_cross_many(tx, rx, w.a, w.b), w.attenuation_db, 0.0)
    return p0 - 10.0 * n * np.log10(d) - loss


def inhabitant_positions(scn: Scenario, who: Inhabitant, ts_us: np.ndarray) -> np.ndarray:
    """Dwell at each waypoint's spot, walking to the next one during the last ``travel_s``."""
    pts = []
    for wp in who.waypoints:
        if wp.room == AWAY:
            pts.append((math.nan, math.nan))
            continue
        room = scn.room(wp.room)
        pts.append(room.spots[wp.spot] if room.spots else _centroid(room.polygon))
    pts = np.array(pts, dtype=float)
    t = np.array([wp.t_s for wp in who.waypoints], dtype=float)
    sod = (np.asarray(ts_us, dtype=np.int64) % DAY_US) / US
    k = np.searchsorted(t, sod, side="right") - 1  # -1 wraps to the previous day's last waypoint
    nxt = (k + 1) % len(t)
    t_next = np.where(k + 1 < len(t), t[nxt], t[0] + 86_400)
    sod_adj = np.where(k < 0, sod + 86_400, sod)
    t_cur = np.where(k < 0, t[-1], t[k])
    travel = np.minimum(who.travel_s, t_next - t_cur)
    frac = np.clip((sod_adj - (t_next - travel)) / np.maximum(travel, 1e-9), 0.0, 1.0)
    cur = pts[k]
    # leaving or entering the home is a jump, not a walk
    target = np.where(np.isnan(pts[nxt]), cur, pts[nxt])
    return cur + (target - cur) * frac[:, None]


def _centroid(poly) -> tuple[float, float]:
    xs, ys = zip(*poly)
    return sum(xs) / len(xs), sum(ys) / len(ys)


def _at_home(pos: np.ndarray) -> np.ndarray:
    return np.isfinite(pos).all(axis=1)


def device_positions(scn: Scenario, dev: DeviceSpec, ts_us: np.ndarray) -> np.ndarray:
    if dev.position is not None:
        return np.tile(np.array(dev.position, dtype=float), (len(ts_us), 1))
    who = next(h for h in scn.inhabitants if h.name == dev.carried_by)
    return inhabitant_positions(scn, who, ts_us)


# --- observation ------------------------------------------------------------------

@dataclass
class _Observations:
    """RSSI per (event, sniffer) and the received mask."""
    rssi: np.ndarray
    received: np.ndarray


def observe(scn: Scenario, tx: np.ndarray, p0: np.ndarray, shadow_rng, drop_rng) -> _Observations:
    sniffers = scn.layout.sniffers
    n_ev = len(tx)
    rssi = np.empty((n_ev, len(sniffers)))
    for j, (_, sx, sy) in enumerate(sniffers):
        rssi[:, j] = mean_rssi_many(tx, (sx, sy), p0, scn.channel.n, scn.walls)
    if scn.channel.sigma_db > 0:
        rssi += shadow_rng.normal(0.0, scn.channel.sigma_db, size=rssi.shape)
    res = scn.channel.rssi_resolution_db
    if res > 0:
        rssi = np.round(rssi / res) * res
    received = drop_rng.random(size=rssi.shape) >= drop_probability(rssi, scn.channel)
    return _Observations(rssi, received)


def _rssi_value(v: float, resolution: float):
    return int(v) if resolution == 1.0 else float(v)


class _FrameSink:
    def __init__(self, scn: Scenario):
        self.scn = scn
        self.frames: dict[str, list[FrameRecord]] = {sid: [] for sid in scn.layout.ids}

    def emit(self, ts: np.ndarray, obs: _Observations, fc, addrs, direction, nbytes, ssid=None):
        res = self.scn.channel.rssi_resolution_db
        freq = self.scn.channel.freq_mhz
        for j, sid in enumerate(self.scn.layout.ids):
            out = self.frames[sid]
            col = obs.rssi[:, j]
            rec = obs.received[:, j]
            for i in np.flatnonzero(rec).tolist():
                meta = RadiotapMeta(int(ts[i]), _rssi_value(col[i], res), freq, RATE_KBPS, False)
                out.append(FrameRecord(sid, meta, fc, addrs, direction, int(nbytes[i]), ssid))


def _periodic_times(rng, interval_s: float, lo: int, hi: int) -> np.ndarray:
    step = int(round(interval_s * US))
    return np.arange(lo + int(rng.integers(0, step)), hi, step, dtype=np.int64)


def _adv_payload(spec) -> bytes:
    structs = [AdStructure(0x01, b"\x06")]
    if spec.local_name:
        structs.append(AdStructure(AD_COMPLETE_NAME if spec.complete_name else AD_SHORT_NAME,
                                   spec.local_name.encode("utf-8")))
    if spec.services:
        structs.append(encode_uuid16_list(spec.services))
    if spec.manufacturer is not None:
        structs.append(AdStructure(AD_MANUFACTURER, spec.manufacturer))
    return b"".join(s.encode() for s in structs)


def simulate(scn: Scenario) -> SimulationResult:
    lo, hi = scn.start_us, scn.end_us
    sink = _FrameSink(scn)
    ble_out: list[BleAdvRecord] = []
    n_win = -(-(hi - lo) // (scn.window_s * US))
    truth = GroundTruth(lo, scn.window_s, n_win)
    mids = truth.window_mid()
    resolution = scn.channel.rssi_resolution_db

    fc_up = make_frame_control(FrameType.DATA, QOS_DATA, FLAGS_UP)
    fc_down = make_frame_control(FrameType.DATA, QOS_DATA, FLAGS_DOWN)
    fc_probe = make_frame_control(FrameType.MANAGEMENT, SUBTYPE_PROBE_REQUEST, 0x00)
    fc_beacon = make_frame_control(FrameType.MANAGEMENT, SUBTYPE_BEACON, 0x00)

    for net in scn.networks:
        rng_b = device_rng(scn.seed, net.bssid, Purpose.PROBES)
        ts = _periodic_times(rng_b, BEACON_INTERVAL_S, lo, hi)
        tx = np.tile(np.array(net.position), (len(ts), 1))
        obs = observe(scn, tx, np.full(len(ts), net.p0_dbm),
                      device_rng(scn.seed, net.bssid, Purpose.SHADOWING), device_rng(scn.seed, net.bssid, Purpose.DROPS))
        addrs = ResolvedAddresses(sa=net.bssid, da=BROADCAST, ta=net.bssid, ra=BROADCAST, bssid=net.bssid)
        sink.emit(ts, obs, fc_beacon, addrs, Direction.PEER_OR_BROADCAST, np.full(len(ts), 60 + len(net.ssid)),
                  net.ssid)

    for dev in scn.all_devices:
        net = scn.network(dev.network)
        rng_t = device_rng(scn.seed, dev.mac, Purpose.TRAFFIC)
        ev: TrafficEvents = generate_traffic(dev.traffic, lo, hi, rng_t, dev.arrive_us, dev.depart_us)
        pos = device_positions(scn, dev, ev.ts_us)
        home = _at_home(pos)
        if not home.all():
            ev = TrafficEvents(ev.ts_us[home], ev.uplink[home], ev.nbytes[home])
            pos = pos[home]
        tx = np.where(ev.uplink[:, None], pos, np.array(net.position)[None, :]) if len(ev) else pos
        p0 = np.where(ev.uplink, dev.p0_dbm, net.p0_dbm)
        obs = observe(scn, tx, p0, device_rng(scn.seed, dev.mac, Purpose.SHADOWING),
                      device_rng(scn.seed, dev.mac, Purpose.DROPS))
        up = ev.uplink
        a_up = ResolvedAddresses(sa=dev.mac, da=net.bssid, ta=dev.mac, ra=net.bssid, bssid=net.bssid)
        a_down = ResolvedAddresses(sa=net.bssid, da=dev.mac, ta=net.bssid, ra=dev.mac, bssid=net.bssid)
        for mask, fc, addrs, direction in ((up, fc_up, a_up, Direction.UPLINK),
                                           (~up, fc_down, a_down, Direction.DOWNLINK)):
            idx = np.flatnonzero(mask)
            sink.emit(ev.ts_us[idx], _Observations(obs.rssi[idx], obs.received[idx]), fc, addrs, direction,
                      ev.nbytes[idx])
        truth.stats[dev.mac] = {
            "generated": len(ev),
            "received": {sid: int(obs.received[:, j].sum()) for j, sid in enumerate(scn.layout.ids)},
            "dropped": {sid: int((~obs.received[:, j]).sum()) for j, sid in enumerate(scn.layout.ids)},
        }

        stay_lo = max(lo, dev.arrive_us) if dev.arrive_us is not None else lo
        stay_hi = min(hi, dev.depart_us) if dev.depart_us is not None else hi
        rng_p = device_rng(scn.seed, dev.mac, Purpose.PROBES)
        for probe in dev.probes:
            ts = _periodic_times(rng_p, probe.interval_s, stay_lo, stay_hi)
            ppos = device_positions(scn, dev, ts)
            ts, ppos = ts[_at_home(ppos)], ppos[_at_home(ppos)]
            pobs = observe(scn, ppos, np.full(len(ts), dev.p0_dbm), rng_p, rng_p)
            addrs = ResolvedAddresses(sa=dev.mac, da=BROADCAST, ta=dev.mac, ra=BROADCAST, bssid=BROADCAST)
            sink.emit(ts, pobs, fc_probe, addrs, Direction.PEER_OR_BROADCAST,
                      np.full(len(ts), 2 + len(probe.ssid) + 10), probe.ssid)

        if dev.ble is not None:
            rng_ble = device_rng(scn.seed, dev.mac, Purpose.BLE)
            ts = _periodic_times(rng_ble, dev.ble.adv_interval_s, stay_lo, stay_hi)
            ts = ts + rng_ble.integers(0, 10_000, size=len(ts))  # advDelay
            ts = ts[ts < stay_hi]
            bpos = device_positions(scn, dev, ts)
            ts, bpos = ts[_at_home(bpos)], bpos[_at_home(bpos)]
            bobs = observe(scn, bpos, np.full(len(ts), dev.p0_dbm), rng_ble, rng_ble)
            payload = _adv_payload(dev.ble)
            ble_mac = dev.ble.mac or dev.mac
            template = BleAdvRecord.from_payload(0, "", ble_mac, None, payload)
            for j, sid in enumerate(scn.layout.ids):
                for i in np.flatnonzero(bobs.received[:, j]).tolist():
                    ble_out.append(BleAdvRecord(int(ts[i]), sid, ble_mac, int(round(bobs.rssi[i, j])),
                                                template.structures, template.decoded))

        # ground truth on the analysis grid
        wpos = device_positions(scn, dev, mids)
        truth.positions[dev.mac] = wpos
        truth.zones[dev.mac] = zone_of(scn, wpos)
        truth.kinds[dev.mac] = dev.truth_kind
        truth.stationary[dev.mac] = dev.position is not None
        truth.labels[dev.mac] = dev.label
        foreign = dev.network != scn.home.name
        truth.states[dev.mac] = None if foreign else _truth_states(dev, mids, lo, hi)
        if truth.states[dev.mac] is not None:
            truth.states[dev.mac][~_at_home(wpos)] = int(State.OFF)
        if foreign:
            truth.kinds[dev.mac] = None
        if dev.is_guest:
            truth.guests.append((dev.mac, max(lo, dev.arrive_us),
                                 dev.depart_us if dev.depart_us is not None and dev.depart_us <= hi else None))

    for act in scn.activities:
        for a, b in spans_mask_intervals([act.span], lo, hi):
            truth.activities.append((act.label, a, b))
    truth.activities.sort(key=lambda x: (x[1], x[0]))

    for sid in sink.frames:
        sink.frames[sid].sort(key=lambda f: f.ts_us)
    ble_out.sort(key=lambda r: (r.timestamp_us, r.sniffer_id))
    return SimulationResult(sink.frames, ble_out, truth)


def _truth_states(dev: DeviceSpec, mids: np.ndarray, lo: int, hi: int) -> Optional[np.ndarray]:
    """Scripted state per window for multimedia devices; periodic devices have none."""
    model = dev.traffic
    if dev.is_guest or not isinstance(model, (DiurnalMultimedia, Streaming)):
        return None
    st = np.full(len(mids), int(State.OFF), dtype=np.int8)
    for a, b in spans_mask_intervals(model.on, lo, hi):
        st[(mids >= a) & (mids < b)] = int(State.IDLE)
    for a, b in spans_mask_intervals(model.active, lo, hi):
        st[(mids >= a) & (mids < b)] = int(State.ACTIVE)
    return st


# --- zone calibration capture -------------------------------------------------------

def simulate_calibration(
    scn: Scenario,
    device: Optional[MacAddress] = None,
    dwell_s: Optional[int] = None,
    rate_hz: float = 1.0,
    jitter_m: float = 0.4,
) -> tuple[list[FrameRecord], list[tuple[str, int, int]]]:
    """Labelled reference capture: the device is held still at every room spot in turn.

    Returns frames and ``(room, start, end)`` intervals. The capture is placed a
    week before the scenario start so it never overlaps the observation period.
    """
    pool = scn.all_devices
    if device is None and "device" in scn.calibration:
        device = MacAddress.parse(scn.calibration["device"])
    if dwell_s is None:
        dwell_s = int(scn.calibration.get("dwell_s", 600))
    dev = next((d for d in pool if d.mac == device), None) if device is not None else \
        next((d for d in pool if d.carried_by is not None), None)
    if dev is None:
        return [], []
    rng = device_rng(scn.seed, dev.mac, Purpose.CALIBRATION)
    t = scn.start_us - 7 * DAY_US
    sink = _FrameSink(scn)
    net = scn.network(dev.network)
    fc_up = make_frame_control(FrameType.DATA, QOS_DATA, FLAGS_UP)
    addrs = ResolvedAddresses(sa=dev.mac, da=net.bssid, ta=dev.mac, ra=net.bssid, bssid=net.bssid)
    intervals = []
    step = int(round(US / rate_hz))
    for room in scn.rooms:
        for spot in room.spots or (_centroid(room.polygon),):
            ts = np.arange(t, t + dwell_s * US, step, dtype=np.int64)
            offs = rng.uniform(-jitter_m, jitter_m, size=(len(ts), 2))
            # hold each offset for a window's worth of frames
            hold = max(1, int(scn.window_s * rate_hz))
            offs = np.repeat(offs[::hold], hold, axis=0)[: len(ts)]
            tx = np.array(spot)[None, :] + offs
            obs = observe(scn, tx, np.full(len(ts), dev.p0_dbm), rng, rng)
            sink.emit(ts, obs, fc_up, addrs, Direction.UPLINK, np.full(len(ts), 200))
            intervals.append((room.name, int(t), int(t + dwell_s * US)))
            t += dwell_s * US
    frames = [f for fs in sink.frames.values() for f in fs]
    frames.sort(key=lambda f: (f.ts_us, f.sniffer_id))
    return frames, intervals
