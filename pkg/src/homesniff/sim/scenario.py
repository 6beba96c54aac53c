"""Scenario description: floor plan, sniffers, devices, inhabitants, guests. Loaded from JSON."""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from datetime import datetime
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

from homesniff.errors import ScenarioError
from homesniff.localization import SnifferLayout
from homesniff.mac import MacAddress
from homesniff.timeutil import from_datetime, parse_hhmm

_DAYS = {"mon": 0, "tue": 1, "wed": 2, "thu": 3, "fri": 4, "sat": 5, "sun": 6}
_SPAN_RE = re.compile(r"^(\d{1,2}:\d{2})-(\d{1,2}:\d{2})(?:@([a-z,\-]+))?$")


@dataclass(frozen=True)
class DailySpan:
    """Time-of-day span repeated on selected weekdays; end may wrap past midnight."""
    start_s: int
    end_s: int
    weekdays: frozenset[int] = frozenset(range(7))


@dataclass(frozen=True)
class PeriodicSensor:
    interval_s: float
    pkts: int
    bytes: int
    uplink: bool = True
    down_pkts: int = 0


@dataclass(frozen=True)
class DiurnalMultimedia:
    on: tuple[DailySpan, ...]
    active: tuple[DailySpan, ...]
    burst_rate: float
    idle_rate: float
    down_fraction: float = 0.5
    up_bytes: int = 200
    down_bytes: int = 900


@dataclass(frozen=True)
class Streaming:
    on: tuple[DailySpan, ...]
    active: tuple[DailySpan, ...]
    rate: float
    idle_rate: float
    down_fraction: float = 0.9
    up_bytes: int = 120
    down_bytes: int = 1400


TrafficModel = Union[PeriodicSensor, DiurnalMultimedia, Streaming, None]


@dataclass(frozen=True)
class BleSpec:
    local_name: Optional[str]
    services: tuple[int, ...]
    manufacturer: Optional[bytes]
    adv_interval_s: float
    mac: Optional[MacAddress] = None
    complete_name: bool = True


@dataclass(frozen=True)
class ProbeSpec:
    ssid: bytes
    interval_s: float


@dataclass(frozen=True)
class DeviceSpec:
    mac: MacAddress
    label: str
    position: Optional[tuple[float, float]]
    carried_by: Optional[str]
    traffic: TrafficModel
    p0_dbm: float
    ble: Optional[BleSpec] = None
    probes: tuple[ProbeSpec, ...] = ()
    truth_kind: Optional[str] = None
    vendor: Optional[str] = None
    arrive_us: Optional[int] = None
    depart_us: Optional[int] = None
    network: str = "home"

    @property
    def is_guest(self) -> bool:
        return self.arrive_us is not None


@dataclass(frozen=True)
class Wall:
    a: tuple[float, float]
    b: tuple[float, float]
    attenuation_db: float


@dataclass(frozen=True)
class Room:
    name: str
    zone: str
    polygon: tuple[tuple[float, float], ...]
    spots: tuple[tuple[float, float], ...]


# waypoint room meaning "outside the home": carried devices stay silent
AWAY = "away"


@dataclass(frozen=True)
class Waypoint:
    t_s: int  # seconds of day
    room: str
    spot: int = 0


@dataclass(frozen=True)
class Inhabitant:
    name: str
    waypoints: tuple[Waypoint, ...]
    travel_s: int = 60


@dataclass(frozen=True)
class ActivitySpan:
    label: str
    span: DailySpan


@dataclass(frozen=True)
class ChannelParams:
    n: float
    sigma_db: float
    freq_mhz: int
    drop_start_dbm: float = -70.0
    drop_full_dbm: float = -95.0
    drop_max: float = 0.9
    drops: bool = True
    rssi_resolution_db: float = 1.0


@dataclass(frozen=True)
class Network:
    name: str
    bssid: MacAddress
    ssid: bytes
    position: tuple[float, float]
    p0_dbm: float


@dataclass
class Scenario:
    name: str
    seed: int
    start_us: int
    duration_s: int
    window_s: int
    layout: SnifferLayout
    channel: ChannelParams
    networks: tuple[Network, ...]
    rooms: tuple[Room, ...]
    walls: tuple[Wall, ...]
    devices: tuple[DeviceSpec, ...]
    inhabitants: tuple[Inhabitant, ...]
    activities: tuple[ActivitySpan, ...]
    visitors: tuple[DeviceSpec, ...] = ()
    baseline_s: int = 12 * 3600
    calibration: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def end_us(self) -> int:
        return self.start_us + self.duration_s * 1_000_000

    @property
    def all_devices(self) -> tuple[DeviceSpec, ...]:
        """Household devices followed by guests and foreign-network stations."""
        return self.devices + self.visitors

    @property
    def home(self) -> Network:
        return self.networks[0]

    def network(self, name: str) -> Network:
        for n in self.networks:
            if n.name == name:
                return n
        raise KeyError(name)

    def room(self, name: str) -> Room:
        for r in self.rooms:
            if r.name == name:
                return r
        raise KeyError(name)


# --- validation helpers ---------------------------------------------------------

class _Ctx:
    def __init__(self, path: str):
        self.path = path

    def err(self, key, msg) -> ScenarioError:
        return ScenarioError(self._join(key), msg)

    def _join(self, key) -> str:
        if key is None:
            return self.path
        if isinstance(key, int):
            return f"{self.path}[{key}]"
        return f"{self.path}.{key}" if self.path else str(key)

    def sub(self, key) -> "_Ctx":
        return _Ctx(self._join(key))


def _get(obj: dict, key: str, ctx: _Ctx, kind=None, default: Any = ...):
    if not isinstance(obj, dict):
        raise ctx.err(None, "expected an object")
    if key not in obj:
        if default is ...:
            raise ctx.err(key, "missing")
        return default
    v = obj[key]
    numeric = kind in ((int, float), int, float)
    if kind is not None and (not isinstance(v, kind) or (numeric and isinstance(v, bool))):
        raise ctx.err(key, f"expected {getattr(kind, '__name__', kind)}")
    return v


def _num(obj, key, ctx, default: Any = ..., positive=False, nonneg=False) -> float:
    v = _get(obj, key, ctx, (int, float), default)
    if v is None:
        return v
    if positive and not v > 0:
        raise ctx.err(key, f"must be positive, got {v}")
    if nonneg and v < 0:
        raise ctx.err(key, f"must be non-negative, got {v}")
    return float(v)


def _point(v, ctx: _Ctx) -> tuple[float, float]:
    if not (isinstance(v, list) and len(v) == 2 and all(isinstance(c, (int, float)) for c in v)):
        raise ctx.err(None, "expected [x, y]")
    return float(v[0]), float(v[1])


def _mac(v, ctx: _Ctx) -> MacAddress:
    try:
        return MacAddress.parse(v)
    except (ValueError, AttributeError):
        raise ctx.err(None, f"not a MAC address: {v!r}") from None


def _span(text, ctx: _Ctx) -> DailySpan:
    if not isinstance(text, str):
        raise ctx.err(None, "expected 'HH:MM-HH:MM[@days]'")
    m = _SPAN_RE.match(text.strip().lower())
    if not m:
        raise ctx.err(None, f"bad span {text!r}")
    try:
        a, b = parse_hhmm(m.group(1)), parse_hhmm(m.group(2))
    except ValueError as exc:
        raise ctx.err(None, str(exc)) from None
    days = set(range(7))
    if m.group(3):
        days = set()
        for part in m.group(3).split(","):
            if "-" in part:
                lo, hi = part.split("-")
                if lo not in _DAYS or hi not in _DAYS:
                    raise ctx.err(None, f"bad day range {part!r}")
                days.update(range(_DAYS[lo], _DAYS[hi] + 1))
            elif part in _DAYS:
                days.add(_DAYS[part])
            else:
                raise ctx.err(None, f"bad day {part!r}")
    if a == b:
        raise ctx.err(None, "empty span")
    return DailySpan(a, b, frozenset(days))


def _spans(v, ctx: _Ctx) -> tuple[DailySpan, ...]:
    if not isinstance(v, list):
        raise ctx.err(None, "expected a list of spans")
    return tuple(_span(s, ctx.sub(i)) for i, s in enumerate(v))


def _traffic(obj, ctx: _Ctx) -> TrafficModel:
    if obj is None:
        return None
    model = _get(obj, "model", ctx, str)
    if model == "none":
        return None
    if model == "periodic":
        pk = int(_num(obj, "pkts", ctx, positive=True))
        return PeriodicSensor(
            _num(obj, "interval_s", ctx, positive=True), pk,
            int(_num(obj, "bytes", ctx, positive=True)),
            bool(_get(obj, "uplink", ctx, bool, True)),
            int(_num(obj, "down_pkts", ctx, 0, nonneg=True)),
        )
    if model in ("diurnal", "streaming"):
        on = _spans(_get(obj, "on", ctx), ctx.sub("on"))
        active = _spans(_get(obj, "active", ctx, default=[]), ctx.sub("active"))
        down = _num(obj, "down_fraction", ctx, 0.5 if model == "diurnal" else 0.9)
        if not 0 <= down <= 1:
            raise ctx.err("down_fraction", "must be within [0, 1]")
        idle = _num(obj, "idle_rate", ctx, positive=True)
        if model == "diurnal":
            return DiurnalMultimedia(on, active, _num(obj, "burst_rate", ctx, positive=True), idle, down,
                                     int(_num(obj, "up_bytes", ctx, 200, positive=True)),
                                     int(_num(obj, "down_bytes", ctx, 900, positive=True)))
        return Streaming(on, active, _num(obj, "rate", ctx, positive=True), idle, down,
                         int(_num(obj, "up_bytes", ctx, 120, positive=True)),
                         int(_num(obj, "down_bytes", ctx, 1400, positive=True)))
    raise ctx.sub("model").err(None, f"unknown traffic model {model!r}")


def _ble(obj, ctx: _Ctx) -> Optional[BleSpec]:
    if obj is None:
        return None
    services = []
    for i, s in enumerate(_get(obj, "services", ctx, list, [])):
        try:
            services.append(int(s, 16) if isinstance(s, str) else int(s))
        except ValueError:
            raise ctx.sub("services").err(i, f"bad UUID {s!r}") from None
        if not 0 <= services[-1] <= 0xFFFF:
            raise ctx.sub("services").err(i, "16-bit UUID out of range")
    manu = _get(obj, "manufacturer_hex", ctx, str, None)
    try:
        manu_b = bytes.fromhex(manu) if manu is not None else None
    except ValueError:
        raise ctx.err("manufacturer_hex", "not hex") from None
    mac = _get(obj, "mac", ctx, str, None)
    return BleSpec(
        _get(obj, "local_name", ctx, str, None), tuple(services), manu_b,
        _num(obj, "adv_interval_s", ctx, 30.0, positive=True),
        _mac(mac, ctx.sub("mac")) if mac is not None else None,
        bool(_get(obj, "complete_name", ctx, bool, True)),
    )


def _timestamp(v, ctx: _Ctx, start_us: int) -> int:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return start_us + int(round(v * 1_000_000))
    try:
        return from_datetime(datetime.fromisoformat(v))
    except (TypeError, ValueError):
        raise ctx.err(None, f"bad timestamp {v!r}") from None


def _polygon_area(poly) -> float:
    s = 0.0
    for (x1, y1), (x2, y2) in zip(poly, poly[1:] + poly[:1]):
        s += x1 * y2 - x2 * y1
    return abs(s) / 2


def _device(d, c: _Ctx, start_us: int, inh_names, net_names, seen_macs: set) -> DeviceSpec:
    if not isinstance(d, dict):
        raise c.err(None, "expected an object")
    mac = _mac(_get(d, "mac", c, str), c.sub("mac"))
    if mac in seen_macs:
        raise c.err("mac", "duplicate device MAC")
    seen_macs.add(mac)
    pos = _get(d, "position", c, default=None)
    carried = _get(d, "carried_by", c, str, None)
    if (pos is None) == (carried is None):
        raise c.err(None, "exactly one of position / carried_by is required")
    if carried is not None and carried not in inh_names:
        raise c.err("carried_by", f"unknown inhabitant {carried!r}")
    network = _get(d, "network", c, str, "home")
    if network not in net_names:
        raise c.err("network", f"unknown network {network!r}")
    probes = []
    for j, p in enumerate(_get(d, "probes", c, list, [])):
        pc = c.sub("probes").sub(j)
        probes.append(ProbeSpec(_get(p, "ssid", pc, str).encode("utf-8"),
                                _num(p, "interval_s", pc, positive=True)))
    arrive = _get(d, "arrive", c, default=None)
    depart = _get(d, "depart", c, default=None)
    arrive_us = _timestamp(arrive, c.sub("arrive"), start_us) if arrive is not None else None
    depart_us = _timestamp(depart, c.sub("depart"), start_us) if depart is not None else None
    if depart_us is not None and (arrive_us is None or depart_us <= arrive_us):
        raise c.err("depart", "departure needs an earlier arrival")
    return DeviceSpec(
        mac=mac, label=_get(d, "label", c, str, str(mac)),
        position=_point(pos, c.sub("position")) if pos is not None else None,
        carried_by=carried,
        traffic=_traffic(_get(d, "traffic", c, dict, None), c.sub("traffic")),
        p0_dbm=_num(d, "p0_dbm", c, -35.0),
        ble=_ble(_get(d, "ble", c, dict, None), c.sub("ble")),
        probes=tuple(probes),
        truth_kind=_get(d, "truth_kind", c, str, None),
        vendor=_get(d, "vendor", c, str, None),
        arrive_us=arrive_us, depart_us=depart_us, network=network,
    )


def parse_scenario(data: dict, source: str = "<scenario>") -> Scenario:
    root = _Ctx("")
    if not isinstance(data, dict):
        raise ScenarioError(source, "scenario must be an object")
    try:
        seed = int(_get(data, "seed", root, int))
        if not 0 <= seed < 2 ** 64:
            raise root.err("seed", "must fit in 64 bits")
        start_us = _timestamp(_get(data, "start", root, default="2024-01-01T00:00:00"), root.sub("start"), 0)
        duration = _num(data, "duration_s", root, positive=True)
        window_s = int(_num(data, "window_s", root, 10, positive=True))

        cctx = root.sub("channel")
        ch = _get(data, "channel", root, dict)
        channel = ChannelParams(
            n=_num(ch, "n", cctx, positive=True),
            sigma_db=_num(ch, "sigma_db", cctx, nonneg=True),
            freq_mhz=int(_num(ch, "freq_mhz", cctx, 2447, positive=True)),
            drop_start_dbm=_num(ch, "drop_start_dbm", cctx, -70.0),
            drop_full_dbm=_num(ch, "drop_full_dbm", cctx, -95.0),
            drop_max=_num(ch, "drop_max", cctx, 0.9, nonneg=True),
            drops=bool(_get(ch, "drops", cctx, bool, True)),
            rssi_resolution_db=_num(ch, "rssi_resolution_db", cctx, 1.0, nonneg=True),
        )
        if channel.drop_full_dbm >= channel.drop_start_dbm:
            raise cctx.err("drop_full_dbm", "must be below drop_start_dbm")
        if channel.drop_max > 1:
            raise cctx.err("drop_max", "must be <= 1")

        sn = _get(data, "sniffers", root, list)
        sctx = root.sub("sniffers")
        sniffers = []
        for i, s in enumerate(sn):
            c = sctx.sub(i)
            sniffers.append((_get(s, "id", c, str), _num(s, "x", c), _num(s, "y", c)))
        try:
            layout = SnifferLayout.of(sniffers)
        except Exception as exc:
            raise sctx.err(None, str(exc)) from None

        networks = []
        nctx = root.sub("networks")
        for i, n in enumerate(_get(data, "networks", root, list)):
            c = nctx.sub(i)
            networks.append(Network(
                _get(n, "name", c, str), _mac(_get(n, "bssid", c, str), c.sub("bssid")),
                _get(n, "ssid", c, str).encode("utf-8"), _point(_get(n, "position", c), c.sub("position")),
                _num(n, "p0_dbm", c, -35.0),
            ))
        if not networks:
            raise nctx.err(None, "at least the home network is required")
        net_names = {n.name for n in networks}
        if len(net_names) != len(networks):
            raise nctx.err(None, "duplicate network name")

        rooms = []
        rctx = root.sub("rooms")
        for i, r in enumerate(_get(data, "rooms", root, list, [])):
            c = rctx.sub(i)
            poly = tuple(_point(p, c.sub("polygon").sub(j)) for j, p in enumerate(_get(r, "polygon", c, list)))
            if len(poly) < 3 or _polygon_area(list(poly)) <= 0:
                raise c.err("polygon", "needs at least 3 non-collinear vertices")
            spots = tuple(_point(p, c.sub("spots").sub(j)) for j, p in enumerate(_get(r, "spots", c, list, [])))
            name = _get(r, "name", c, str)
            rooms.append(Room(name, _get(r, "zone", c, str, name), poly, spots))
        room_names = {r.name for r in rooms}
        if len(room_names) != len(rooms):
            raise rctx.err(None, "duplicate room name")

        walls = []
        wctx = root.sub("walls")
        for i, w in enumerate(_get(data, "walls", root, list, [])):
            c = wctx.sub(i)
            walls.append(Wall(_point(_get(w, "from", c), c.sub("from")), _point(_get(w, "to", c), c.sub("to")),
                              _num(w, "attenuation_db", c, nonneg=True)))

        inhabitants = []
        ictx = root.sub("inhabitants")
        for i, h in enumerate(_get(data, "inhabitants", root, list, [])):
            c = ictx.sub(i)
            wps = []
            for j, wp in enumerate(_get(h, "waypoints", c, list)):
                wc = c.sub("waypoints").sub(j)
                try:
                    t = parse_hhmm(_get(wp, "t", wc, str))
                except ValueError as exc:
                    raise wc.err("t", str(exc)) from None
                room = _get(wp, "room", wc, str)
                if room not in room_names and room != AWAY:
                    raise wc.err("room", f"unknown room {room!r}")
                spot = int(_num(wp, "spot", wc, 0, nonneg=True))
                if room == AWAY:
                    if spot:
                        raise wc.err("spot", "away has no spots")
                elif rooms and spot >= max(1, len(next(r for r in rooms if r.name == room).spots)):
                    raise wc.err("spot", "no such spot in room")
                wps.append(Waypoint(t, room, spot))
            if not wps:
                raise c.err("waypoints", "at least one waypoint required")
            if any(b.t_s <= a.t_s for a, b in zip(wps, wps[1:])):
                raise c.err("waypoints", "times must increase")
            inhabitants.append(Inhabitant(_get(h, "name", c, str), tuple(wps),
                                          int(_num(h, "travel_s", c, 60, positive=True))))
        inh_names = {h.name for h in inhabitants}

        seen_macs: set = set()
        devices = [_device(d, root.sub("devices").sub(i), start_us, inh_names, net_names, seen_macs)
                   for i, d in enumerate(_get(data, "devices", root, list, []))]
        visitors = [_device(d, root.sub("visitors").sub(i), start_us, inh_names, net_names, seen_macs)
                    for i, d in enumerate(_get(data, "visitors", root, list, []))]

        activities = []
        actx = root.sub("activities")
        for i, a in enumerate(_get(data, "activities", root, list, [])):
            c = actx.sub(i)
            activities.append(ActivitySpan(_get(a, "label", c, str), _span(_get(a, "span", c, str), c.sub("span"))))

        return Scenario(
            name=_get(data, "name", root, str, "scenario"), seed=seed, start_us=start_us,
            duration_s=int(duration), window_s=window_s, layout=layout, channel=channel,
            networks=tuple(networks), rooms=tuple(rooms), walls=tuple(walls), devices=tuple(devices),
            visitors=tuple(visitors),
            inhabitants=tuple(inhabitants), activities=tuple(activities),
            baseline_s=int(_num(data, "baseline_s", root, 12 * 3600, positive=True)),
            calibration=dict(_get(data, "calibration", root, dict, {})),
            raw=copy.deepcopy(data),
        )
    except ScenarioError as exc:
        raise ScenarioError(f"{source}:{exc.path}" if exc.path else source, exc.message) from None


BUNDLED = ("paper_flat", "four_zone", "weekday_routine")


def bundled_scenario_data(name: str) -> dict:
    if name not in BUNDLED:
        raise ScenarioError(name, f"no bundled scenario named {name!r}")
    text = resources.files("homesniff.data").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


def load_scenario(source: Union[str, Path, dict]) -> Scenario:
    """Load a bundled scenario by name, a JSON file, or an already-parsed dict."""
    if isinstance(source, dict):
        return parse_scenario(source)
    if isinstance(source, str) and source in BUNDLED and not Path(source).exists():
        return parse_scenario(bundled_scenario_data(source), source)
    path = Path(source)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ScenarioError(str(path), "file not found") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(str(path), f"invalid JSON: {exc}") from None
    return parse_scenario(data, str(path))
