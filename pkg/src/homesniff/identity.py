"""Device inventory: OUI vendors, target-network filtering, profiles, probe SSIDs, SSID geolocation."""

from __future__ import annotations

import base64
import enum
import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from homesniff.ble import BleAdvRecord, resolve_service_name
from homesniff.errors import RetriableLookupError
from homesniff.mac import MacAddress
from homesniff.wire.records import FrameRecord, FrameType

log = logging.getLogger(__name__)

_OUI_LINE = re.compile(r"^\s*([0-9A-Fa-f]{2})-([0-9A-Fa-f]{2})-([0-9A-Fa-f]{2})\s+\(hex\)\s+(.*\S)\s*$")

SUBTYPE_PROBE_REQUEST = 4


class DeviceKind(enum.Enum):
    SMART = "smart"
    MANUAL = "manually-controlled"
    UNKNOWN = "unknown"


@dataclass
class OuiDatabase:
    entries: dict[bytes, str] = field(default_factory=dict)
    skipped_lines: int = 0

    def get(self, oui: bytes) -> Optional[str]:
        return self.entries.get(bytes(oui))

    def __len__(self) -> int:
        return len(self.entries)


def parse_oui_db(text: str) -> OuiDatabase:
    """Parse the IEEE oui.txt layout; only "(hex)" lines carry entries.

    Lines mentioning "(hex)" that fail to parse are counted in ``skipped_lines``;
    every other line (addresses, "(base 16)" duplicates, headers) is ignored.
    """
    db = OuiDatabase()
    for line in text.splitlines():
        m = _OUI_LINE.match(line)
        if m:
            db.entries[bytes.fromhex("".join(m.group(1, 2, 3)))] = m.group(4)
        elif "(hex)" in line:
            db.skipped_lines += 1
    if db.skipped_lines:
        log.info("OUI registry: skipped %d malformed lines", db.skipped_lines)
    return db


def load_oui_db(path) -> OuiDatabase:
    return parse_oui_db(Path(path).read_text(encoding="utf-8", errors="replace"))


def lookup_vendor(db: OuiDatabase, mac: MacAddress) -> tuple[Optional[str], bool]:
    if mac.is_locally_administered():
        return None, True
    return db.get(mac.oui()), False


def _is_station(mac: Optional[MacAddress]) -> bool:
    return mac is not None and not mac.is_multicast()


def _is_probe_request(f: FrameRecord) -> bool:
    return f.fc.ftype == FrameType.MANAGEMENT and f.fc.subtype == SUBTYPE_PROBE_REQUEST


def filter_network(
    frames: Iterable[FrameRecord], target_bssid: MacAddress, include_probes: bool = True
) -> list[FrameRecord]:
    frames = list(frames)
    kept = [f.addrs.bssid == target_bssid for f in frames]
    if include_probes:
        members = set()
        for f, k in zip(frames, kept):
            if k:
                members.add(f.addrs.sa)
                members.add(f.addrs.ta)
        for i, f in enumerate(frames):
            if not kept[i] and _is_probe_request(f) and f.addrs.sa in members:
                kept[i] = True
    return [f for f, k in zip(frames, kept) if k]


@dataclass
class DeviceProfile:
    mac: MacAddress
    vendor: Optional[str]
    randomized_mac: bool
    first_seen: int
    last_seen: int
    ble_name: Optional[str] = None
    ble_name_complete: bool = False
    ble_services: list[str] = field(default_factory=list)
    ble_manufacturer: Optional[int] = None
    kind: DeviceKind = DeviceKind.UNKNOWN
    labels: list[str] = field(default_factory=list)
    frame_count: int = 0

    @property
    def is_router(self) -> bool:
        return "router" in self.labels


_HEX_TAIL = re.compile(r"([0-9A-Fa-f]{4,12})$")


def _service_label(uuid16: int) -> str:
    return resolve_service_name(uuid16) or f"0x{uuid16:04x}"


def build_profiles(
    frames: Iterable[FrameRecord],
    ble_records: Iterable[BleAdvRecord],
    oui_db: OuiDatabase,
    fuzzy_ble_join: bool = False,
) -> dict[MacAddress, DeviceProfile]:
    """One profile per unicast station seen as SA or TA.

    BLE adverts attach by exact MAC. With ``fuzzy_ble_join`` an advert whose
    name ends in a hex token also attaches to the single station whose MAC
    hex contains that token; ambiguous tokens attach nowhere.
    """
    profiles: dict[MacAddress, DeviceProfile] = {}
    bssids: set[MacAddress] = set()
    for f in frames:
        a = f.addrs
        ts = f.meta.timestamp_us
        if a.bssid is not None and f.fc.ftype == FrameType.DATA:
            bssids.add(a.bssid)
        macs = (a.sa,) if a.ta is None or a.ta == a.sa else (a.sa, a.ta)
        for mac in macs:
            p = profiles.get(mac)
            if p is not None:
                if ts < p.first_seen:
                    p.first_seen = ts
                if ts > p.last_seen:
                    p.last_seen = ts
                p.frame_count += 1
            elif _is_station(mac):
                vendor, randomized = lookup_vendor(oui_db, mac)
                profiles[mac] = DeviceProfile(mac, vendor, randomized, ts, ts, frame_count=1)
    for mac in bssids:
        if mac in profiles:
            profiles[mac].labels.append("router")

    ble_by_mac: dict[MacAddress, list[BleAdvRecord]] = {}
    for r in ble_records:
        ble_by_mac.setdefault(r.advertiser, []).append(r)
    for adv_mac in sorted(ble_by_mac):
        records = sorted(ble_by_mac[adv_mac], key=lambda r: r.timestamp_us)
        target = profiles.get(adv_mac)
        if target is None and fuzzy_ble_join:
            target = _fuzzy_target(profiles, records)
        if target is None:
            continue
        _enrich(target, records, exact=target.mac == adv_mac)
    return profiles


def _fuzzy_target(profiles: Mapping[MacAddress, DeviceProfile], records: Sequence[BleAdvRecord]):
    name = next((r.decoded.local_name for r in records if r.decoded.local_name), None)
    if not name:
        return None
    m = _HEX_TAIL.search(name)
    if not m:
        return None
    token = m.group(1).lower()
    hits = [p for mac, p in profiles.items() if token in mac.octets.hex()]
    return hits[0] if len(hits) == 1 else None


def _enrich(p: DeviceProfile, records: Sequence[BleAdvRecord], exact: bool) -> None:
    for r in records:
        d = r.decoded
        if d.local_name and (p.ble_name is None or (d.name_complete and not p.ble_name_complete)):
            p.ble_name = d.local_name
            p.ble_name_complete = d.name_complete
        for u in d.service_uuids16:
            label = _service_label(u)
            if label not in p.ble_services:
                p.ble_services.append(label)
        if d.manufacturer is not None and p.ble_manufacturer is None:
            p.ble_manufacturer = d.manufacturer[0]
    if not exact and "ble-fuzzy-join" not in p.labels:
        p.labels.append("ble-fuzzy-join")


@dataclass
class ProbeEntry:
    ssid: bytes
    count: int
    first_seen: int
    last_seen: int

    def text(self) -> str:
        return self.ssid.decode("utf-8", errors="replace")


ProbeInventory = dict  # MacAddress -> dict[bytes, ProbeEntry]


def probe_inventory(frames: Iterable[FrameRecord]) -> dict[MacAddress, dict[bytes, ProbeEntry]]:
    inv: dict[MacAddress, dict[bytes, ProbeEntry]] = {}
    for f in frames:
        if not _is_probe_request(f) or not f.ssid:
            continue
        src = f.addrs.sa
        if src.is_broadcast():
            continue
        entries = inv.setdefault(src, {})
        e = entries.get(f.ssid)
        if e is None:
            entries[f.ssid] = ProbeEntry(f.ssid, 1, f.ts_us, f.ts_us)
        else:
            e.count += 1
            e.first_seen = min(e.first_seen, f.ts_us)
            e.last_seen = max(e.last_seen, f.ts_us)
    return inv


@dataclass(frozen=True)
class GeoHit:
    latitude: float
    longitude: float
    last_seen: datetime


class GeolocationClient:
    """SSID to coordinates. Fixture mode never touches the network.

    Live mode reads credentials from ``WIGLE_API_NAME``/``WIGLE_API_TOKEN``
    and spaces requests at least ``min_interval_s`` apart.
    """

    DEFAULT_ENDPOINT = "https://api.wigle.net/api/v2/network/search"

    def __init__(self, fixture_path=None, endpoint: Optional[str] = None,
                 api_name: Optional[str] = None, api_token: Optional[str] = None,
                 min_interval_s: float = 1.0, timeout_s: float = 10.0):
        self.fixture_path = fixture_path
        self.endpoint = endpoint or self.DEFAULT_ENDPOINT
        self.api_name = api_name if api_name is not None else os.environ.get("WIGLE_API_NAME")
        self.api_token = api_token if api_token is not None else os.environ.get("WIGLE_API_TOKEN")
        self.min_interval_s = min_interval_s
        self.timeout_s = timeout_s
        self._fixture: Optional[dict[str, list[GeoHit]]] = None
        self._lock = threading.Lock()
        self._last_request = 0.0

    @property
    def live(self) -> bool:
        return self.fixture_path is None

    def _load_fixture(self) -> dict[str, list[GeoHit]]:
        if self._fixture is None:
            table: dict[str, list[GeoHit]] = {}
            for line in Path(self.fixture_path).read_text(encoding="utf-8").splitlines():
                if not line.strip() or line.startswith("#"):
                    continue
                ssid, lat, lon, seen = line.split("\t")
                table.setdefault(ssid, []).append(
                    GeoHit(float(lat), float(lon), datetime.fromisoformat(seen.strip()))
                )
            self._fixture = table
        return self._fixture

    def _query(self, ssid: str) -> list[GeoHit]:
        if not self.api_name or not self.api_token:
            raise RetriableLookupError("live geolocation needs API credentials")
        with self._lock:
            wait = self._last_request + self.min_interval_s - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            self._last_request = time.monotonic()
            url = f"{self.endpoint}?{urllib.parse.urlencode({'ssid': ssid})}"
            req = urllib.request.Request(url)
            cred = base64.b64encode(f"{self.api_name}:{self.api_token}".encode()).decode()
            req.add_header("Authorization", f"Basic {cred}")
            try:
                with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
            except (urllib.error.URLError, OSError, ValueError) as exc:
                raise RetriableLookupError(f"lookup of {ssid!r} failed: {exc}") from exc
        if not payload.get("success", True):
            raise RetriableLookupError(str(payload.get("message", "lookup rejected")))
        hits = []
        for r in payload.get("results", []):
            try:
                seen = datetime.fromisoformat(str(r.get("lastupdt", "")).replace("Z", ""))
                hits.append(GeoHit(float(r["trilat"]), float(r["trilong"]), seen))
            except (KeyError, ValueError):
                continue
        return hits


def geolocate_ssid(client: GeolocationClient, ssid: str) -> list[GeoHit]:
    hits = client._query(ssid) if client.live else list(client._load_fixture().get(ssid, []))
    return sorted(hits, key=lambda h: h.last_seen, reverse=True)
