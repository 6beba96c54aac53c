"""Decoded frame types and the newline-delimited frame-record interchange format."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from functools import lru_cache
from typing import IO, Iterable, Iterator, Optional

from homesniff.errors import ParseError
from homesniff.mac import MacAddress


class FrameType(enum.IntEnum):
    MANAGEMENT = 0
    CONTROL = 1
    DATA = 2
    EXTENSION = 3

    @property
    def short(self) -> str:
        return _FTYPE_NAMES[self]


_FTYPE_NAMES = {
    FrameType.MANAGEMENT: "mgmt",
    FrameType.CONTROL: "ctrl",
    FrameType.DATA: "data",
    FrameType.EXTENSION: "ext",
}
_FTYPE_BY_NAME = {v: k for k, v in _FTYPE_NAMES.items()}


class Direction(enum.Enum):
    UPLINK = "up"
    DOWNLINK = "down"
    PEER_OR_BROADCAST = "peer"
    AP_TO_AP = "ap2ap"


@dataclass(frozen=True, slots=True)
class RadiotapMeta:
    timestamp_us: int
    rssi_dbm: Optional[int] = None
    channel_freq_mhz: Optional[int] = None
    data_rate_kbps: Optional[int] = None
    fcs_at_end: bool = False


@dataclass(frozen=True, slots=True)
class FrameControl:
    version: int
    ftype: FrameType
    subtype: int
    to_ds: bool
    from_ds: bool
    raw_flags: int

    def ds_code(self) -> int:
        return (int(self.from_ds) << 1) | int(self.to_ds)

    @property
    def protected(self) -> bool:
        return bool(self.raw_flags & 0x40)

    @property
    def order(self) -> bool:
        return bool(self.raw_flags & 0x80)

    def hex(self) -> str:
        """Display form 0xB1B2, type/subtype octet first."""
        octet0 = (self.subtype << 4) | (int(self.ftype) << 2) | self.version
        return f"0x{octet0:02x}{self.raw_flags:02x}"


@lru_cache(maxsize=4096)
def make_frame_control(ftype: FrameType, subtype: int, raw_flags: int, version: int = 0) -> FrameControl:
    return FrameControl(
        version=version,
        ftype=FrameType(ftype),
        subtype=subtype,
        to_ds=bool(raw_flags & 0x01),
        from_ds=bool(raw_flags & 0x02),
        raw_flags=raw_flags,
    )


@dataclass(frozen=True, slots=True)
class ResolvedAddresses:
    sa: MacAddress
    da: MacAddress
    ta: MacAddress
    ra: MacAddress
    bssid: Optional[MacAddress] = None


@dataclass(frozen=True, slots=True)
class FrameRecord:
    sniffer_id: str
    meta: RadiotapMeta
    fc: FrameControl
    addrs: ResolvedAddresses
    direction: Direction
    body_len_bytes: int
    ssid: Optional[bytes] = None

    @property
    def ts_us(self) -> int:
        return self.meta.timestamp_us

    @property
    def rssi_dbm(self) -> Optional[int]:
        return self.meta.rssi_dbm

    def ssid_text(self) -> Optional[str]:
        return None if self.ssid is None else self.ssid.decode("utf-8", errors="replace")


_DIR_BY_CODE = {d.value: d for d in Direction}
_FLAGS_FOR_DIR = {
    Direction.PEER_OR_BROADCAST: 0x00,
    Direction.UPLINK: 0x01,
    Direction.DOWNLINK: 0x02,
    Direction.AP_TO_AP: 0x03,
}

_MANDATORY = ("ts_us", "sniffer", "ftype", "subtype", "dir", "sa", "da", "ta", "ra", "body_len")


def record_to_dict(rec: FrameRecord) -> dict:
    d = {
        "ts_us": rec.meta.timestamp_us,
        "sniffer": rec.sniffer_id,
        "ftype": rec.fc.ftype.short,
        "subtype": rec.fc.subtype,
        "dir": rec.direction.value,
        "sa": str(rec.addrs.sa),
        "da": str(rec.addrs.da),
        "ta": str(rec.addrs.ta),
        "ra": str(rec.addrs.ra),
        "body_len": rec.body_len_bytes,
    }
    if rec.addrs.bssid is not None:
        d["bssid"] = str(rec.addrs.bssid)
    if rec.meta.rssi_dbm is not None:
        d["rssi_dbm"] = rec.meta.rssi_dbm
    if rec.meta.channel_freq_mhz is not None:
        d["freq_mhz"] = rec.meta.channel_freq_mhz
    if rec.meta.data_rate_kbps is not None:
        d["rate_kbps"] = rec.meta.data_rate_kbps
    if rec.ssid is not None:
        d["ssid_hex"] = rec.ssid.hex()
    # extension keys; readers of the base schema ignore them
    if rec.fc.raw_flags & ~0x03:
        d["flags"] = rec.fc.raw_flags
    if rec.meta.fcs_at_end:
        d["fcs"] = 1
    return d


def record_from_dict(d: dict) -> FrameRecord:
    for key in _MANDATORY:
        if key not in d:
            raise KeyError(key)
    direction = _DIR_BY_CODE[d["dir"]]
    flags = int(d.get("flags", _FLAGS_FOR_DIR[direction]))
    # the DS bits are authoritative from "dir"
    flags = (flags & ~0x03) | _FLAGS_FOR_DIR[direction]
    ftype = _FTYPE_BY_NAME[d["ftype"]]
    subtype = int(d["subtype"])
    if not 0 <= subtype <= 15:
        raise ValueError(f"subtype out of range: {subtype}")
    body_len = int(d["body_len"])
    if body_len < 0:
        raise ValueError("negative body_len")
    bssid = d.get("bssid")
    ssid_hex = d.get("ssid_hex")
    return FrameRecord(
        sniffer_id=str(d["sniffer"]),
        meta=RadiotapMeta(
            timestamp_us=int(d["ts_us"]),
            rssi_dbm=_opt_int(d.get("rssi_dbm")),
            channel_freq_mhz=_opt_int(d.get("freq_mhz")),
            data_rate_kbps=_opt_int(d.get("rate_kbps")),
            fcs_at_end=bool(d.get("fcs", 0)),
        ),
        fc=make_frame_control(ftype, subtype, flags),
        addrs=_addresses(d["sa"], d["da"], d["ta"], d["ra"], bssid),
        direction=direction,
        body_len_bytes=body_len,
        ssid=bytes.fromhex(ssid_hex) if ssid_hex is not None else None,
    )


@lru_cache(maxsize=65536)
def _addresses(sa: str, da: str, ta: str, ra: str, bssid: Optional[str]) -> ResolvedAddresses:
    return ResolvedAddresses(
        sa=MacAddress.parse(sa),
        da=MacAddress.parse(da),
        ta=MacAddress.parse(ta),
        ra=MacAddress.parse(ra),
        bssid=MacAddress.parse(bssid) if bssid is not None else None,
    )


def _opt_int(v) -> Optional[int]:
    return None if v is None else int(v)


def format_record(rec: FrameRecord) -> str:
    return json.dumps(record_to_dict(rec), separators=(",", ":"))


def write_records(records: Iterable[FrameRecord], fh: IO[str]) -> int:
    n = 0
    for rec in records:
        fh.write(format_record(rec))
        fh.write("\n")
        n += 1
    return n


def iter_records(fh: IO[str]) -> Iterator[FrameRecord]:
    """Parse an interchange stream. Blank lines are skipped."""
    for lineno, line in enumerate(fh, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("record is not an object")
            yield record_from_dict(obj)
        except KeyError as exc:
            raise ParseError(lineno, f"missing mandatory field {exc.args[0]!r}") from None
        except (ValueError, TypeError) as exc:
            raise ParseError(lineno, str(exc)) from None


def read_records(fh: IO[str]) -> list[FrameRecord]:
    return list(iter_records(fh))
