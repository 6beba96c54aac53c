"""BLE advertisement payload parsing (AD structures) and the scanner log format."""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import IO, Iterable, Iterator, Optional

from homesniff.errors import (
    MalformedAd,
    MalformedManufacturer,
    MalformedUuidList,
    ParseError,
)
from homesniff.mac import MacAddress

AD_UUID16_INCOMPLETE = 0x02
AD_UUID16_COMPLETE = 0x03
AD_UUID32_INCOMPLETE = 0x04
AD_UUID32_COMPLETE = 0x05
AD_UUID128_INCOMPLETE = 0x06
AD_UUID128_COMPLETE = 0x07
AD_SHORT_NAME = 0x08
AD_COMPLETE_NAME = 0x09
AD_MANUFACTURER = 0xFF

_BASE_UUID = uuid.UUID("00000000-0000-1000-8000-00805f9b34fb")


@dataclass(frozen=True)
class AdStructure:
    ad_type: int
    value: bytes

    def encode(self) -> bytes:
        return bytes([len(self.value) + 1, self.ad_type]) + self.value


def parse_ad_structures(payload: bytes) -> list[AdStructure]:
    """Split an advertisement payload into length-type-value structures.

    A zero length byte ends parsing (trailing padding). A length running past
    the buffer raises MalformedAd carrying the structures decoded so far.
    """
    out: list[AdStructure] = []
    off = 0
    n = len(payload)
    while off < n:
        length = payload[off]
        if length == 0:
            break
        if off + 1 + length > n:
            raise MalformedAd(
                f"AD structure at offset {off} declares {length} bytes, {n - off - 1} remain", out
            )
        out.append(AdStructure(payload[off + 1], bytes(payload[off + 2 : off + 1 + length])))
        off += 1 + length
    return out


def serialize_ad_structures(structures: Iterable[AdStructure]) -> bytes:
    return b"".join(s.encode() for s in structures)


def decode_local_name(structures: Iterable[AdStructure]) -> Optional[tuple[str, bool]]:
    short = None
    for s in structures:
        if s.ad_type == AD_COMPLETE_NAME:
            return s.value.decode("utf-8", errors="replace"), True
        if s.ad_type == AD_SHORT_NAME and short is None:
            short = s.value.decode("utf-8", errors="replace")
    return None if short is None else (short, False)


def decode_service_uuids(structures: Iterable[AdStructure]) -> tuple[list[int], list[uuid.UUID]]:
    ids16: list[int] = []
    ids128: list[uuid.UUID] = []
    for s in structures:
        if s.ad_type in (AD_UUID16_INCOMPLETE, AD_UUID16_COMPLETE):
            if len(s.value) % 2:
                raise MalformedUuidList(f"16-bit UUID list of {len(s.value)} bytes")
            ids16.extend(int.from_bytes(s.value[i : i + 2], "little") for i in range(0, len(s.value), 2))
        elif s.ad_type in (AD_UUID32_INCOMPLETE, AD_UUID32_COMPLETE):
            if len(s.value) % 4:
                raise MalformedUuidList(f"32-bit UUID list of {len(s.value)} bytes")
            for i in range(0, len(s.value), 4):
                short = int.from_bytes(s.value[i : i + 4], "little")
                ids128.append(uuid.UUID(int=_BASE_UUID.int | (short << 96)))
        elif s.ad_type in (AD_UUID128_INCOMPLETE, AD_UUID128_COMPLETE):
            if len(s.value) % 16:
                raise MalformedUuidList(f"128-bit UUID list of {len(s.value)} bytes")
            for i in range(0, len(s.value), 16):
                ids128.append(uuid.UUID(bytes=s.value[i : i + 16][::-1]))
    return ids16, ids128


def encode_uuid16_list(ids: Iterable[int], complete: bool = True) -> AdStructure:
    value = b"".join(int(i).to_bytes(2, "little") for i in ids)
    return AdStructure(AD_UUID16_COMPLETE if complete else AD_UUID16_INCOMPLETE, value)


def encode_uuid128_list(ids: Iterable[uuid.UUID], complete: bool = True) -> AdStructure:
    value = b"".join(u.bytes[::-1] for u in ids)
    return AdStructure(AD_UUID128_COMPLETE if complete else AD_UUID128_INCOMPLETE, value)


def decode_manufacturer(structures: Iterable[AdStructure]) -> Optional[tuple[int, bytes]]:
    for s in structures:
        if s.ad_type == AD_MANUFACTURER:
            if len(s.value) < 2:
                raise MalformedManufacturer("manufacturer data shorter than a company id")
            return s.value[0] | (s.value[1] << 8), bytes(s.value[2:])
    return None


@lru_cache(maxsize=1)
def _assigned_numbers() -> dict[int, str]:
    table: dict[int, str] = {}
    text = resources.files("homesniff.data").joinpath("uuid16.tsv").read_text(encoding="utf-8")
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, name = line.split("\t", 1)
        table[int(key, 16)] = name.strip()
    return table


def resolve_service_name(uuid16: int) -> Optional[str]:
    return _assigned_numbers().get(uuid16)


@dataclass(frozen=True)
class DecodedAdv:
    local_name: Optional[str] = None
    name_complete: bool = False
    service_uuids16: tuple[int, ...] = ()
    service_uuids128: tuple[uuid.UUID, ...] = ()
    manufacturer: Optional[tuple[int, bytes]] = None


def decode_views(structures: list[AdStructure]) -> DecodedAdv:
    """Decoded view of an advertisement. Malformed optional fields decode as absent."""
    name = decode_local_name(structures)
    try:
        ids16, ids128 = decode_service_uuids(structures)
    except MalformedUuidList:
        ids16, ids128 = [], []
    try:
        manufacturer = decode_manufacturer(structures)
    except MalformedManufacturer:
        manufacturer = None
    return DecodedAdv(
        local_name=name[0] if name else None,
        name_complete=bool(name and name[1]),
        service_uuids16=tuple(ids16),
        service_uuids128=tuple(ids128),
        manufacturer=manufacturer,
    )


@dataclass(frozen=True)
class BleAdvRecord:
    timestamp_us: int
    sniffer_id: str
    advertiser: MacAddress
    rssi_dbm: Optional[int]
    structures: tuple[AdStructure, ...]
    decoded: DecodedAdv = field(compare=False)

    @classmethod
    def from_payload(cls, timestamp_us: int, sniffer_id: str, advertiser: MacAddress,
                     rssi_dbm: Optional[int], payload: bytes) -> "BleAdvRecord":
        try:
            structures = parse_ad_structures(payload)
        except MalformedAd as exc:
            structures = exc.structures
        return cls(timestamp_us, sniffer_id, advertiser, rssi_dbm, tuple(structures),
                   decode_views(structures))

    def payload(self) -> bytes:
        return serialize_ad_structures(self.structures)


def write_ble_log(records: Iterable[BleAdvRecord], fh: IO[str]) -> int:
    n = 0
    for r in records:
        d = {"ts_us": r.timestamp_us, "sniffer": r.sniffer_id, "addr": str(r.advertiser)}
        if r.rssi_dbm is not None:
            d["rssi_dbm"] = r.rssi_dbm
        d["adv_hex"] = r.payload().hex()
        fh.write(json.dumps(d, separators=(",", ":")) + "\n")
        n += 1
    return n


def iter_ble_log(fh: IO[str]) -> Iterator[BleAdvRecord]:
    for lineno, line in enumerate(fh, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            d = json.loads(line)
            rssi = d.get("rssi_dbm")
            yield BleAdvRecord.from_payload(
                int(d["ts_us"]), str(d["sniffer"]), MacAddress.parse(d["addr"]),
                None if rssi is None else int(rssi), bytes.fromhex(d["adv_hex"]),
            )
        except KeyError as exc:
            raise ParseError(lineno, f"missing mandatory field {exc.args[0]!r}") from None
        except (ValueError, TypeError, AttributeError) as exc:
            raise ParseError(lineno, str(exc)) from None


def read_ble_log(fh: IO[str]) -> list[BleAdvRecord]:
    return list(iter_ble_log(fh))
