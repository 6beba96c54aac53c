"""802.11 MAC header decoding: frame control, DS direction, address roles, SSIDs."""

from __future__ import annotations

import struct
from typing import Optional

from homesniff.errors import MalformedFrame, MalformedTags, MissingAddress4
from homesniff.mac import MacAddress
from homesniff.wire.radiotap import parse_radiotap
from homesniff.wire.records import (
    Direction,
    FrameControl,
    FrameRecord,
    FrameType,
    ResolvedAddresses,
    make_frame_control,
)

SUBTYPE_PROBE_REQUEST = 4
SUBTYPE_PROBE_RESPONSE = 5
SUBTYPE_BEACON = 8
SSID_SUBTYPES = (SUBTYPE_PROBE_REQUEST, SUBTYPE_PROBE_RESPONSE, SUBTYPE_BEACON)

# fixed parameters preceding the tagged parameters
_FIXED_PARAMS = {SUBTYPE_PROBE_REQUEST: 0, SUBTYPE_PROBE_RESPONSE: 12, SUBTYPE_BEACON: 12}

_DIRECTIONS = (
    Direction.PEER_OR_BROADCAST,
    Direction.UPLINK,
    Direction.DOWNLINK,
    Direction.AP_TO_AP,
)


def parse_frame_control(two: bytes) -> FrameControl:
    if len(two) != 2:
        raise ValueError("frame control is exactly 2 bytes")
    octet0, flags = two[0], two[1]
    return make_frame_control(
        FrameType((octet0 >> 2) & 0x03), (octet0 >> 4) & 0x0F, flags, octet0 & 0x03
    )


def classify_ds(fc: FrameControl) -> Direction:
    return _DIRECTIONS[fc.ds_code()]


def resolve_addresses(
    fc: FrameControl,
    addr1: MacAddress,
    addr2: MacAddress,
    addr3: MacAddress,
    addr4: Optional[MacAddress] = None,
) -> ResolvedAddresses:
    code = fc.ds_code()
    if code == 0:
        return ResolvedAddresses(sa=addr2, da=addr1, ta=addr2, ra=addr1, bssid=addr3)
    if code == 1:
        return ResolvedAddresses(sa=addr2, da=addr3, ta=addr2, ra=addr1, bssid=addr1)
    if code == 2:
        return ResolvedAddresses(sa=addr3, da=addr1, ta=addr2, ra=addr1, bssid=addr2)
    if addr4 is None:
        raise MissingAddress4("AP-to-AP frame without a fourth address")
    return ResolvedAddresses(sa=addr4, da=addr3, ta=addr2, ra=addr1, bssid=None)


def extract_mgmt_ssid(body: bytes, subtype: int) -> Optional[bytes]:
    """Return the SSID element value of a beacon/probe body, or None when absent."""
    if subtype not in _FIXED_PARAMS:
        raise ValueError(f"subtype {subtype} carries no SSID element")
    off = _FIXED_PARAMS[subtype]
    if len(body) < off:
        raise MalformedTags("body shorter than its fixed parameters")
    while off < len(body):
        if off + 2 > len(body):
            raise MalformedTags(f"dangling tag header at offset {off}")
        tag, tlen = body[off], body[off + 1]
        if off + 2 + tlen > len(body):
            raise MalformedTags(f"tag {tag} length {tlen} exceeds remaining body")
        if tag == 0:
            return bytes(body[off + 2 : off + 2 + tlen])
        off += 2 + tlen
    return None


def _mac(buf: bytes, off: int) -> MacAddress:
    return MacAddress(buf[off : off + 6])


def decode_frame(
    frame: bytes, sniffer_id: str, meta
) -> Optional[FrameRecord]:
    """Decode a raw 802.11 frame (no radiotap) into a FrameRecord.

    Control and extension frames, and frames with version != 0, yield None.
    """
    if len(frame) < 2:
        raise MalformedFrame("frame shorter than frame control")
    fc = parse_frame_control(frame[:2])
    if fc.version != 0 or fc.ftype not in (FrameType.MANAGEMENT, FrameType.DATA):
        return None
    ds = fc.ds_code()
    header = 24
    if fc.ftype == FrameType.DATA and ds == 3:
        header = 30
    fcs = 4 if meta.fcs_at_end else 0
    if len(frame) < header + fcs:
        raise MalformedFrame(f"frame of {len(frame)} bytes shorter than its {header}-byte header")
    addr4 = _mac(frame, 24) if header == 30 else None
    if fc.ftype == FrameType.MANAGEMENT and ds == 3:
        # management frames never carry a fourth address; treat as peer traffic
        fc = make_frame_control(fc.ftype, fc.subtype, fc.raw_flags & ~0x03)
    addrs = resolve_addresses(fc, _mac(frame, 4), _mac(frame, 10), _mac(frame, 16), addr4)
    end = len(frame) - fcs
    ssid = None
    if fc.ftype == FrameType.DATA:
        if fc.subtype & 0x08:  # QoS
            header += 2
            if fc.order:
                header += 4
        if fc.protected and end - header >= 4:
            # CCMP/TKIP carry an 8-byte header (ExtIV set), WEP a 4-byte IV
            header += 8 if frame[header + 3] & 0x20 else 4
        body_len = max(0, end - header)
    else:
        body = frame[header:end]
        body_len = len(body)
        if fc.subtype in SSID_SUBTYPES and not fc.protected:
            try:
                ssid = extract_mgmt_ssid(body, fc.subtype)
            except MalformedTags:
                ssid = None
    return FrameRecord(
        sniffer_id=sniffer_id,
        meta=meta,
        fc=fc,
        addrs=addrs,
        direction=classify_ds(fc),
        body_len_bytes=body_len,
        ssid=ssid,
    )


def decode_packet(packet: bytes, timestamp_us: int, sniffer_id: str) -> Optional[FrameRecord]:
    """Decode radiotap + 802.11; the capture timestamp is authoritative over TSFT."""
    meta, offset = parse_radiotap(packet, timestamp_us=timestamp_us)
    return decode_frame(packet[offset:], sniffer_id, meta)


def build_frame(
    fc_bytes: bytes,
    addr1: MacAddress,
    addr2: MacAddress,
    addr3: MacAddress,
    body: bytes = b"",
    addr4: Optional[MacAddress] = None,
    seq: int = 0,
    qos: bool = False,
    ccmp: bool = False,
    fcs: bool = False,
) -> bytes:
    """Assemble a raw 802.11 frame. Used by the pcap writer and fixtures."""
    out = bytearray(fc_bytes)
    out += struct.pack("<H", 0)
    out += addr1.octets + addr2.octets + addr3.octets
    out += struct.pack("<H", (seq & 0x0FFF) << 4)
    if addr4 is not None:
        out += addr4.octets
    if qos:
        out += b"\x00\x00"
    if ccmp:
        pn = seq.to_bytes(6, "little")
        out += bytes([pn[0], pn[1], 0x00, 0x20, pn[2], pn[3], pn[4], pn[5]])
    out += body
    if fcs:
        out += b"\x00\x00\x00\x00"
    return bytes(out)
