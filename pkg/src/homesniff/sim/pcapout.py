"""Encode frame records back into a radiotap pcap (TSFT, Rate, Channel, Antenna signal)."""

from __future__ import annotations

from typing import BinaryIO, Iterable

from homesniff.wire.dot11 import build_frame
from homesniff.wire.pcap import write_pcap
from homesniff.wire.radiotap import build_radiotap
from homesniff.wire.records import Direction, FrameRecord, FrameType

_FIXED_PARAMS = {4: 0, 5: 12, 8: 12}


def _fc_bytes(rec: FrameRecord) -> bytes:
    fc = rec.fc
    return bytes([(fc.subtype << 4) | (int(fc.ftype) << 2) | fc.version, fc.raw_flags])


def _addresses(rec: FrameRecord):
    a = rec.addrs
    if rec.direction is Direction.UPLINK:
        return a.ra, a.ta, a.da, None
    if rec.direction is Direction.DOWNLINK:
        return a.ra, a.ta, a.sa, None
    if rec.direction is Direction.AP_TO_AP:
        return a.ra, a.ta, a.da, a.sa
    return a.ra, a.ta, a.bssid if a.bssid is not None else a.ra, None


def _mgmt_body(rec: FrameRecord) -> bytes:
    fixed = _FIXED_PARAMS.get(rec.fc.subtype)
    if fixed is None or rec.ssid is None:
        return bytes(rec.body_len_bytes)
    body = bytes(fixed) + bytes([0, len(rec.ssid)]) + rec.ssid
    return body + bytes(max(0, rec.body_len_bytes - len(body)))


def encode_record(rec: FrameRecord) -> bytes:
    """Radiotap header plus raw 802.11 frame that decodes back to ``rec``."""
    rssi = rec.meta.rssi_dbm
    rt = build_radiotap(
        tsft=rec.meta.timestamp_us,
        rate_kbps=rec.meta.data_rate_kbps,
        freq_mhz=rec.meta.channel_freq_mhz,
        rssi_dbm=int(round(rssi)) if rssi is not None else None,
    )
    a1, a2, a3, a4 = _addresses(rec)
    if rec.fc.ftype == FrameType.DATA:
        qos = bool(rec.fc.subtype & 0x08)
        frame = build_frame(_fc_bytes(rec), a1, a2, a3, bytes(rec.body_len_bytes), addr4=a4, qos=qos,
                            ccmp=rec.fc.protected)
    else:
        frame = build_frame(_fc_bytes(rec), a1, a2, a3, _mgmt_body(rec))
    return rt + frame


def write_records_pcap(stream: BinaryIO, records: Iterable[FrameRecord]) -> int:
    return write_pcap(stream, ((r.ts_us, encode_record(r)) for r in records))
