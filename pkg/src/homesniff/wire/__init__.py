"""Decoding of radiotap/802.11 captures into frame records."""

from __future__ import annotations

import logging
from typing import BinaryIO, Iterator

from homesniff.errors import HomesniffError, TruncatedCapture
from homesniff.wire.channels import channel_freq, freq_channel
from homesniff.wire.dot11 import (
    build_frame,
    classify_ds,
    decode_frame,
    decode_packet,
    extract_mgmt_ssid,
    parse_frame_control,
    resolve_addresses,
)
from homesniff.wire.pcap import read_pcap, write_pcap
from homesniff.wire.radiotap import build_radiotap, parse_radiotap
from homesniff.wire.records import (
    Direction,
    FrameControl,
    FrameRecord,
    FrameType,
    RadiotapMeta,
    ResolvedAddresses,
    iter_records,
    read_records,
    write_records,
)

log = logging.getLogger(__name__)

__all__ = [
    "Direction", "FrameControl", "FrameRecord", "FrameType", "RadiotapMeta",
    "ResolvedAddresses", "build_frame", "build_radiotap", "channel_freq",
    "classify_ds", "decode_capture", "decode_frame", "decode_packet",
    "extract_mgmt_ssid", "freq_channel", "iter_records", "parse_frame_control",
    "parse_radiotap", "read_pcap", "read_records", "resolve_addresses",
    "write_pcap", "write_records",
]


def decode_capture(stream: BinaryIO, sniffer_id: str, strict: bool = False) -> Iterator[FrameRecord]:
    """Decode every management/data frame of a radiotap pcap.

    Undecodable packets are logged and skipped unless ``strict``. A truncated
    tail is logged; the records before it are still produced.
    """
    skipped = 0
    try:
        for ts_us, packet in read_pcap(stream):
            try:
                rec = decode_packet(packet, ts_us, sniffer_id)
            except HomesniffError as exc:
                if strict:
                    raise
                skipped += 1
                log.debug("skipping packet at %d: %s", ts_us, exc)
                continue
            if rec is not None:
                yield rec
    except TruncatedCapture as exc:
        if strict:
            raise
        log.warning("%s: %s", sniffer_id, exc)
    if skipped:
        log.info("%s: skipped %d undecodable packets", sniffer_id, skipped)
