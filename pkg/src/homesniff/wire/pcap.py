"""Classic pcap container reading/writing (radiotap link type only)."""

from __future__ import annotations

import struct
from typing import BinaryIO, Iterable, Iterator

from homesniff.errors import FormatError, TruncatedCapture, UnsupportedLinkType

LINKTYPE_IEEE802_11_RADIOTAP = 127

MAGIC_US = 0xA1B2C3D4
MAGIC_NS = 0xA1B23C4D


def read_pcap(stream: BinaryIO) -> Iterator[tuple[int, bytes]]:
    """Yield ``(timestamp_us, packet_bytes)`` for each record in file order.

    Raises TruncatedCapture after yielding every complete record when the file
    ends inside a record.
    """
    header = stream.read(24)
    if len(header) < 24:
        raise FormatError("stream too short for a pcap global header")
    magic_le = struct.unpack("<I", header[:4])[0]
    if magic_le in (MAGIC_US, MAGIC_NS):
        endian = "<"
        magic = magic_le
    else:
        magic = struct.unpack(">I", header[:4])[0]
        if magic not in (MAGIC_US, MAGIC_NS):
            raise FormatError(f"bad pcap magic 0x{magic_le:08x}")
        endian = ">"
    nanos = magic == MAGIC_NS
    linktype = struct.unpack(endian + "I", header[20:24])[0] & 0x0FFFFFFF
    if linktype != LINKTYPE_IEEE802_11_RADIOTAP:
        raise UnsupportedLinkType(f"link type {linktype}, expected 127 (radiotap)")

    rec_fmt = endian + "IIII"
    index = 0
    while True:
        rh = stream.read(16)
        if not rh:
            return
        if len(rh) < 16:
            raise TruncatedCapture(f"record {index}: header cut after {len(rh)} bytes")
        sec, frac, incl_len, _orig_len = struct.unpack(rec_fmt, rh)
        data = stream.read(incl_len)
        if len(data) < incl_len:
            raise TruncatedCapture(f"record {index}: {len(data)} of {incl_len} bytes present")
        usec = frac // 1000 if nanos else frac
        yield sec * 1_000_000 + usec, data
        index += 1


def write_pcap(stream: BinaryIO, packets: Iterable[tuple[int, bytes]], snaplen: int = 65535) -> int:
    stream.write(struct.pack("<IHHiIII", MAGIC_US, 2, 4, 0, 0, snaplen, LINKTYPE_IEEE802_11_RADIOTAP))
    n = 0
    for ts_us, data in packets:
        sec, usec = divmod(ts_us, 1_000_000)
        stream.write(struct.pack("<IIII", sec, usec, len(data), len(data)))
        stream.write(data)
        n += 1
    return n
