"""Radiotap capture header decoding and encoding.

Only TSFT, Flags, Rate, Channel and dBm antenna signal are decoded; every other
known field is skipped by its size and alignment. Alignment is relative to the
start of the header, which is how the radiotap standard defines it.
"""

from __future__ import annotations

import struct
from typing import Optional

from homesniff.errors import TruncatedHeader, UnsupportedVersion
from homesniff.wire.records import RadiotapMeta

TSFT = 0
FLAGS = 1
RATE = 2
CHANNEL = 3
DBM_ANTSIGNAL = 5
ANTENNA = 11
RX_FLAGS = 14
TIMESTAMP = 22
RADIOTAP_NS = 29
VENDOR_NS = 30
EXT = 31

FLAG_FCS_AT_END = 0x10

# bit -> (size, alignment) in the radiotap namespace
FIELD_LAYOUT: dict[int, tuple[int, int]] = {
    0: (8, 8),    # TSFT
    1: (1, 1),    # Flags
    2: (1, 1),    # Rate
    3: (4, 2),    # Channel
    4: (2, 1),    # FHSS
    5: (1, 1),    # dBm antenna signal
    6: (1, 1),    # dBm antenna noise
    7: (2, 2),    # lock quality
    8: (2, 2),    # TX attenuation
    9: (2, 2),    # dB TX attenuation
    10: (1, 1),   # dBm TX power
    11: (1, 1),   # antenna
    12: (1, 1),   # dB antenna signal
    13: (1, 1),   # dB antenna noise
    14: (2, 2),   # RX flags
    15: (2, 2),   # TX flags
    16: (1, 1),   # RTS retries
    17: (1, 1),   # data retries
    18: (8, 4),   # XChannel
    19: (3, 1),   # MCS
    20: (8, 4),   # A-MPDU status
    21: (12, 2),  # VHT
    22: (12, 8),  # timestamp
    23: (12, 2),  # HE
    24: (12, 2),  # HE-MU
    25: (6, 2),   # HE-MU-other-user
    26: (1, 1),   # 0-length PSDU
    27: (4, 2),   # L-SIG
}
VENDOR_NS_LAYOUT = (6, 2)  # OUI(3) sub_namespace(1) skip_length(2)


def _align(offset: int, alignment: int) -> int:
    return (offset + alignment - 1) & ~(alignment - 1)


def parse_radiotap(buf: bytes, timestamp_us: Optional[int] = None) -> tuple[RadiotapMeta, int]:
    """Decode a radiotap header at the start of ``buf``.

    Returns the metadata and the payload offset (the declared header length).
    ``timestamp_us`` overrides the TSFT value; without it the TSFT field (or 0)
    is used. The first dBm antenna-signal field wins when several are present.
    """
    if len(buf) < 8:
        raise TruncatedHeader(f"radiotap header needs 8 bytes, buffer has {len(buf)}")
    version, _pad, length = struct.unpack_from("<BBH", buf, 0)
    if version != 0:
        raise UnsupportedVersion(f"radiotap version {version}")
    if length < 8:
        raise TruncatedHeader(f"declared radiotap length {length} is below the 8-byte minimum")
    if length > len(buf):
        raise TruncatedHeader(f"declared radiotap length {length} exceeds buffer of {len(buf)}")

    # collect the chained presence words
    words: list[int] = []
    off = 4
    while True:
        if off + 4 > length:
            raise TruncatedHeader("presence bitmask chain runs past header length")
        word = struct.unpack_from("<I", buf, off)[0]
        words.append(word)
        off += 4
        if not word & (1 << EXT):
            break

    tsft = rssi = freq = rate = None
    flags = 0
    namespace = "radiotap"
    vendor_skip = 0
    for word in words:
        if namespace == "vendor":
            off += vendor_skip
            vendor_skip = 0
            if off > length:
                raise TruncatedHeader("vendor namespace data runs past header length")
        else:
            for bit in range(29):
                if not word & (1 << bit):
                    continue
                layout = FIELD_LAYOUT.get(bit)
                if layout is None:
                    # unknown size: nothing after it can be located
                    return _meta(timestamp_us, tsft, rssi, freq, rate, flags), length
                size, alignment = layout
                off = _align(off, alignment)
                if off + size > length:
                    raise TruncatedHeader(f"field bit {bit} runs past header length")
                if bit == TSFT:
                    tsft = struct.unpack_from("<Q", buf, off)[0]
                elif bit == FLAGS:
                    flags = buf[off]
                elif bit == RATE:
                    rate = buf[off] * 500
                elif bit == CHANNEL:
                    freq = struct.unpack_from("<H", buf, off)[0]
                elif bit == DBM_ANTSIGNAL and rssi is None:
                    rssi = struct.unpack_from("<b", buf, off)[0]
                off += size
        if word & (1 << VENDOR_NS):
            size, alignment = VENDOR_NS_LAYOUT
            off = _align(off, alignment)
            if off + size > length:
                raise TruncatedHeader("vendor namespace header runs past header length")
            vendor_skip = struct.unpack_from("<H", buf, off + 4)[0]
            off += size
            namespace = "vendor"
        elif word & (1 << RADIOTAP_NS):
            if namespace == "vendor":
                off += vendor_skip
                vendor_skip = 0
            namespace = "radiotap"
    return _meta(timestamp_us, tsft, rssi, freq, rate, flags), length


def _meta(timestamp_us, tsft, rssi, freq, rate, flags) -> RadiotapMeta:
    if rssi is not None and not -120 <= rssi <= 0:
        rssi = None
    if freq is not None and not 2400 <= freq <= 6000:
        freq = None
    ts = timestamp_us if timestamp_us is not None else (tsft or 0)
    return RadiotapMeta(
        timestamp_us=ts,
        rssi_dbm=rssi,
        channel_freq_mhz=freq,
        data_rate_kbps=rate,
        fcs_at_end=bool(flags & FLAG_FCS_AT_END),
    )


def build_radiotap(
    tsft: Optional[int] = None,
    flags: Optional[int] = None,
    rate_kbps: Optional[int] = None,
    freq_mhz: Optional[int] = None,
    channel_flags: int = 0x00A0,
    rssi_dbm: Optional[int] = None,
) -> bytes:
    """Encode a single-namespace radiotap header with the given fields."""
    present = 0
    body = bytearray()
    base = 8

    def put(bit: int, payload: bytes) -> None:
        nonlocal present
        size, alignment = FIELD_LAYOUT[bit]
        pos = base + len(body)
        body.extend(b"\x00" * (_align(pos, alignment) - pos))
        body.extend(payload)
        present |= 1 << bit

    if tsft is not None:
        put(TSFT, struct.pack("<Q", tsft))
    if flags is not None:
        put(FLAGS, bytes([flags]))
    if rate_kbps is not None:
        put(RATE, bytes([rate_kbps // 500]))
    if freq_mhz is not None:
        put(CHANNEL, struct.pack("<HH", freq_mhz, channel_flags))
    if rssi_dbm is not None:
        put(DBM_ANTSIGNAL, struct.pack("<b", rssi_dbm))
    return struct.pack("<BBHI", 0, 0, base + len(body), present) + bytes(body)
