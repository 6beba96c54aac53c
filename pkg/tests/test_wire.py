import io
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homesniff.errors import (
    FormatError,
    InvalidChannel,
    MalformedFrame,
    MalformedTags,
    MissingAddress4,
    ParseError,
    TruncatedCapture,
    TruncatedHeader,
    UnsupportedLinkType,
    UnsupportedVersion,
)
from homesniff.mac import BROADCAST, MacAddress
from homesniff.wire import (
    Direction,
    FrameType,
    build_frame,
    build_radiotap,
    channel_freq,
    classify_ds,
    decode_capture,
    decode_packet,
    extract_mgmt_ssid,
    freq_channel,
    parse_frame_control,
    parse_radiotap,
    read_pcap,
    read_records,
    resolve_addresses,
    write_pcap,
    write_records,
)
from homesniff.wire.records import RadiotapMeta, format_record, make_frame_control

from strategies import frame_records

STA = MacAddress.parse("02:00:00:39:b1:b0")
AP = MacAddress.parse("02:00:00:32:52:91")
SRC = MacAddress.parse("02:00:00:00:3a:fe")


def iwlwifi_header() -> bytes:
    """A 56-byte, three-namespace header as written by common Linux drivers."""
    present0 = (1 << 0) | (1 << 1) | (1 << 2) | (1 << 3) | (1 << 5) | (1 << 14) | (1 << 22)
    present0 |= (1 << 29) | (1 << 31)
    present1 = (1 << 5) | (1 << 11) | (1 << 29) | (1 << 31)
    present2 = (1 << 5) | (1 << 11)
    body = bytearray()
    body += struct.pack("<III", present0, present1, present2)   # offsets 4..16
    body += struct.pack("<Q", 9048706358)                       # 16 TSFT
    body += bytes([0x10])                                       # 24 flags: FCS at end
    body += bytes([12])                                         # 25 rate, 500 kb/s units
    body += struct.pack("<HH", 2437, 0x00C0)                    # 26 channel
    body += struct.pack("<b", -84)                              # 30 antenna signal
    body += b"\x00"                                             # pad to 32
    body += struct.pack("<H", 0)                                # 32 RX flags
    body += b"\x00" * 6                                         # pad to 40
    body += struct.pack("<QHBB", 9048706000, 0, 0x11, 0x00)     # 40 timestamp, 12 bytes
    body += struct.pack("<bB", -87, 0)                          # 52 signal, antenna 0
    body += struct.pack("<bB", -84, 1)                          # 54 signal, antenna 1
    return struct.pack("<BBH", 0, 0, 4 + len(body)) + bytes(body)


# --- DS flags ----------------------------------------------------------------

DS_TABLE = {
    (0, 0): Direction.PEER_OR_BROADCAST,
    (0, 1): Direction.UPLINK,
    (1, 0): Direction.DOWNLINK,
    (1, 1): Direction.AP_TO_AP,
}


@pytest.mark.parametrize("from_ds,to_ds", sorted(DS_TABLE))
def test_ds_classification_table(from_ds, to_ds):
    fc = parse_frame_control(bytes([0x88, (from_ds << 1) | to_ds]))
    assert (fc.from_ds, fc.to_ds) == (bool(from_ds), bool(to_ds))
    assert classify_ds(fc) is DS_TABLE[(from_ds, to_ds)]


@given(st.integers(0, 255), st.integers(0, 255))
def test_ds_depends_only_on_low_flag_bits(octet0, flags):
    fc = parse_frame_control(bytes([octet0, flags]))
    assert classify_ds(fc) is DS_TABLE[((flags >> 1) & 1, flags & 1)]
    assert fc.hex() == f"0x{octet0:02x}{flags:02x}"


def test_frame_control_rejects_wrong_length():
    with pytest.raises(ValueError):
        parse_frame_control(b"\x88")


# --- address roles ---------------------------------------------------------

def test_downlink_qos_data_fixture():
    # QoS Data, flags 0x42 (protected, from DS), CCMP, FCS; addr1 STA, addr2 AP, addr3 source
    frame = build_frame(b"\x88\x42", STA, AP, SRC, body=bytes(444), seq=2733, qos=True,
                        ccmp=True, fcs=True)
    rec = decode_packet(build_radiotap(flags=0x10, rssi_dbm=-60) + frame, 1, "s1")
    assert rec.fc.ftype is FrameType.DATA and rec.fc.subtype == 8
    assert rec.fc.raw_flags == 0x42 and rec.fc.protected
    assert rec.direction is Direction.DOWNLINK
    assert (rec.addrs.sa, rec.addrs.da, rec.addrs.ta, rec.addrs.ra, rec.addrs.bssid) == (SRC, STA, AP, STA, AP)
    assert rec.body_len_bytes == 444


def test_probe_request_fixture():
    probe = MacAddress.parse("02:00:00:62:82:d9")
    ssid = bytes.fromhex("1257bda2")
    body = bytes([0, len(ssid)]) + ssid + bytes([1, 4, 2, 4, 11, 22])
    frame = build_frame(b"\x40\x00", BROADCAST, probe, BROADCAST, body=body, seq=3304, fcs=True)
    rec = decode_packet(build_radiotap(flags=0x10) + frame, 1, "s1")
    assert rec.fc.ftype is FrameType.MANAGEMENT and rec.fc.subtype == 4
    assert rec.direction is Direction.PEER_OR_BROADCAST
    a = rec.addrs
    assert (a.sa, a.da, a.ta, a.ra, a.bssid) == (probe, BROADCAST, probe, BROADCAST, BROADCAST)
    assert rec.ssid == ssid


def test_uplink_and_ap_to_ap_roles():
    a1, a2, a3, a4 = (MacAddress(bytes([2, 0, 0, 0, 0, i])) for i in range(1, 5))
    up = resolve_addresses(parse_frame_control(b"\x08\x01"), a1, a2, a3)
    assert (up.sa, up.da, up.ta, up.ra, up.bssid) == (a2, a3, a2, a1, a1)
    wds = resolve_addresses(parse_frame_control(b"\x08\x03"), a1, a2, a3, a4)
    assert (wds.sa, wds.da, wds.ta, wds.ra, wds.bssid) == (a4, a3, a2, a1, None)
    with pytest.raises(MissingAddress4):
        resolve_addresses(parse_frame_control(b"\x08\x03"), a1, a2, a3)


def test_four_address_frame_decodes():
    a1, a2, a3, a4 = (MacAddress(bytes([2, 0, 0, 0, 0, i])) for i in range(1, 5))
    frame = build_frame(b"\x88\x03", a1, a2, a3, body=bytes(10), addr4=a4, qos=True)
    rec = decode_packet(build_radiotap() + frame, 5, "s")
    assert rec.direction is Direction.AP_TO_AP
    assert rec.addrs.sa == a4 and rec.body_len_bytes == 10


def test_control_frames_are_skipped():
    ack = b"\xd4\x00\x00\x00" + STA.octets
    assert decode_packet(build_radiotap() + ack, 1, "s") is None


def test_short_frame_raises():
    with pytest.raises(MalformedFrame):
        decode_packet(build_radiotap() + b"\x88\x02" + bytes(10), 1, "s")


# --- SSID elements ---------------------------------------------------------

def test_ssid_extraction_beacon_and_hidden():
    fixed = bytes(12)
    assert extract_mgmt_ssid(fixed + b"\x00\x04home\x01\x01\x82", 8) == b"home"
    assert extract_mgmt_ssid(fixed + b"\x00\x00", 8) == b""
    assert extract_mgmt_ssid(fixed + b"\x01\x01\x82", 8) is None
    with pytest.raises(MalformedTags):
        extract_mgmt_ssid(fixed + b"\x00\x09home", 8)
    with pytest.raises(ValueError):
        extract_mgmt_ssid(b"", 11)


# --- radiotap ----------------------------------------------------------------

def test_radiotap_golden_fixture():
    hdr = iwlwifi_header()
    assert len(hdr) == 56
    meta, offset = parse_radiotap(hdr)
    assert offset == 56
    assert meta.channel_freq_mhz == 2437
    assert meta.rssi_dbm == -84
    assert meta.data_rate_kbps == 6000
    assert meta.fcs_at_end
    assert meta.timestamp_us == 9048706358
    assert parse_radiotap(hdr, timestamp_us=7)[0].timestamp_us == 7


def test_radiotap_errors():
    with pytest.raises(TruncatedHeader):
        parse_radiotap(b"\x00\x00\x08")
    with pytest.raises(UnsupportedVersion):
        parse_radiotap(b"\x01\x00\x08\x00\x00\x00\x00\x00")
    with pytest.raises(TruncatedHeader):
        parse_radiotap(b"\x00\x00\x40\x00\x00\x00\x00\x00")
    with pytest.raises(TruncatedHeader):
        # extension bit set but no second word
        parse_radiotap(struct.pack("<BBHI", 0, 0, 8, 1 << 31))
    with pytest.raises(TruncatedHeader):
        # TSFT present but the header is only 12 bytes
        parse_radiotap(struct.pack("<BBHI", 0, 0, 12, 1) + bytes(4))


def test_radiotap_unknown_field_stops_decoding():
    hdr = struct.pack("<BBHI", 0, 0, 12, (1 << 5) | (1 << 28)) + struct.pack("<b", -50) + bytes(3)
    meta, offset = parse_radiotap(hdr)
    assert meta.rssi_dbm == -50 and offset == 12


def test_radiotap_vendor_namespace_is_skipped():
    present0 = (1 << 5) | (1 << 30) | (1 << 31)
    present1 = 1 << 29 | 1 << 31
    present2 = 1 << 3
    body = struct.pack("<III", present0, present1, present2)      # 4..16
    body += struct.pack("<b", -61) + b"\x00"                      # 16 signal, pad
    body += b"\x00\x11\x22\x01" + struct.pack("<H", 3)             # 18 vendor header
    body += b"\xaa\xbb\xcc"                                       # 24 vendor data
    body += b"\x00"                                               # pad to 28
    body += struct.pack("<HH", 2462, 0x00A0)                      # 28 channel
    hdr = struct.pack("<BBH", 0, 0, 4 + len(body)) + body
    meta, _ = parse_radiotap(hdr)
    assert meta.rssi_dbm == -61 and meta.channel_freq_mhz == 2462


@given(
    tsft=st.none() | st.integers(0, 2**64 - 1),
    flags=st.none() | st.integers(0, 255),
    rate=st.none() | st.integers(1, 255).map(lambda r: r * 500),
    freq=st.none() | st.integers(2400, 6000),
    rssi=st.none() | st.integers(-120, 0),
)
def test_radiotap_build_parse_roundtrip(tsft, flags, rate, freq, rssi):
    hdr = build_radiotap(tsft=tsft, flags=flags, rate_kbps=rate, freq_mhz=freq, rssi_dbm=rssi)
    meta, offset = parse_radiotap(hdr)
    assert offset == len(hdr)
    assert meta.timestamp_us == (tsft or 0)
    assert meta.data_rate_kbps == rate
    assert meta.channel_freq_mhz == freq
    assert meta.rssi_dbm == rssi
    assert meta.fcs_at_end == bool((flags or 0) & 0x10)


def test_out_of_range_values_decode_as_absent():
    meta, _ = parse_radiotap(build_radiotap(freq_mhz=900, rssi_dbm=20))
    assert meta.channel_freq_mhz is None and meta.rssi_dbm is None


# --- channels ------------------------------------------------------------------

def test_channel_mapping():
    assert channel_freq(1) == 2412 and channel_freq(6) == 2437 and channel_freq(13) == 2472
    assert [freq_channel(channel_freq(c)) for c in range(1, 14)] == list(range(1, 14))
    for bad in (0, 14):
        with pytest.raises(InvalidChannel):
            channel_freq(bad)
    for bad in (2411, 2484, 5180):
        with pytest.raises(InvalidChannel):
            freq_channel(bad)


# --- pcap ------------------------------------------------------------------------

def _packet(i: int) -> bytes:
    return build_radiotap(rssi_dbm=-40 - i) + build_frame(b"\x08\x01", AP, STA, SRC, body=bytes(i))


def test_pcap_roundtrip_and_decode():
    buf = io.BytesIO()
    assert write_pcap(buf, [(1_000_000 + i, _packet(i)) for i in range(5)]) == 5
    buf.seek(0)
    got = list(read_pcap(buf))
    assert [ts for ts, _ in got] == [1_000_000 + i for i in range(5)]
    buf.seek(0)
    recs = list(decode_capture(buf, "s1"))
    assert [r.rssi_dbm for r in recs] == [-40, -41, -42, -43, -44]
    assert all(r.direction is Direction.UPLINK and r.addrs.ta == STA for r in recs)


def test_pcap_nanosecond_big_endian():
    pkt = _packet(0)
    data = struct.pack(">IHHiIII", 0xA1B23C4D, 2, 4, 0, 0, 65535, 127)
    data += struct.pack(">IIII", 3, 5_000, len(pkt), len(pkt)) + pkt
    assert [ts for ts, _ in read_pcap(io.BytesIO(data))] == [3_000_005]


def test_pcap_errors():
    with pytest.raises(FormatError):
        list(read_pcap(io.BytesIO(b"\x00" * 10)))
    with pytest.raises(FormatError):
        list(read_pcap(io.BytesIO(b"\x00" * 24)))
    with pytest.raises(UnsupportedLinkType):
        list(read_pcap(io.BytesIO(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1))))
    buf = io.BytesIO()
    write_pcap(buf, [(1, _packet(1)), (2, _packet(2))])
    cut = buf.getvalue()[:-3]
    out = []
    with pytest.raises(TruncatedCapture):
        for item in read_pcap(io.BytesIO(cut)):
            out.append(item)
    assert len(out) == 1
    # lenient decoding keeps the complete records
    assert len(list(decode_capture(io.BytesIO(cut), "s"))) == 1
    with pytest.raises(TruncatedCapture):
        list(decode_capture(io.BytesIO(cut), "s", strict=True))


def test_decode_capture_skips_bad_packets():
    buf = io.BytesIO()
    write_pcap(buf, [(1, b"\x05\x00\x08\x00"), (2, _packet(3))])
    buf.seek(0)
    assert len(list(decode_capture(buf, "s"))) == 1


# --- interchange format -------------------------------------------------------

@settings(max_examples=300)
@given(st.lists(frame_records(), max_size=5))
def test_record_stream_roundtrip(records):
    buf = io.StringIO()
    assert write_records(records, buf) == len(records)
    buf.seek(0)
    assert read_records(buf) == records


def test_record_parse_errors_carry_line_numbers():
    good = format_record(decode_packet(_packet(1), 1, "s"))
    for bad in ('{"ts_us": 1}', "[1, 2]", "not json", good.replace('"dir":"up"', '"dir":"sideways"')):
        with pytest.raises(ParseError) as exc:
            read_records(io.StringIO(good + "\n\n" + bad + "\n"))
        assert exc.value.line == 3


def test_record_minimal_schema():
    line = ('{"ts_us":5,"sniffer":"a","ftype":"data","subtype":0,"dir":"down",'
            '"sa":"02:00:00:00:00:01","da":"02:00:00:00:00:02","ta":"02:00:00:00:00:03",'
            '"ra":"02:00:00:00:00:02","body_len":7,"unknown":1}')
    (rec,) = read_records(io.StringIO(line))
    assert rec.meta == RadiotapMeta(5)
    assert rec.fc == make_frame_control(FrameType.DATA, 0, 0x02)
    assert rec.addrs.bssid is None
