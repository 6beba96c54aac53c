"""2.4 GHz channel/frequency mapping (channels 1-13, 5 MHz spacing)."""

from homesniff.errors import InvalidChannel

CHANNEL_1_MHZ = 2412
SPACING_MHZ = 5


def channel_freq(channel: int) -> int:
    if not isinstance(channel, int) or not 1 <= channel <= 13:
        raise InvalidChannel(f"channel {channel!r} outside 1..13")
    return CHANNEL_1_MHZ + SPACING_MHZ * (channel - 1)


def freq_channel(freq_mhz: int) -> int:
    offset = freq_mhz - CHANNEL_1_MHZ
    if offset % SPACING_MHZ or not 0 <= offset // SPACING_MHZ <= 12:
        raise InvalidChannel(f"{freq_mhz} MHz is not a 2.4 GHz channel 1..13 centre")
    return offset // SPACING_MHZ + 1
