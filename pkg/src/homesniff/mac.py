"""48-bit MAC addresses."""

from __future__ import annotations

from functools import lru_cache


class MacAddress:
    __slots__ = ("octets", "_hash")

    def __init__(self, octets: bytes):
        if len(octets) != 6:
            raise ValueError(f"MAC address needs 6 octets, got {len(octets)}")
        octets = bytes(octets)
        object.__setattr__(self, "octets", octets)
        object.__setattr__(self, "_hash", hash(octets))

    def __setattr__(self, name, value):
        raise AttributeError("MacAddress is immutable")

    @classmethod
    def parse(cls, text: str) -> "MacAddress":
        """Accepts ``aa:bb:cc:dd:ee:ff``, ``aa-bb-...`` or bare 12-digit hex."""
        return _parse_cached(text)

    def oui(self) -> bytes:
        return self.octets[:3]

    def is_broadcast(self) -> bool:
        return self.octets == b"\xff" * 6

    def is_multicast(self) -> bool:
        return bool(self.octets[0] & 0x01)

    def is_locally_administered(self) -> bool:
        return bool(self.octets[0] & 0x02)

    def __str__(self) -> str:
        return ":".join(f"{b:02x}" for b in self.octets)

    def __repr__(self) -> str:
        return f"MacAddress('{self}')"

    def __eq__(self, other) -> bool:
        return isinstance(other, MacAddress) and self.octets == other.octets

    def __lt__(self, other: "MacAddress") -> bool:
        return self.octets < other.octets

    def __hash__(self) -> int:
        return self._hash

    def __reduce__(self):
        return (MacAddress, (self.octets,))

    def __int__(self) -> int:
        return int.from_bytes(self.octets, "big")


@lru_cache(maxsize=65536)
def _parse_cached(text: str) -> MacAddress:
    digits = text.strip().replace(":", "").replace("-", "").replace(".", "")
    if len(digits) != 12:
        raise ValueError(f"not a MAC address: {text!r}")
    try:
        return MacAddress(bytes.fromhex(digits))
    except ValueError:
        raise ValueError(f"not a MAC address: {text!r}") from None


BROADCAST = MacAddress(b"\xff" * 6)
