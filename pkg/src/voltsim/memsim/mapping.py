"""Physical address to (channel, rank, bank, row, column) decoding."""
from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import DecodeError, InvalidParameterError

FIELDS = ("Ro", "Ba", "Ra", "Co", "Ch")


@dataclass(frozen=True)
class Decoded:
    channel: int
    rank: int
    bank: int
    row: int
    column: int


class AddressMapper:
    """Bit-slice decoder for a mapping string such as ``RoBaRaCoCh``.

    Fields are listed from the most to the least significant bits and sit
    above the cache-line offset. With the default string the channel is
    selected by the lowest line-address bit, so consecutive lines alternate
    channels.
    """

    def __init__(self, scheme: str = "RoBaRaCoCh", channels: int = 2, ranks: int = 1,
                 banks: int = 8, rows: int = 32768, columns: int = 128,
                 line_bytes: int = 64):
        order = re.findall(r"[A-Z][a-z]", scheme)
        if "".join(order) != scheme or sorted(order) != sorted(FIELDS):
            raise InvalidParameterError(f"bad address mapping {scheme!r}")
        sizes = {"Ro": rows, "Ba": banks, "Ra": ranks, "Co": columns, "Ch": channels}
        self.bits = {}
        for name, n in sizes.items():
            if n < 1 or n & (n - 1):
                raise InvalidParameterError(f"{name} count must be a power of two")
            self.bits[name] = n.bit_length() - 1
        if line_bytes < 1 or line_bytes & (line_bytes - 1):
            raise InvalidParameterError("line size must be a power of two")
        self.scheme = scheme
        self.offset_bits = line_bytes.bit_length() - 1
        self.shift = {}
        pos = self.offset_bits
        for name in reversed(order):
            self.shift[name] = pos
            pos += self.bits[name]
        self.total_bits = pos

    def _field(self, addr: int, name: str) -> int:
        return (addr >> self.shift[name]) & ((1 << self.bits[name]) - 1)

    def decode(self, addr: int) -> Decoded:
        if addr < 0 or addr >> self.total_bits:
            raise DecodeError(f"address 0x{addr:x} outside the {self.total_bits}-bit space")
        return Decoded(self._field(addr, "Ch"), self._field(addr, "Ra"),
                       self._field(addr, "Ba"), self._field(addr, "Ro"),
                       self._field(addr, "Co"))

    def encode(self, channel=0, rank=0, bank=0, row=0, column=0) -> int:
        vals = {"Ch": channel, "Ra": rank, "Ba": bank, "Ro": row, "Co": column}
        addr = 0
        for name, v in vals.items():
            if not 0 <= v < 1 << self.bits[name]:
                raise InvalidParameterError(f"{name} value {v} out of range")
            addr |= v << self.shift[name]
        return addr
