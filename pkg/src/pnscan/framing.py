"""CAN 2.0A framing: CRC-15, bit stuffing and base-format frame layout."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import FramingError, InvalidInputError

CRC15_POLY = 0x4599  # x^15 + x^14 + x^10 + x^8 + x^7 + x^4 + x^3 + 1
STUFF_RUN = 5
# SOF + 11-bit identifier + RTR + IDE + r0 + 4-bit DLC
HEADER_BITS = 19
TRAILER = [("crc_delim", 1), ("ack", 1), ("ack_delim", 1)] + [("eof", 1)] * 7 + [("ifs", 1)] * 3


def crc15(bits) -> int:
    crc = 0
    for b in bits:
        nxt = (b & 1) ^ ((crc >> 14) & 1)
        crc = (crc << 1) & 0x7FFF
        if nxt:
            crc ^= CRC15_POLY
    return crc


def int_to_bits(value: int, width: int) -> list[int]:
    return [(value >> (width - 1 - k)) & 1 for k in range(width)]


def bits_to_int(bits) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | (b & 1)
    return out


def bit_stuff(bits) -> list[int]:
    """Insert the complement after every run of five identical bits."""
    out = []
    run_bit, run = None, 0
    for b in bits:
        out.append(b)
        if b == run_bit:
            run += 1
        else:
            run_bit, run = b, 1
        if run == STUFF_RUN:
            out.append(1 - b)
            run_bit, run = 1 - b, 1
    return out


def bit_unstuff(stuffed) -> list[int]:
    out = []
    run_bit, run = None, 0
    expect_stuff = False
    for k, b in enumerate(stuffed):
        if expect_stuff:
            if b == run_bit:
                raise FramingError(f"stuff error at bit {k}: six identical bits")
            run_bit, run = b, 1
            expect_stuff = False
            continue
        out.append(b)
        if b == run_bit:
            run += 1
        else:
            run_bit, run = b, 1
        if run == STUFF_RUN:
            expect_stuff = True
    return out


def header_bits(identifier: int, dlc: int) -> list[int]:
    if not 0 <= identifier < 2**11:
        raise InvalidInputError("identifier must fit in 11 bits")
    if not 0 <= dlc <= 8:
        raise InvalidInputError("DLC must be 0..8")
    return [0] + int_to_bits(identifier, 11) + [0, 0, 0] + int_to_bits(dlc, 4)


@dataclass
class CanFrame:
    """A base-format data frame as it appears on the wire.

    ``stuffed_stream`` covers SOF through the CRC sequence; ``wire_bits``
    appends the unstuffed trailer (delimiters, ACK, EOF, intermission).
    """

    header_bits: list[int]
    payload_bits: list[int]
    stuffed_stream: list[int]
    crc15: int
    trailer_bits: list[int] = field(default_factory=lambda: [b for _, b in TRAILER])

    @property
    def wire_bits(self) -> list[int]:
        return self.stuffed_stream + self.trailer_bits


def build_frame(identifier: int, payload_bits, ack: int = 0) -> CanFrame:
    """Ordinary single-transmitter frame carrying ``payload_bits``."""
    payload_bits = list(payload_bits)
    if len(payload_bits) % 8 or len(payload_bits) > 64:
        raise InvalidInputError("payload must be whole bytes, at most 8")
    head = header_bits(identifier, len(payload_bits) // 8)
    body = head + payload_bits
    crc = crc15(body)
    stuffed = bit_stuff(body + int_to_bits(crc, 15))
    trailer = [b for _, b in TRAILER]
    trailer[1] = ack
    return CanFrame(head, payload_bits, stuffed, crc, trailer)


HEADER_FIELD_NAMES = ["sof"] + ["id"] * 11 + ["rtr", "ide", "r0"] + ["dlc"] * 4


def stuffed_field_labels(stuffed) -> list[str]:
    """Name the field of every bit of a stuffed stream starting at SOF.

    The payload length is read from the DLC as the stream is walked.  Bits
    after the CRC sequence are labelled ``"trailer"``.  A truncated stream
    simply yields fewer labels.
    """
    names = list(HEADER_FIELD_NAMES)
    out = []
    run_bit, run, k = None, 0, 0
    unstuffed = []
    for b in stuffed:
        if run == STUFF_RUN:
            if b == run_bit:
                raise FramingError(f"stuff error at bit {len(out)}")
            out.append("stuff")
            run_bit, run = b, 1
            if k == len(names) and k > HEADER_BITS:
                run = 0
            continue
        if k == len(names) and k > HEADER_BITS:
            out.append("trailer")
            run = 0
            continue
        out.append(names[k])
        unstuffed.append(b)
        k += 1
        run, run_bit = (run + 1, b) if b == run_bit else (1, b)
        if k == HEADER_BITS:
            dlc = min(bits_to_int(unstuffed[15:19]), 8)
            names += ["payload"] * (8 * dlc) + ["crc"] * 15
    return out
