"""Plug-and-Secure key agreement over the wired-AND CAN bus.

Two nodes transmit complementary-interleaved random chunks simultaneously;
chunk positions whose two bus bits both read dominant are the ones where the
nodes disagreed, and an eavesdropper that only sees logical values cannot
tell which of the two drove the bus.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import ExhaustionError, InvalidInputError
from .framing import HEADER_FIELD_NAMES, TRAILER, crc15, header_bits, int_to_bits

PNS_IDENTIFIER = 0x7AA


def expand_seed(seed: bytes | str, n_bits: int) -> np.ndarray:
    """Deterministic pseudorandom bit stream: AES-128 in counter mode.

    The key is the first 16 bytes of SHA-256(seed); the stream is the
    keystream for an all-zero IV, so longer requests extend shorter ones.
    """
    if n_bits <= 0:
        raise InvalidInputError("n_bits must be positive")
    if isinstance(seed, str):
        seed = seed.encode()
    key = hashlib.sha256(bytes(seed)).digest()[:16]
    enc = Cipher(algorithms.AES(key), modes.CTR(bytes(16))).encryptor()
    raw = enc.update(bytes((n_bits + 7) // 8))
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[:n_bits]


def bits_to_bytes(bits) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def interleave_with_complement(chunk) -> np.ndarray:
    """0 -> 01, 1 -> 10."""
    chunk = np.asarray(chunk, dtype=np.uint8)
    if chunk.size == 0:
        raise InvalidInputError("chunk must be non-empty")
    out = np.empty(2 * chunk.size, dtype=np.uint8)
    out[0::2] = chunk
    out[1::2] = 1 - chunk
    return out


def deinterleave(packet) -> np.ndarray:
    packet = np.asarray(packet, dtype=np.uint8)
    if packet.size % 2:
        raise InvalidInputError("packet length must be even")
    return packet[0::2].copy()


@dataclass
class FrameRecord:
    """Lock-step transcript of one simultaneous PnS frame, one entry per bus bit.

    ``intents`` holds the logical bit each participant put on the wire;
    ``payload_index`` is the packet position for payload bits and -1
    elsewhere.  Nodes other than the two participants only drive the ACK slot.
    """

    fields: list[str]
    intent_primary: np.ndarray
    intent_secondary: np.ndarray
    bus: np.ndarray
    payload_index: np.ndarray
    crc: int
    chunk_primary: np.ndarray
    chunk_secondary: np.ndarray
    acked: bool

    @property
    def n_bits(self) -> int:
        return self.bus.size

    @property
    def payload_bus(self) -> np.ndarray:
        idx = np.flatnonzero(self.payload_index >= 0)
        return self.bus[idx[np.argsort(self.payload_index[idx])]]

    @property
    def secret_mask(self) -> np.ndarray:
        """Chunk positions whose two bus bits were both dominant."""
        pairs = self.payload_bus.reshape(-1, 2)
        return (pairs == 0).all(axis=1)

    def stuffed_stream(self) -> list[int]:
        """Bus bits from SOF through the last CRC bit (stuff bits included)."""
        idx = [k for k, f in enumerate(self.fields) if f not in ("idle",) and f not in dict(TRAILER)]
        return [int(self.bus[k]) for k in idx]


def pns_frame(
    packet_primary, packet_secondary, identifier: int = PNS_IDENTIFIER, *, idle_bits: int = 2, listeners: bool = False
) -> FrameRecord:
    """Co-simulate both controllers bit by bit over one frame.

    Stuff bits are inserted from the observed bus output, which both nodes
    see identically, and the CRC is computed over the bus output; both nodes
    therefore transmit identical stuff and CRC bits.
    """
    p1 = np.asarray(packet_primary, dtype=np.uint8)
    p2 = np.asarray(packet_secondary, dtype=np.uint8)
    if p1.size != p2.size or p1.size % 8 or not 0 < p1.size <= 64:
        raise InvalidInputError("packets must be equal, whole bytes and at most 64 bits")
    fields, i1, i2, pidx, unstuffed = [], [], [], [], []
    run = [None, 0]

    def emit(name, a, b, index=-1, stuffable=True):
        bit = a & b
        fields.append(name)
        i1.append(a)
        i2.append(b)
        pidx.append(index)
        if stuffable:
            if name != "stuff":
                unstuffed.append(bit)
            run[:] = [bit, run[1] + 1] if bit == run[0] else [bit, 1]

    def stuff_check():
        if run[1] == 5:
            s = 1 - run[0]
            emit("stuff", s, s)

    for _ in range(idle_bits):
        emit("idle", 1, 1, stuffable=False)
    for name, b in zip(HEADER_FIELD_NAMES, header_bits(identifier, p1.size // 8)):
        stuff_check()
        emit(name, b, 1)
    for k in range(p1.size):
        stuff_check()
        emit("payload", int(p1[k]), int(p2[k]), k)
    crc = crc15(unstuffed)
    for b in int_to_bits(crc, 15):
        stuff_check()
        emit("crc", b, b)
    stuff_check()
    for name, b in TRAILER:
        emit(name, b, b, stuffable=False)
    bus = np.array(i1, dtype=np.uint8) & np.array(i2, dtype=np.uint8)
    if listeners:
        bus[fields.index("ack")] = 0
    return FrameRecord(
        fields, np.array(i1, dtype=np.uint8), np.array(i2, dtype=np.uint8), bus,
        np.array(pidx), crc, deinterleave(p1), deinterleave(p2), listeners,
    )


@dataclass
class PnSSession:
    node_primary_id: str
    node_secondary_id: str
    seed_primary: bytes
    seed_secondary: bytes
    chunk_bits: int = 32
    target_key_bits: int = 128
    identifier: int = PNS_IDENTIFIER
    frame_cap: int = 64
    harvested_primary: list = field(default_factory=list)
    harvested_secondary: list = field(default_factory=list)

    def __post_init__(self):
        if self.chunk_bits <= 0 or self.chunk_bits % 4 or self.chunk_bits > 32:
            raise InvalidInputError("chunk_bits must be a positive multiple of 4, at most 32")
        if self.target_key_bits <= 0:
            raise InvalidInputError("target_key_bits must be positive")

    @property
    def render_seed(self) -> int:
        digest = hashlib.sha256(bytes(self.seed_primary) + b"|" + bytes(self.seed_secondary)).digest()
        return int.from_bytes(digest[:8], "big")


@dataclass
class SessionResult:
    key_primary: np.ndarray
    key_secondary: np.ndarray
    frames: list[FrameRecord]
    traces: list = field(default_factory=list)
    renders: list = field(default_factory=list)

    def __iter__(self):
        trace = self.traces[0] if self.traces else None
        return iter((self.key_primary, self.key_secondary, trace))

    def transcript(self, session: PnSSession | None = None) -> list[dict]:
        """One record per transmitted bus bit across all frames."""
        records = []
        key_len = 0
        for f, rec in enumerate(self.frames):
            secret = rec.secret_mask
            for k in range(rec.n_bits):
                p = int(rec.payload_index[k])
                kept = bool(p >= 0 and secret[p // 2])
                if kept and p % 2 == 1:
                    key_len += 1
                records.append({
                    "frame": f,
                    "bit": k,
                    "field": rec.fields[k],
                    "intent_primary": int(rec.intent_primary[k]),
                    "intent_secondary": int(rec.intent_secondary[k]),
                    "bus": int(rec.bus[k]),
                    "payload_index": p,
                    "kept": kept,
                    "key_bits": key_len,
                })
        return records

    def transcript_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.transcript())


def run_pns_two_party(session: PnSSession, bus=None, *, context: dict | None = None) -> SessionResult:
    """Run frames until ``target_key_bits`` secret bits are shared.

    With a synthesizing ``bus`` each frame is also rendered to a probe trace
    (``SessionResult.traces``).  The secondary inverts its kept bits, so on
    return both keys are equal.
    """
    n = session.chunk_bits
    s1 = expand_seed(session.seed_primary, n * session.frame_cap)
    s2 = expand_seed(session.seed_secondary, n * session.frame_cap)
    listeners = bool(bus is not None and bus.has_listeners(session.node_primary_id, session.node_secondary_id))
    frames, traces, renders = [], [], []
    for f in range(session.frame_cap):
        c1, c2 = s1[f * n:(f + 1) * n], s2[f * n:(f + 1) * n]
        rec = pns_frame(interleave_with_complement(c1), interleave_with_complement(c2),
                        session.identifier, listeners=listeners)
        # both nodes read the secret positions off the public bus output
        secret = rec.secret_mask
        session.harvested_primary.extend(int(b) for b in c1[secret])
        session.harvested_secondary.extend(int(b) for b in c2[secret])
        frames.append(rec)
        if bus is not None and bus.synthesize:
            r = bus.render_pns_frame(rec, session.node_primary_id, session.node_secondary_id,
                                     seed=[session.render_seed, f], context=context)
            renders.append(r)
            traces.append(r.trace)
        if len(session.harvested_primary) >= session.target_key_bits:
            break
    else:
        raise ExhaustionError(
            f"only {len(session.harvested_primary)} of {session.target_key_bits} bits after "
            f"{session.frame_cap} frames"
        )
    t = session.target_key_bits
    key_primary = np.array(session.harvested_primary[:t], dtype=np.uint8)
    key_secondary = 1 - np.array(session.harvested_secondary[:t], dtype=np.uint8)
    return SessionResult(key_primary, key_secondary, frames, traces, renders)


def eavesdrop_key(primary_seed: bytes, frames: list[FrameRecord], chunk_bits: int, target_key_bits: int) -> np.ndarray:
    """Key recomputed by a node that knows the primary's seed and reads the bus.

    This is how earlier members of a group chain follow along: the primary
    of each later session seeds its stream with the running group key.
    """
    stream = expand_seed(primary_seed, chunk_bits * len(frames))
    bits = []
    for f, rec in enumerate(frames):
        c1 = stream[f * chunk_bits:(f + 1) * chunk_bits]
        bits.extend(int(b) for b in c1[rec.secret_mask])
    return np.array(bits[:target_key_bits], dtype=np.uint8)


def run_group_session(primary, secondary, running_key, seeds, holders, *, bus=None, chain=None,
                      position=None, chunk_bits=32, target_key_bits=128, frame_cap=64,
                      identifier=PNS_IDENTIFIER):
    """One pairwise step of a group protocol; returns (new key, keys per holder, result)."""
    seed_p = seeds[primary] if running_key is None else bits_to_bytes(running_key)
    session = PnSSession(primary, secondary, seed_p, seeds[secondary], chunk_bits,
                         target_key_bits, identifier, frame_cap)
    context = None
    if chain is not None:
        context = {"chain": list(chain), "position": position, "holders": set(holders), "primary": primary}
    result = run_pns_two_party(session, bus, context=context)
    keys = {primary: result.key_primary, secondary: result.key_secondary}
    for h in holders:
        if h not in keys:
            keys[h] = eavesdrop_key(seed_p, result.frames, chunk_bits, target_key_bits)
    return result.key_primary, keys, result


def run_group_key_linear(group, seeds, bus=None, **kwargs) -> dict:
    """GroupKey-Linear: PnS along the broadcast order, each step seeded by the last key.

    ``seeds`` maps every node id to its private seed; only the first
    node's seed and the later nodes' secondary seeds are ever used.
    Returns the final key held by every member.
    """
    group = list(group)
    if len(group) < 2:
        raise InvalidInputError("a group needs at least two nodes")
    running = None
    keys = {}
    for idx in range(len(group) - 1):
        holders = group[:idx + 2]
        running, keys, _ = run_group_session(group[idx], group[idx + 1], running, seeds, holders,
                                             bus=bus, chain=group, position=idx + 1, **kwargs)
    return keys
