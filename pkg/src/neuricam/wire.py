"""Packet framing, a seeded lossy channel, reassembly and loss maps.

Packet layout (little-endian)::

    stream_id u8 | frame_seq u32 | line_index u16 | segment_index u8 |
    payload_len u16 | payload | crc16 u16

The CRC is CRC-16/CCITT-FALSE over header and payload. Every image line is
carried in ``ceil(row_bytes / 1024)`` segments; a terminal packet with
``line_index == height`` carries the 32-bit timestamp and the frame footer.
"""
from __future__ import annotations

import binascii
import enum
import math
import socket
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .imgcore import ColorSpace, Frame, InvalidInputError, StreamKind

MAX_PAYLOAD = 1024
FOOTER = bytes((13, 0, 10))
RADIO_BPS = 2_500_000
NCS_MAGIC = b"NCSTRM01"

_HEADER = struct.Struct("<BIHBH")
_CRC = struct.Struct("<H")
_TIMESTAMP = struct.Struct("<I")


class StreamId(enum.IntEnum):
    LR = 0
    KEY_A = 1
    KEY_B = 2


class WireFormatError(ValueError):
    pass


def crc16(data: bytes) -> int:
    # binascii.crc_hqx is poly 0x1021, unreflected; seeding 0xFFFF gives CCITT-FALSE
    return binascii.crc_hqx(data, 0xFFFF)


@dataclass(frozen=True)
class Packet:
    stream_id: int
    frame_seq: int
    line_index: int
    segment_index: int
    payload: bytes
    crc16: int | None = None

    def __post_init__(self):
        if len(self.payload) > MAX_PAYLOAD:
            raise WireFormatError(f"payload of {len(self.payload)} bytes exceeds {MAX_PAYLOAD}")
        if self.crc16 is None:
            object.__setattr__(self, "crc16", crc16(self.header() + self.payload))

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    def header(self) -> bytes:
        return _HEADER.pack(self.stream_id, self.frame_seq, self.line_index, self.segment_index, len(self.payload))

    def verify(self) -> bool:
        return crc16(self.header() + self.payload) == self.crc16

    def to_bytes(self) -> bytes:
        return self.header() + self.payload + _CRC.pack(self.crc16)

    @classmethod
    def from_bytes(cls, data: bytes) -> Packet:
        if len(data) < _HEADER.size + _CRC.size:
            raise WireFormatError(f"packet of {len(data)} bytes is shorter than header + crc")
        sid, seq, line, seg, n = _HEADER.unpack_from(data)
        if len(data) != _HEADER.size + n + _CRC.size:
            raise WireFormatError(f"payload_len {n} disagrees with packet size {len(data)}")
        payload = bytes(data[_HEADER.size : _HEADER.size + n])
        (crc,) = _CRC.unpack_from(data, _HEADER.size + n)
        return cls(sid, seq, line, seg, payload, crc)


@dataclass(frozen=True)
class StreamLayout:
    """What the receiver knows about a stream ahead of time."""

    width: int
    height: int
    channels: int

    @property
    def row_bytes(self) -> int:
        return self.width * self.channels

    @property
    def segments_per_line(self) -> int:
        return math.ceil(self.row_bytes / MAX_PAYLOAD)

    @classmethod
    def of(cls, frame: Frame) -> StreamLayout:
        return cls(frame.width, frame.height, frame.channels)


def frame_wire_bytes(rows, timestamp_ms: int) -> bytes:
    """Raw serial form of a frame: pixel data, 32-bit timestamp, footer."""
    return b"".join(rows) + _TIMESTAMP.pack(timestamp_ms % 2**32) + FOOTER


def split_on_footer(data: bytes, frame_bytes: int) -> list:
    """Recover ``(pixels, timestamp)`` records from a raw serial byte stream.

    Synchronisation starts after the first footer seen; a candidate footer is
    accepted only where a whole frame plus timestamp precedes it.
    """
    out = []
    record = frame_bytes + _TIMESTAMP.size + len(FOOTER)
    first = data.find(FOOTER)
    if first < 0:
        return out
    pos = first + len(FOOTER)
    while pos + record <= len(data):
        if data[pos + record - len(FOOTER) : pos + record] != FOOTER:
            nxt = data.find(FOOTER, pos)
            if nxt < 0:
                break
            pos = nxt + len(FOOTER)
            continue
        pixels = data[pos : pos + frame_bytes]
        (ts,) = _TIMESTAMP.unpack_from(data, pos + frame_bytes)
        out.append((pixels, ts))
        pos += record
    return out


def _key_stream(line_index: int) -> int:
    return StreamId.KEY_A if line_index % 2 == 0 else StreamId.KEY_B


def packetize_rows(rows, frame_seq: int, timestamp_ms: int, key: bool) -> list:
    height = len(rows)
    packets = []
    for line, row in enumerate(rows):
        sid = _key_stream(line) if key else StreamId.LR
        nseg = max(1, math.ceil(len(row) / MAX_PAYLOAD))
        for seg in range(nseg):
            chunk = bytes(row[seg * MAX_PAYLOAD : (seg + 1) * MAX_PAYLOAD])
            packets.append(Packet(sid, frame_seq, line, seg, chunk))
    terminal = _TIMESTAMP.pack(timestamp_ms % 2**32) + FOOTER
    sid = _key_stream(height) if key else StreamId.LR
    packets.append(Packet(sid, frame_seq, height, 0, terminal))
    return packets


def packetize(frame: Frame, stream_id: int | None = None) -> list:
    if frame.samples.dtype != np.uint8:
        raise InvalidInputError("only 8-bit frames travel over the wire")
    key = frame.stream == StreamKind.KEY if stream_id is None else stream_id != StreamId.LR
    rows = [frame.samples[i].tobytes() for i in range(frame.height)]
    return packetize_rows(rows, frame.frame_index, frame.timestamp_ms, key)


@dataclass(frozen=True)
class ChannelModel:
    per_packet_loss_prob: float = 0.0
    seed: int = 0
    bit_error_prob: float = 0.0
    # Gilbert-Elliott burst model; active when burst_enter_prob > 0
    burst_enter_prob: float = 0.0
    burst_exit_prob: float = 1.0
    burst_loss_prob: float = 1.0

    def __post_init__(self):
        for name in ("per_packet_loss_prob", "bit_error_prob", "burst_enter_prob", "burst_exit_prob", "burst_loss_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{name} = {v} is not a probability")


def _flip_bit(p: Packet, rng: np.random.Generator) -> Packet:
    if not p.payload:
        return p
    buf = bytearray(p.payload)
    bit = int(rng.integers(len(buf) * 8))
    buf[bit // 8] ^= 1 << (bit % 8)
    return replace(p, payload=bytes(buf))


def channel_transmit(packets, model: ChannelModel) -> list:
    """Independent per-packet drops (order preserved), optional corruption."""
    rng = np.random.default_rng(model.seed)
    n = len(packets)
    u = rng.random(n)
    if model.burst_enter_prob > 0:
        state = rng.random(n)
        bad = False
        drop = np.zeros(n, dtype=bool)
        for i in range(n):
            bad = state[i] >= model.burst_exit_prob if bad else state[i] < model.burst_enter_prob
            drop[i] = u[i] < (model.burst_loss_prob if bad else model.per_packet_loss_prob)
    else:
        drop = u < model.per_packet_loss_prob
    flips = rng.random(n) < model.bit_error_prob if model.bit_error_prob > 0 else np.zeros(n, dtype=bool)
    out = []
    for p, d, f in zip(packets, drop, flips):
        if d:
            continue
        out.append(_flip_bit(p, rng) if f else p)
    return out


def lines_to_lossmap(lost_lines) -> dict:
    """Collapse a set of line indices into ``{start: count}`` maximal runs."""
    runs = {}
    start = prev = None
    for line in sorted(set(lost_lines)):
        if prev is not None and line == prev + 1:
            prev = line
            continue
        if start is not None:
            runs[start] = prev - start + 1
        start = prev = line
    if start is not None:
        runs[start] = prev - start + 1
    return runs


def validate_lossmap(losses: dict, height: int | None = None) -> None:
    end = -1
    for start in sorted(losses):
        count = losses[start]
        if count < 1 or start <= end:
            raise InvalidInputError(f"loss map entry {start}->{count} overlaps or is empty")
        end = start + count - 1
        if height is not None and end >= height:
            raise InvalidInputError(f"loss map entry {start}->{count} runs past row {height - 1}")


class Reassembly(NamedTuple):
    frame: Frame
    losses: dict
    timestamp_known: bool


def reassemble(packets, layout: StreamLayout, key: bool = False, frame_index: int | None = None) -> Reassembly:
    """Rebuild one frame; missing or CRC-failing segments are zero-filled."""
    good = [p for p in packets if p.verify()]
    seqs = {p.frame_seq for p in packets}
    if len(seqs) > 1:
        raise WireFormatError(f"packets from several frames: {sorted(seqs)}")
    if frame_index is None:
        frame_index = seqs.pop() if seqs else 0
    nseg = layout.segments_per_line
    buf = np.zeros((layout.height, layout.row_bytes), dtype=np.uint8)
    have = np.zeros((layout.height, nseg), dtype=bool)
    timestamp = None
    for p in good:
        if p.line_index == layout.height and p.segment_index == 0:
            if len(p.payload) == _TIMESTAMP.size + len(FOOTER) and p.payload.endswith(FOOTER):
                (timestamp,) = _TIMESTAMP.unpack_from(p.payload)
            continue
        if p.line_index >= layout.height or p.segment_index >= nseg:
            continue
        lo = p.segment_index * MAX_PAYLOAD
        hi = min(lo + MAX_PAYLOAD, layout.row_bytes)
        if len(p.payload) != hi - lo:
            continue
        buf[p.line_index, lo:hi] = np.frombuffer(p.payload, dtype=np.uint8)
        have[p.line_index, p.segment_index] = True
    lost = np.nonzero(~have.all(axis=1))[0]
    samples = buf.reshape(layout.height, layout.width, layout.channels)
    cs = ColorSpace.SRGB8 if layout.channels == 3 else ColorSpace.GRAY8
    stream = StreamKind.KEY if key else StreamKind.LR
    frame = Frame(samples, cs, timestamp or 0, stream, frame_index)
    return Reassembly(frame, lines_to_lossmap(lost.tolist()), timestamp is not None)


def group_packets(packets) -> dict:
    """``{(is_key, frame_seq): [packets]}`` in arrival order."""
    groups = {}
    for p in packets:
        groups.setdefault((p.stream_id != StreamId.LR, p.frame_seq), []).append(p)
    return groups


@dataclass(frozen=True)
class RateReport:
    lr_bps: int
    key_frame_bits: int
    key_bps: float
    lr_radios: int
    key_radios: int
    radio_bps: int = RADIO_BPS

    @property
    def lr_fits_one_radio(self) -> bool:
        return self.lr_radios <= 1


def rate_report(config, bits_per_key_pixel: int = 16, radio_bps: int = RADIO_BPS) -> RateReport:
    """Raw (uncompressed) bit rates of both streams against the radio budget.

    Key frames are counted at the sensor's YUV 4:2:2 output of 16 bits/pixel.
    """
    lr = config.lr_res
    hr = config.hr_res
    lr_bps = lr.width * lr.height * 8 * config.lr_fps
    key_bits = hr.width * hr.height * bits_per_key_pixel
    key_bps = key_bits * config.key_fps
    return RateReport(
        lr_bps=int(lr_bps) if float(lr_bps).is_integer() else lr_bps,
        key_frame_bits=key_bits,
        key_bps=key_bps,
        lr_radios=max(1, math.ceil(lr_bps / radio_bps)),
        key_radios=max(1, math.ceil(key_bps / radio_bps)),
        radio_bps=radio_bps,
    )


# --- .ncs stream files ----------------------------------------------------


def write_ncs(packets, path) -> None:
    parts = [NCS_MAGIC]
    for p in packets:
        raw = p.to_bytes()
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))


def read_ncs(path) -> list:
    data = Path(path).read_bytes()
    if data[:8] != NCS_MAGIC:
        raise WireFormatError(f"{path}: bad magic {data[:8]!r}")
    packets = []
    pos = 8
    while pos < len(data):
        if pos + 4 > len(data):
            raise WireFormatError(f"{path}: truncated length prefix at byte {pos}")
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise WireFormatError(f"{path}: truncated packet at byte {pos}")
        packets.append(Packet.from_bytes(data[pos : pos + n]))
        pos += n
    return packets


# --- datagram transport ---------------------------------------------------

END_OF_STREAM = b"NCSEND"


def send_datagrams(packets, address, sock: socket.socket | None = None) -> int:
    own = sock is None
    sock = sock or socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        for p in packets:
            sock.sendto(p.to_bytes(), address)
        sock.sendto(END_OF_STREAM, address)
    finally:
        if own:
            sock.close()
    return len(packets)


def receive_datagrams(sock: socket.socket, timeout: float = 5.0) -> list:
    """Collect packets until the end-of-stream marker or a timeout."""
    sock.settimeout(timeout)
    packets = []
    while True:
        try:
            data, _ = sock.recvfrom(65535)
        except TimeoutError:
            break
        if data == END_OF_STREAM:
            break
        try:
            packets.append(Packet.from_bytes(data))
        except WireFormatError:
            continue
    return packets
