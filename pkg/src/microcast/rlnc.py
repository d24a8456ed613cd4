"""Generation-based random linear network codec.

A segment of a file is one generation: m packets of n bytes. Coded
packets carry the m mixing coefficients next to the payload, receivers
run progressive Gaussian elimination, and any device holding part of a
generation can recode fresh combinations for its neighbors without
decoding first.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import gf256

_HEADER = struct.Struct("<IHH")  # segment_id, m, n
HEADER_BYTES = _HEADER.size


@dataclass(frozen=True)
class GenerationParams:
    m: int = 25  # packets per generation
    n: int = 900  # payload bytes per packet

    def __post_init__(self) -> None:
        if not (1 <= self.m <= 255):
            raise ValueError(f"generation size m={self.m} outside [1, 255]")
        if not (1 <= self.n <= 65535):
            raise ValueError(f"packet size n={self.n} outside [1, 65535]")

    @property
    def segment_bytes(self) -> int:
        return self.m * self.n

    @property
    def coded_wire_bytes(self) -> int:
        return HEADER_BYTES + self.m + self.n


@dataclass(frozen=True)
class PlainPacket:
    segment_id: int
    index: int
    payload: bytes


@dataclass
class CodedPacket:
    segment_id: int
    coefficients: np.ndarray  # (m,) uint8
    payload: np.ndarray  # (n,) uint8

    def to_bytes(self) -> bytes:
        m = len(self.coefficients)
        n = len(self.payload)
        return (
            _HEADER.pack(self.segment_id, m, n)
            + self.coefficients.tobytes()
            + self.payload.tobytes()
        )

    @classmethod
    def from_bytes(cls, buf: bytes) -> "CodedPacket":
        if len(buf) < HEADER_BYTES:
            raise ValueError("coded packet shorter than its fixed header")
        seg, m, n = _HEADER.unpack_from(buf)
        if len(buf) != HEADER_BYTES + m + n:
            raise ValueError(
                f"coded packet length {len(buf)} != header + m + n = {HEADER_BYTES + m + n}"
            )
        coeff = np.frombuffer(buf, dtype=np.uint8, count=m, offset=HEADER_BYTES).copy()
        payload = np.frombuffer(buf, dtype=np.uint8, count=n, offset=HEADER_BYTES + m).copy()
        return cls(seg, coeff, payload)


def split_segment(segment_id: int, data: bytes, params: GenerationParams) -> list[PlainPacket]:
    """Cut one segment's bytes into m plain packets, zero-padding the tail.

    The true byte length travels in file metadata, not in the packets.
    """
    if len(data) > params.segment_bytes:
        raise ValueError("segment data longer than m*n")
    padded = data + b"\x00" * (params.segment_bytes - len(data))
    return [
        PlainPacket(segment_id, k, padded[k * params.n : (k + 1) * params.n])
        for k in range(params.m)
    ]


def _payload_matrix(generation: Sequence[PlainPacket], params: GenerationParams) -> np.ndarray:
    if len(generation) != params.m:
        raise ValueError(
            f"generation incomplete: {len(generation)} packets, expected {params.m}"
        )
    seg = generation[0].segment_id
    rows = np.zeros((params.m, params.n), dtype=np.uint8)
    seen = set()
    for pkt in generation:
        if pkt.segment_id != seg:
            raise ValueError("generation mixes packets from different segments")
        if not (0 <= pkt.index < params.m) or pkt.index in seen:
            raise ValueError(f"bad or duplicate packet index {pkt.index}")
        if len(pkt.payload) != params.n:
            raise ValueError(f"payload of packet {pkt.index} is not n={params.n} bytes")
        seen.add(pkt.index)
        rows[pkt.index] = np.frombuffer(pkt.payload, dtype=np.uint8)
    return rows


def draw_coefficients(m: int, rng: np.random.Generator) -> np.ndarray:
    # all-zero draws are discarded and redrawn
    while True:
        c = rng.integers(0, 256, m, dtype=np.uint8)
        if c.any():
            return c


def encode_matrix(
    segment_id: int, matrix: np.ndarray, rng: np.random.Generator
) -> CodedPacket:
    coeff = draw_coefficients(matrix.shape[0], rng)
    return CodedPacket(segment_id, coeff, gf256.gf_dot(coeff, matrix))


def encode(generation: Sequence[PlainPacket], rng: np.random.Generator,
           params: GenerationParams | None = None) -> CodedPacket:
    """Draw a uniform nonzero coefficient vector and mix the generation."""
    if params is None:
        if not generation:
            raise ValueError("cannot encode an empty generation")
        params = GenerationParams(m=len(generation), n=len(generation[0].payload))
    matrix = _payload_matrix(generation, params)
    return encode_matrix(generation[0].segment_id, matrix, rng)


class DecoderState:
    """Progressive Gaussian elimination for one generation.

    Rows are kept reduced ([coefficients | payload], unit pivots, zeros
    above and below each pivot), so one insert costs O(m(n+m)) row
    operations and extraction is a read-off.
    """

    def __init__(self, segment_id: int, params: GenerationParams):
        self.segment_id = segment_id
        self.params = params
        self.rows = np.zeros((params.m, params.m + params.n), dtype=np.uint8)
        self.pivots: dict[int, int] = {}  # pivot column -> row slot

    @property
    def rank(self) -> int:
        return len(self.pivots)

    @property
    def complete(self) -> bool:
        return self.rank == self.params.m

    def missing_dimensions(self) -> int:
        return self.params.m - self.rank

    @classmethod
    def from_plain(cls, generation: Sequence[PlainPacket],
                   params: GenerationParams) -> "DecoderState":
        """Seed a full-rank state from the original packets.

        Rows are [e_k | payload_k]; recoding from this state draws the
        same distribution as encoding the generation afresh.
        """
        state = cls(generation[0].segment_id, params)
        matrix = _payload_matrix(generation, params)
        for k in range(params.m):
            state.rows[k, k] = 1
            state.rows[k, params.m :] = matrix[k]
            state.pivots[k] = k
        return state

    def insert(self, packet: CodedPacket) -> bool:
        """Reduce a packet against held rows; True iff it was innovative."""
        m, n = self.params.m, self.params.n
        if packet.segment_id != self.segment_id:
            raise ValueError(
                f"packet for segment {packet.segment_id} fed to decoder of "
                f"segment {self.segment_id}"
            )
        if len(packet.coefficients) != m or len(packet.payload) != n:
            raise ValueError("coded packet shape does not match generation params")
        work = np.empty(m + n, dtype=np.uint8)
        work[:m] = packet.coefficients
        work[m:] = packet.payload
        for col, slot in self.pivots.items():
            c = work[col]
            if c:
                work ^= gf256.MUL[c, self.rows[slot]]
        lead = -1
        for col in range(m):
            if work[col]:
                lead = col
                break
        if lead < 0:
            return False
        work = gf256.MUL[gf256.INV[work[lead]], work]
        for slot in self.pivots.values():
            c = self.rows[slot][lead]
            if c:
                self.rows[slot] ^= gf256.MUL[c, work]
        slot = self.rank
        self.rows[slot] = work
        self.pivots[lead] = slot
        return True

    def extract(self) -> list[PlainPacket]:
        m, n = self.params.m, self.params.n
        if not self.complete:
            raise ValueError(
                f"segment {self.segment_id} not decodable yet: rank "
                f"{self.rank} of {m}"
            )
        out = []
        for k in range(m):
            row = self.rows[self.pivots[k]]
            out.append(PlainPacket(self.segment_id, k, row[m:].tobytes()))
        return out


def recode(state: DecoderState, rng: np.random.Generator) -> CodedPacket:
    """Uniform random combination of the rows a device currently holds."""
    if state.rank == 0:
        raise ValueError("cannot recode from a decoder with no packets")
    m = state.params.m
    while True:
        w = rng.integers(0, 256, state.rank, dtype=np.uint8)
        if w.any():
            break
    row = gf256.gf_dot(w, state.rows[: state.rank])
    return CodedPacket(state.segment_id, row[:m].copy(), row[m:].copy())


def bench(m_values: Iterable[int], n: int, seconds: float,
          seed: int = 0) -> list[dict]:
    """Encode/decode throughput per generation size, payload megabits per second."""
    rows = []
    rng = np.random.default_rng(seed)
    for m in m_values:
        params = GenerationParams(m=m, n=n)
        matrix = rng.integers(0, 256, (m, n), dtype=np.uint8)

        count = 0
        t0 = time.perf_counter()
        while time.perf_counter() - t0 < seconds:
            for _ in range(m):
                encode_matrix(0, matrix, rng)
            count += 1
        enc_dt = time.perf_counter() - t0
        enc_mbps = count * m * n * 8 / enc_dt / 1e6

        # pre-draw coded batches so decode timing excludes encoding
        batches = []
        for _ in range(24):
            batches.append([encode_matrix(0, matrix, rng) for _ in range(m + 8)])
        count = 0
        t0 = time.perf_counter()
        while time.perf_counter() - t0 < seconds:
            state = DecoderState(0, params)
            for pkt in batches[count % len(batches)]:
                if state.insert(pkt) and state.complete:
                    break
            state.extract()
            count += 1
        dec_dt = time.perf_counter() - t0
        dec_mbps = count * m * n * 8 / dec_dt / 1e6
        rows.append({"m": m, "encode_mbps": enc_mbps, "decode_mbps": dec_mbps})
    return rows
