"""Cooperative download protocols over the event simulator.

A group shares one file split into coded generations ("segments").  A
scheduler decides which device pulls each segment over cellular, and a
local dissemination protocol spreads downloaded segments on the shared
medium:

  microcast        adaptive min-backlog assignment + MicroNC-P2, the
                   network-coded pseudo-broadcast protocol (overheard
                   coded packets count)
  bittorrent_pull  swarm-style unicast pulls; plain segments are only
                   useful when fully received from an addressed Piece,
                   so overhearing earns nothing
  r2_push          receipt-triggered pushing of recombinations with
                   brake messages once a receiver decodes
  none             every cellular device downloads the whole file alone

Decoder bookkeeping runs the real GF(256) elimination on coefficient
vectors; the carried payload column is 1 byte wide while all metered
sizes use the configured wire packet size (rank dynamics and byte
accounting are exact, video content itself is not simulated).
"""

from __future__ import annotations

import math
from collections import OrderedDict, deque
from dataclasses import dataclass

import numpy as np

from .netsim import (
    ADVERTISEMENT,
    BITFIELD,
    BRAKE,
    CODED_DATA,
    CONTROL_BYTES,
    HAVE,
    NOTIFICATION,
    PIECE,
    PIECE_REQUEST,
    REQUEST,
    Message,
    SimConfig,
    Simulator,
)
from .rlnc import DecoderState, GenerationParams, PlainPacket, recode

PROTO_MICROCAST = "microcast"
PROTO_BITTORRENT = "bittorrent_pull"
PROTO_R2 = "r2_push"
PROTO_NONE = "none"
PROTOCOLS = (PROTO_MICROCAST, PROTO_BITTORRENT, PROTO_R2, PROTO_NONE)

ASSIGN_ADAPTIVE = "adaptive"
ASSIGN_STATIC = "static"

_MD = "md"   # payload tag for scheduler control traffic


@dataclass
class ProtocolConfig:
    protocol: str = PROTO_MICROCAST
    file_bytes: int = 9_930_000
    m: int = 25
    n: int = 900
    backlog_limit: int = 3          # K, assignments in flight per device
    advert_period_s: float = 0.1
    recovery_timeout_s: float = 2.0
    video_kbps: float = 500.0       # playback clock for request priority
    delta: float = 0.03             # R2 redundancy fraction
    assignment: str = ASSIGN_ADAPTIVE
    initiator: int = 0

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.assignment not in (ASSIGN_ADAPTIVE, ASSIGN_STATIC):
            raise ValueError(f"unknown assignment mode {self.assignment!r}")
        if self.file_bytes <= 0 or self.backlog_limit <= 0:
            raise ValueError("file_bytes and backlog_limit must be positive")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta outside [0, 1]")

    @property
    def segment_bytes(self) -> int:
        return self.m * self.n

    @property
    def n_segments(self) -> int:
        return -(-self.file_bytes // self.segment_bytes)

    @property
    def coded_bytes(self) -> int:
        return GenerationParams(self.m, self.n).coded_wire_bytes

    @property
    def piece_bytes(self) -> int:
        return CONTROL_BYTES + self.segment_bytes

    def bitfield_bytes(self) -> int:
        return CONTROL_BYTES + -(-self.n_segments // 8)

    @property
    def push_cap_extra(self) -> int:
        return math.ceil(self.delta * self.m)


@dataclass
class Metrics:
    protocol: str
    n_devices: int
    file_bytes: int
    n_segments: int
    completion_s: list
    complete: bool
    duration_s: float
    local_bytes: int
    local_data_bytes: int
    local_control_bytes: int
    bytes_by_kind: dict
    count_by_kind: dict
    per_device_rate_bps: list
    avg_rate_bps: float


@dataclass
class RunResult:
    metrics: Metrics
    sim: Simulator
    nodes: list
    scheduler: object


def _math_params(m: int) -> GenerationParams:
    # 1-byte payload column: same coefficient elimination, tiny state
    return GenerationParams(m, 1)


def _full_state(segment: int, params: GenerationParams) -> DecoderState:
    packets = [PlainPacket(segment, k, bytes(params.n)) for k in range(params.m)]
    return DecoderState.from_plain(packets, params)


class DownloadAgent:
    """Per-device cellular side: executes assignments, reports feedback."""

    def __init__(self, sim, device, proto, scheduler, node):
        self.sim = sim
        self.device = device
        self.proto = proto
        self.scheduler = scheduler
        self.node = node
        # owned until the ack: blocks retried copies of the current
        # assignment but admits a post-failure reassignment (the ack
        # always lands first, the medium is FIFO)
        self.active = set()
        self.unacked = {}                 # segment -> success, retried feedback
        self._queued = set()              # feedback copies sitting in the medium

    def on_assign(self, segment: int) -> None:
        if segment in self.active:
            return
        self.active.add(segment)
        self.sim.modems[self.device].download(
            segment, self.proto.segment_bytes, self._downloaded)

    def _downloaded(self, segment: int, success: bool) -> None:
        self.sim.log("feedback", self.device, segment=segment,
                     nbytes=int(success))
        if self.scheduler.wants_feedback:
            self.unacked[segment] = success
            self._send_feedback(segment)
        else:
            self.scheduler.on_feedback(self.device, segment, success)
        if success and self.node is not None:
            self.node.on_cellular_segment(segment)

    def _send_feedback(self, segment: int) -> None:
        if segment not in self.unacked:
            return
        if self.device == self.scheduler.device:
            success = self.unacked.pop(segment)
            self.sim.schedule(0.0, self.scheduler.on_feedback,
                              self.device, segment, success)
            return
        if segment not in self._queued:
            self._queued.add(segment)

            def build():
                self._queued.discard(segment)
                if segment not in self.unacked:
                    return None   # acked while waiting for the medium
                return Message(NOTIFICATION, self.device, self.scheduler.device,
                               segment, CONTROL_BYTES,
                               payload=(_MD, "feedback", self.unacked[segment]))

            self.sim.medium.submit(build)
        self.sim.schedule(self.proto.recovery_timeout_s,
                          self._send_feedback, segment)

    def on_ack(self, segment: int) -> None:
        self.unacked.pop(segment, None)
        self.active.discard(segment)

    def on_message(self, msg: Message) -> None:
        if msg.dst != self.device:
            return
        tag = msg.payload
        if tag[1] == "assign":
            self.on_assign(msg.segment)
        elif tag[1] == "ack":
            self.on_ack(msg.segment)


class MicroDownloadScheduler:
    """Min-backlog segment assignment with failure reassignment.

    Runs on the initiating device; assignments and acks ride the local
    medium as control messages and are retried until acknowledged
    (a feedback acknowledges its assignment).
    """

    wants_feedback = True

    def __init__(self, sim, proto, agents, cellular_devices):
        self.sim = sim
        self.proto = proto
        self.device = proto.initiator
        self.agents = agents
        self.cellular = list(cellular_devices)
        self.unassigned = deque(range(proto.n_segments))
        self.backlog = {d: 0 for d in self.cellular}
        self.assigned = {}                # segment -> device, awaiting feedback
        self.downloaded_by = {}
        self.failures = 0
        self._queued = set()              # assignment copies in the medium

    def start(self) -> None:
        self._fill()

    def _fill(self) -> None:
        while self.unassigned:
            device = min(self.cellular, key=lambda d: (self.backlog[d], d))
            if self.backlog[device] >= self.proto.backlog_limit:
                return
            self._assign(self.unassigned.popleft(), device)

    def _assign(self, segment: int, device: int) -> None:
        self.assigned[segment] = device
        self.backlog[device] += 1
        self.sim.log("assign", self.device, segment=segment, peer=device)
        self._send_assign(segment, device)

    def _send_assign(self, segment: int, device: int) -> None:
        if self.assigned.get(segment) != device:
            return   # feedback arrived, stop retrying
        if device == self.device:
            self.sim.schedule(0.0, self.agents[device].on_assign, segment)
        elif segment not in self._queued:
            self._queued.add(segment)

            def build():
                self._queued.discard(segment)
                if self.assigned.get(segment) != device:
                    return None   # resolved while waiting for the medium
                return Message(NOTIFICATION, self.device, device, segment,
                               CONTROL_BYTES, payload=(_MD, "assign"))

            self.sim.medium.submit(build)
        self.sim.schedule(self.proto.recovery_timeout_s,
                          self._send_assign, segment, device)

    def on_feedback(self, device: int, segment: int, success: bool) -> None:
        self._send_ack(device, segment)
        if self.assigned.get(segment) != device:
            return   # duplicate feedback
        del self.assigned[segment]
        self.backlog[device] -= 1
        if success:
            self.downloaded_by[segment] = device
        else:
            self.failures += 1
            # back of the queue; _fill hands it to whoever is least loaded,
            # which at the tail end is a fast idle device, not the reporter
            self.unassigned.append(segment)
        self._fill()

    def _send_ack(self, device: int, segment: int) -> None:
        if device == self.device:
            self.sim.schedule(0.0, self.agents[device].on_ack, segment)
        else:
            msg = Message(NOTIFICATION, self.device, device, segment,
                          CONTROL_BYTES, payload=(_MD, "ack"))
            self.sim.medium.submit(lambda: msg)

    def on_message(self, msg: Message) -> None:
        if msg.dst != self.device:
            return
        tag = msg.payload
        if tag[1] == "feedback":
            self.on_feedback(msg.src, msg.segment, tag[2])


class StaticScheduler:
    """Contiguous equal split seeded at t=0; no feedback, no reassignment."""

    wants_feedback = False

    def __init__(self, sim, proto, agents, cellular_devices):
        self.sim = sim
        self.device = proto.initiator
        self.cellular = list(cellular_devices)
        self.agents = agents
        self.proto = proto
        self.downloaded_by = {}
        self.failures = 0

    def start(self) -> None:
        total = self.proto.n_segments
        share = total / len(self.cellular)
        for k, device in enumerate(self.cellular):
            lo, hi = round(k * share), round((k + 1) * share)
            for segment in range(lo, hi):
                self.agents[device].on_assign(segment)

    def on_feedback(self, device, segment, success):
        if success:
            self.downloaded_by[segment] = device
        else:
            self.failures += 1

    def on_message(self, msg: Message) -> None:
        if msg.dst == self.device and msg.payload[1] == "feedback":
            self.on_feedback(msg.src, msg.segment, msg.payload[2])


class BaseNode:
    """Shared per-device protocol state: decoders, completion clock."""

    def __init__(self, sim, device, proto):
        self.sim = sim
        self.device = device
        self.proto = proto
        self.params = _math_params(proto.m)
        self.neighbors = sim.config.overlay_neighbors(device)
        self.decoders: dict = {}
        self.complete: set = set()
        self.completion_time: float | None = None

    @property
    def done(self) -> bool:
        return len(self.complete) >= self.proto.n_segments

    def rank(self, segment: int) -> int:
        state = self.decoders.get(segment)
        return 0 if state is None else state.rank

    def _decoder(self, segment: int) -> DecoderState:
        state = self.decoders.get(segment)
        if state is None:
            state = DecoderState(segment, self.params)
            self.decoders[segment] = state
        return state

    def _mark_complete(self, segment: int) -> None:
        if segment in self.complete:
            return
        self.complete.add(segment)
        self.sim.note_progress()
        if self.done and self.completion_time is None:
            self.completion_time = self.sim.now

    def _own_segment(self, segment: int) -> None:
        self.decoders[segment] = _full_state(segment, self.params)
        self._mark_complete(segment)

    def _insert(self, segment: int, packet) -> bool:
        state = self._decoder(segment)
        innovative = state.insert(packet)
        if innovative:
            self.sim.note_progress()
        if state.complete:
            self._mark_complete(segment)
        return innovative

    def _recode_messages(self, segment, count, dst, kind=CODED_DATA):
        state = self.decoders.get(segment)
        if state is None or state.rank == 0:
            return []
        out = []
        for _ in range(count):
            pkt = recode(state, self.sim.rng)
            out.append(Message(kind, self.device, dst, segment,
                               self.proto.coded_bytes, payload=pkt))
        return out

    def missing(self) -> list:
        return [s for s in range(self.proto.n_segments) if s not in self.complete]


class MicroNCP2Node(BaseNode):
    """Network-coded pseudo-broadcast dissemination.

    Freshly downloaded segments are pushed (m coded packets) to one
    random neighbor before being advertised; everyone credits every
    overheard coded packet.  Requests carry missing dimensions, the
    server coalesces simultaneous requests for a segment and answers
    with max(dims) packets plus per-requester notifications.
    """

    def __init__(self, sim, device, proto):
        super().__init__(sim, device, proto)
        self.advert_pending: list = []
        self.advert_timer_armed = False
        self.source_of: dict = {}         # segment -> device to ask
        self.in_flight: dict = {}         # segment -> request sent time
        self.pending: "OrderedDict" = OrderedDict()   # segment -> {req: dims}
        self.serve_job_queued = False
        self.requests_sent = 0
        self._arrivals = 0
        self.highest_heard = -1           # largest segment id seen anywhere
        sim.schedule(proto.recovery_timeout_s, self._recovery_tick)

    # ---- cellular side

    def on_cellular_segment(self, segment: int) -> None:
        self._own_segment(segment)
        self._note_heard(segment)
        if self.neighbors:
            target = self.neighbors[int(self.sim.rng.integers(len(self.neighbors)))]
            self.sim.medium.submit(
                lambda: self._recode_messages(segment, self.proto.m, target))
            self.sim.log("push", self.device, segment=segment, peer=target,
                         nbytes=self.proto.m)
        self.advert_pending.append(segment)
        self._arm_advert_timer()

    def _note_heard(self, segment: int) -> None:
        if segment > self.highest_heard:
            self.highest_heard = segment

    # ---- advertisement batching

    def _arm_advert_timer(self) -> None:
        if not self.advert_timer_armed:
            self.advert_timer_armed = True
            self.sim.schedule(self.proto.advert_period_s, self._advert_tick)

    def _advert_tick(self) -> None:
        self.advert_timer_armed = False
        if self.advert_pending:
            self.sim.medium.submit(self._build_adverts)
            self._arm_advert_timer()

    def _build_adverts(self):
        msgs = [Message(ADVERTISEMENT, self.device, None, s, CONTROL_BYTES)
                for s in self.advert_pending]
        self.advert_pending.clear()
        return msgs

    # ---- requesting

    def _consider_request(self, segment: int, target: int | None = None) -> None:
        if self.rank(segment) >= self.proto.m or segment in self.in_flight:
            return
        if target is None:
            target = self.source_of.get(segment)
        if target is None:
            return
        dims = self.proto.m - self.rank(segment)
        self.in_flight[segment] = self.sim.now
        self.requests_sent += 1
        msg = Message(REQUEST, self.device, target, segment,
                      CONTROL_BYTES, dims=dims)
        self.sim.medium.submit(lambda: msg)
        self.sim.log("request", self.device, segment=segment, peer=target,
                     nbytes=dims)

    def _recovery_tick(self) -> None:
        now = self.sim.now
        stale = [s for s, t in self.in_flight.items()
                 if now - t >= self.proto.recovery_timeout_s]
        for segment in stale:
            del self.in_flight[segment]
        for segment in self.missing():
            if segment in self.in_flight:
                continue
            probe = None
            if segment not in self.source_of:
                # Never heard of it.  Only segments below the high-water
                # mark are worth probing (their advertisement was plausibly
                # lost); the tail above it has not been downloaded by anyone
                # yet, and probing it every tick would flood the medium.
                if segment > self.highest_heard or not self.neighbors:
                    continue
                # round robin, without pinning the guess, so the next tick
                # tries someone else
                k = segment + int(now / self.proto.recovery_timeout_s)
                probe = self.neighbors[k % len(self.neighbors)]
            self._consider_request(segment, probe)
        self.sim.schedule(self.proto.recovery_timeout_s, self._recovery_tick)

    # ---- serving

    def _ensure_serve_job(self) -> None:
        if not self.serve_job_queued and self.pending:
            self.serve_job_queued = True
            self.sim.medium.submit(self._build_serve)

    def _playback_head(self) -> float:
        bps = self.proto.video_kbps * 1e3
        return self.sim.now * bps / 8.0 / self.proto.segment_bytes

    def _build_serve(self):
        self.serve_job_queued = False
        head = self._playback_head()
        while self.pending:
            segment = min(self.pending,
                          key=lambda s: (s - head, self.pending[s]["seq"]))
            group = self.pending.pop(segment)
            dims = max(group["dims"].values())
            state = self.decoders.get(segment)
            if dims <= 0 or state is None or state.rank == 0:
                continue
            first = group["order"][0]
            msgs = self._recode_messages(segment, dims, first)
            for requester in group["order"]:
                msgs.append(Message(NOTIFICATION, self.device, requester,
                                    segment, CONTROL_BYTES))
            self.sim.log("serve", self.device, segment=segment, peer=first,
                         nbytes=dims)
            self._ensure_serve_job()
            return msgs
        return None

    # ---- message handling

    def on_message(self, msg: Message) -> None:
        if msg.kind == CODED_DATA:
            self._note_heard(msg.segment)
            self.source_of.setdefault(msg.segment, msg.src)
            self._insert(msg.segment, msg.payload)
            if self.rank(msg.segment) >= self.proto.m:
                self.in_flight.pop(msg.segment, None)
            return
        if msg.kind == ADVERTISEMENT:
            if msg.src != self.device:
                self._note_heard(msg.segment)
                self.source_of[msg.segment] = msg.src
                self._consider_request(msg.segment)
            return
        if msg.kind == NOTIFICATION:
            if isinstance(msg.payload, tuple) and msg.payload[0] == _MD:
                return   # scheduler traffic, not ours
            self._note_heard(msg.segment)
            self.source_of[msg.segment] = msg.src
            if msg.dst == self.device:
                self.in_flight.pop(msg.segment, None)
            self._consider_request(msg.segment)
            return
        if msg.kind == REQUEST and msg.dst == self.device:
            self._arrivals += 1
            entry = self.pending.get(msg.segment)
            if entry is None:
                entry = {"dims": {}, "order": [], "seq": self._arrivals}
                self.pending[msg.segment] = entry
            if msg.src not in entry["dims"]:
                entry["order"].append(msg.src)
            entry["dims"][msg.src] = msg.dims   # coalescing replaces
            self._ensure_serve_job()


class BitTorrentPullNode(BaseNode):
    """Unicast swarm: Haves announce, Pieces answer addressed requests.

    Overheard traffic is never credited; a plain segment only counts
    when the full Piece arrives addressed to this device.
    """

    def __init__(self, sim, device, proto):
        super().__init__(sim, device, proto)
        self.peers_have: dict = {d: set() for d in self.neighbors}
        self.in_flight: dict = {}         # segment -> (peer, sent time)
        self.pending: "OrderedDict" = OrderedDict()   # (req, seg) -> None
        self.serve_job_queued = False
        self.bitfield_queued = False
        self.last_heard = None            # carrier sense: last rx of any kind
        sim.schedule(0.0, self._send_bitfields)
        sim.schedule(proto.recovery_timeout_s, self._recovery_tick)

    def on_cellular_segment(self, segment: int) -> None:
        self._own_segment(segment)
        self._announce(segment)

    def _announce(self, segment: int) -> None:
        msgs = [Message(HAVE, self.device, d, segment, CONTROL_BYTES)
                for d in self.neighbors]
        if msgs:
            self.sim.medium.submit(lambda: msgs)

    def _send_bitfields(self) -> None:
        if self.bitfield_queued or not self.neighbors:
            return
        self.bitfield_queued = True

        def build():
            self.bitfield_queued = False
            return [Message(BITFIELD, self.device, d, None,
                            self.proto.bitfield_bytes(),
                            payload=frozenset(self.complete))
                    for d in self.neighbors]

        self.sim.medium.submit(build)

    def _consider_request(self, segment: int, peer: int) -> None:
        if segment in self.complete or segment in self.in_flight:
            return
        self.in_flight[segment] = (peer, self.sim.now)
        msg = Message(PIECE_REQUEST, self.device, peer, segment, CONTROL_BYTES)
        self.sim.medium.submit(lambda: msg)
        self.sim.log("request", self.device, segment=segment, peer=peer)

    def _recovery_tick(self) -> None:
        now = self.sim.now
        # Carrier sense: while traffic is still flowing the answer to a
        # pending request may simply be queued behind it, and a blind
        # re-request would buy a duplicate Piece.  The medium is FIFO, so
        # a full quiet window proves everything older has drained.
        quiet = self.last_heard is None or \
            now - self.last_heard >= self.proto.recovery_timeout_s
        if quiet:
            for segment, (peer, t) in list(self.in_flight.items()):
                if now - t >= self.proto.recovery_timeout_s:
                    del self.in_flight[segment]
                    self._consider_request(segment, peer)
        for segment in self.missing():
            if segment not in self.in_flight:
                for peer, have in self.peers_have.items():
                    if segment in have:
                        self._consider_request(segment, peer)
                        break
        if quiet:
            self._send_bitfields()   # keep-alive, covers lost Haves
        self.sim.schedule(self.proto.recovery_timeout_s, self._recovery_tick)

    def _ensure_serve_job(self) -> None:
        if not self.serve_job_queued and self.pending:
            self.serve_job_queued = True
            self.sim.medium.submit(self._build_piece)

    def _build_piece(self):
        self.serve_job_queued = False
        while self.pending:
            requester, segment = next(iter(self.pending))
            del self.pending[(requester, segment)]
            if segment not in self.complete:
                continue
            self._ensure_serve_job()
            self.sim.log("serve", self.device, segment=segment, peer=requester)
            return Message(PIECE, self.device, requester, segment,
                           self.proto.piece_bytes)
        return None

    def on_message(self, msg: Message) -> None:
        self.last_heard = self.sim.now
        if msg.dst != self.device:
            return   # nothing is credited from overhearing
        if msg.kind == HAVE:
            self.peers_have[msg.src].add(msg.segment)
            self._consider_request(msg.segment, msg.src)
        elif msg.kind == BITFIELD:
            self.peers_have[msg.src] |= msg.payload
            for segment in sorted(msg.payload):
                self._consider_request(segment, msg.src)
        elif msg.kind == PIECE_REQUEST:
            key = (msg.src, msg.segment)
            if key not in self.pending:   # server-side dedupe
                self.pending[key] = None
                self._ensure_serve_job()
        elif msg.kind == PIECE:
            self.in_flight.pop(msg.segment, None)
            if msg.segment not in self.complete:
                self._own_segment(msg.segment)
                self._announce(msg.segment)


class R2PushNode(BaseNode):
    """Receipt-triggered pushing with brakes and a pull-based safety net.

    Every received packet of a segment queues one recombination push to
    each overlay neighbor; a stream stops at rank + ceil(delta*m)
    unsolicited pushes or when the neighbor's Brake arrives.  Stalled
    receivers explicitly re-request missing dimensions; those solicited
    packets are tracked separately from the push cap.
    """

    def __init__(self, sim, device, proto):
        super().__init__(sim, device, proto)
        self.pushed: dict = {}            # (segment, neighbor) -> count
        self.braked: set = set()          # (segment, neighbor)
        self.brake_sent: set = set()
        self.last_source: dict = {}
        self.last_rank_change: dict = {}
        self.recovery_tries: dict = {}    # segment -> requests since progress
        self.solicited_served = 0
        sim.schedule(proto.recovery_timeout_s, self._recovery_tick)

    def on_cellular_segment(self, segment: int) -> None:
        self._own_segment(segment)
        self._send_brakes(segment)
        # spend the whole redundancy budget up front; the cap gate stops
        # the stream anyway once a brake lands
        for _ in range(self.proto.m + self.proto.push_cap_extra):
            self._queue_pushes(segment)

    def _send_brakes(self, segment: int) -> None:
        if segment in self.brake_sent:
            return
        self.brake_sent.add(segment)
        msgs = [Message(BRAKE, self.device, d, segment, CONTROL_BYTES)
                for d in self.neighbors]
        if msgs:
            self.sim.medium.submit(lambda: msgs)
        self.sim.log("brake_sent", self.device, segment=segment)

    def _queue_pushes(self, segment: int) -> None:
        for neighbor in self.neighbors:
            self.sim.medium.submit(
                lambda n=neighbor: self._build_push(segment, n))

    def _build_push(self, segment: int, neighbor: int):
        if (segment, neighbor) in self.braked:
            return None
        rank = self.rank(segment)
        if rank == 0:
            return None
        cap = rank + self.proto.push_cap_extra
        done = self.pushed.get((segment, neighbor), 0)
        if done >= cap:
            return None
        self.pushed[(segment, neighbor)] = done + 1
        self.sim.log("push", self.device, segment=segment, peer=neighbor)
        return self._recode_messages(segment, 1, neighbor)

    def _build_solicited(self, segment: int, neighbor: int, dims: int):
        msgs = self._recode_messages(segment, dims, neighbor)
        if msgs:
            self.solicited_served += dims
            self.sim.log("push_solicited", self.device, segment=segment,
                         peer=neighbor, nbytes=dims)
        return msgs

    def _recovery_tick(self) -> None:
        # Pull-based rescue for streams that started but then stalled (all
        # remaining pushes lost).  Segments at rank 0 are left to the push
        # mechanism itself; requesting those blindly would turn every sender
        # into an on-demand server and swamp the medium at startup.
        now = self.sim.now
        for segment in self.missing():
            rank = self.rank(segment)
            if rank == 0:
                continue
            stamp = self.last_rank_change.get(segment)
            if stamp is not None and now - stamp < self.proto.recovery_timeout_s:
                continue
            target = self.last_source.get(segment)
            if target is None:
                continue
            # The last source may be stuck in the very same subspace (its
            # recodes then never innovate), so repeated fruitless requests
            # rotate through the other neighbors until someone who holds
            # the missing dimensions is asked.
            tries = self.recovery_tries.get(segment, 0)
            self.recovery_tries[segment] = tries + 1
            if tries > 0 and self.neighbors:
                pool = [target] + [d for d in self.neighbors if d != target]
                target = pool[tries % len(pool)]
            dims = self.proto.m - rank
            self.last_rank_change[segment] = now
            msg = Message(REQUEST, self.device, target, segment,
                          CONTROL_BYTES, dims=dims)
            self.sim.medium.submit(lambda: msg)
            self.sim.log("request", self.device, segment=segment, peer=target,
                         nbytes=dims)
        self.sim.schedule(self.proto.recovery_timeout_s, self._recovery_tick)

    def on_message(self, msg: Message) -> None:
        if msg.dst != self.device:
            return   # infrastructure WiFi: no overhearing credit
        if msg.kind == CODED_DATA:
            segment = msg.segment
            self.last_source[segment] = msg.src
            before = self.rank(segment)
            self._insert(segment, msg.payload)
            if self.rank(segment) != before:
                self.last_rank_change[segment] = self.sim.now
                self.recovery_tries.pop(segment, None)
            if segment in self.complete:
                self._send_brakes(segment)
            else:
                self._queue_pushes(segment)
        elif msg.kind == BRAKE:
            self.braked.add((msg.segment, msg.src))
        elif msg.kind == REQUEST:
            self.sim.medium.submit(
                lambda: self._build_solicited(msg.segment, msg.src, msg.dims))


class NoCoopNode(BaseNode):
    """Standalone download of the entire file; never touches the medium."""

    def on_cellular_segment(self, segment: int) -> None:
        self._own_segment(segment)

    def on_message(self, msg: Message) -> None:
        pass


_NODE_CLASSES = {
    PROTO_MICROCAST: MicroNCP2Node,
    PROTO_BITTORRENT: BitTorrentPullNode,
    PROTO_R2: R2PushNode,
    PROTO_NONE: NoCoopNode,
}


def run_protocol(sim_config: SimConfig, proto: ProtocolConfig) -> RunResult:
    """Execute one cooperative download and report its metrics."""
    sim = Simulator(sim_config)
    n = sim_config.n
    cellular = [d for d in range(n) if sim_config.devices[d].has_cellular]
    if not cellular:
        raise ValueError("at least one device needs a cellular link")

    node_cls = _NODE_CLASSES[proto.protocol]
    nodes = [node_cls(sim, d, proto) for d in range(n)]

    if proto.protocol == PROTO_NONE:
        scheduler = None
        for d in cellular:
            agent_done = nodes[d].on_cellular_segment
            for segment in range(proto.n_segments):
                sim.modems[d].download(
                    segment, proto.segment_bytes,
                    lambda s, ok, fn=agent_done: ok and fn(s))
        for d in range(n):
            sim.attach(d, nodes[d].on_message)
        targets = [nodes[d] for d in cellular]
    else:
        if proto.initiator not in range(n):
            raise ValueError("initiator must be a group member")
        agents = {}
        sched_cls = (MicroDownloadScheduler
                     if proto.assignment == ASSIGN_ADAPTIVE else StaticScheduler)
        scheduler = sched_cls(sim, proto, agents, cellular)
        for d in cellular:
            agents[d] = DownloadAgent(sim, d, proto, scheduler, nodes[d])

        def dispatcher(device):
            agent = agents.get(device)
            node = nodes[device]

            def on_message(msg: Message) -> None:
                payload = msg.payload
                if (msg.kind == NOTIFICATION and isinstance(payload, tuple)
                        and payload and payload[0] == _MD):
                    if payload[1] == "feedback":
                        if device == scheduler.device:
                            scheduler.on_message(msg)
                    elif agent is not None:
                        agent.on_message(msg)
                    return
                node.on_message(msg)

            return on_message

        for d in range(n):
            sim.attach(d, dispatcher(d))
        sim.schedule(0.0, scheduler.start)
        targets = nodes

    def report() -> str:
        lines = []
        for node in nodes:
            miss = node.missing()
            if miss:
                shown = ", ".join(str(s) for s in miss[:8])
                more = "..." if len(miss) > 8 else ""
                lines.append(f"device {node.device}: {len(miss)} segments "
                             f"missing ({shown}{more})")
        if scheduler is not None and getattr(scheduler, "unassigned", None):
            lines.append(f"scheduler: {len(scheduler.unassigned)} unassigned")
        return "\n".join(lines)

    sim.stall_reporter = report
    sim.run(until=lambda: all(t.done for t in targets))
    return RunResult(compute_metrics(sim, proto, nodes), sim, nodes, scheduler)


def compute_metrics(sim: Simulator, proto: ProtocolConfig, nodes) -> Metrics:
    completion = [node.completion_time for node in nodes]
    finished = [c for c in completion if c is not None]
    if proto.protocol == PROTO_NONE:
        relevant = [c for node, c in zip(nodes, completion)
                    if sim.config.devices[node.device].has_cellular]
        complete = all(c is not None for c in relevant)
    else:
        complete = len(finished) == len(nodes)
    bits = proto.file_bytes * 8
    rates = [0.0 if c is None else bits / c for c in completion]
    usable = [r for r in rates if r > 0]
    meter = sim.meter
    return Metrics(
        protocol=proto.protocol,
        n_devices=sim.config.n,
        file_bytes=proto.file_bytes,
        n_segments=proto.n_segments,
        completion_s=completion,
        complete=complete,
        duration_s=max(finished) if finished else sim.now,
        local_bytes=meter.local_bytes_total,
        local_data_bytes=meter.data_bytes,
        local_control_bytes=meter.control_bytes,
        bytes_by_kind=dict(meter.bytes_by_kind),
        count_by_kind=dict(meter.count_by_kind),
        per_device_rate_bps=rates,
        avg_rate_bps=float(np.mean(usable)) if usable else 0.0,
    )
