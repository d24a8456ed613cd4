"""Event-driven model of a cooperating device group.

Each device owns an independent cellular downlink described by a
piecewise-constant rate trace; all devices share one local wireless
medium on which only one transmission is in the air at a time.  A local
transmission is addressed to a single destination but every other
device draws an independent reception with its own pair loss, so a
protocol may credit overheard packets or ignore them.

Topology modes:

  clique         true ad-hoc broadcast domain, one occupation per send
  pseudo_adhoc   infrastructure mode where the access point never
                 re-forwards (targets already overheard), so the cost
                 is the same as clique
  star           infrastructure mode with real relaying: a transmission
                 between two non-AP devices is charged a second medium
                 occupation

Jobs submitted to the medium materialize at grant time: the medium
calls the job back when the air is actually free, and the job may
return nothing (it was coalesced away or braked in the meantime).
Background load shrinks the usable medium capacity instead of
competing packet by packet.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

CONTROL_BYTES = 64

ADVERTISEMENT = "Advertisement"
REQUEST = "Request"
CODED_DATA = "CodedData"
NOTIFICATION = "Notification"
BITFIELD = "Bitfield"
HAVE = "Have"
PIECE_REQUEST = "PieceRequest"
PIECE = "Piece"
BRAKE = "Brake"
MESSAGE_KINDS = (
    ADVERTISEMENT, REQUEST, CODED_DATA, NOTIFICATION,
    BITFIELD, HAVE, PIECE_REQUEST, PIECE, BRAKE,
)
DATA_KINDS = frozenset({CODED_DATA, PIECE})

MODE_CLIQUE = "clique"
MODE_PSEUDO_ADHOC = "pseudo_adhoc"
MODE_STAR = "star"
MODES = (MODE_CLIQUE, MODE_PSEUDO_ADHOC, MODE_STAR)


class SimStalled(RuntimeError):
    """No progress for a full idle window while devices are incomplete."""

    def __init__(self, message: str, report: str = ""):
        super().__init__(message + ("\n" + report if report else ""))
        self.report = report


@dataclass(frozen=True)
class RateTrace:
    """Piecewise-constant link rate; the last piece holds forever."""

    times: tuple   # seconds, starting at 0, strictly increasing
    rates: tuple   # bits/s

    def __post_init__(self):
        if len(self.times) != len(self.rates) or not self.times:
            raise ValueError("times and rates must be equal-length, nonempty")
        if self.times[0] != 0.0:
            raise ValueError("trace must start at t=0")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("trace times must be strictly increasing")
        if any(r < 0 for r in self.rates):
            raise ValueError("rates must be nonnegative")

    @classmethod
    def constant(cls, bps: float) -> "RateTrace":
        return cls((0.0,), (float(bps),))

    @classmethod
    def from_kbps_points(cls, points) -> "RateTrace":
        pts = sorted((float(t), float(k) * 1e3) for t, k in points)
        return cls(tuple(t for t, _ in pts), tuple(r for _, r in pts))

    def rate_at(self, t: float) -> float:
        idx = 0
        for k, start in enumerate(self.times):
            if start <= t:
                idx = k
            else:
                break
        return self.rates[idx]

    def seconds_to_send(self, t0: float, nbits: float) -> float:
        """Time to push nbits starting at t0, integrating across pieces."""
        if nbits <= 0:
            return 0.0
        remaining = float(nbits)
        t = t0
        for k in range(len(self.times)):
            if k + 1 < len(self.times) and self.times[k + 1] <= t:
                continue
            rate = self.rates[k]
            if k + 1 < len(self.times):
                span = self.times[k + 1] - max(t, self.times[k])
                if rate > 0 and remaining <= rate * span:
                    return max(t, self.times[k]) + remaining / rate - t0
                remaining -= rate * span
                t = self.times[k + 1]
            else:
                if rate <= 0:
                    return float("inf")
                return max(t, self.times[k]) + remaining / rate - t0
        raise AssertionError("unreachable")


@dataclass(eq=False)
class Message:
    kind: str
    src: int
    dst: int | None       # None addresses the whole group (control only)
    segment: int | None
    nbytes: int
    dims: int = 0
    payload: object = None

    def __post_init__(self):
        if self.kind not in MESSAGE_KINDS:
            raise ValueError(f"unknown message kind {self.kind!r}")
        if self.nbytes <= 0:
            raise ValueError("message size must be positive")


@dataclass
class DeviceSpec:
    cellular: RateTrace | None = None
    cell_fail_prob: float = 0.0
    cell_timeout: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.cell_fail_prob <= 1.0:
            raise ValueError("cell_fail_prob outside [0, 1]")
        if self.cell_timeout is not None and self.cell_timeout <= 0:
            raise ValueError("cell_timeout must be positive when set")

    @property
    def has_cellular(self) -> bool:
        return self.cellular is not None


@dataclass
class SimConfig:
    devices: list
    capacity_bps: float = 20e6
    background_bps: float = 0.0
    loss: object = 0.0         # scalar or (n, n) per ordered pair
    mode: str = MODE_PSEUDO_ADHOC
    ap: int | None = None
    seed: int = 0
    idle_window_s: float = 30.0
    max_time_s: float = 3600.0
    log_events: bool = False

    def __post_init__(self):
        n = len(self.devices)
        if n == 0:
            raise ValueError("need at least one device")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.background_bps >= self.capacity_bps:
            raise ValueError("background load must leave usable capacity")
        loss = np.asarray(self.loss, dtype=float)
        if loss.ndim == 0:
            loss = np.full((n, n), float(loss))
        if loss.shape != (n, n):
            raise ValueError(f"loss must be scalar or ({n},{n})")
        if ((loss < 0) | (loss > 1)).any():
            raise ValueError("loss outside [0, 1]")
        np.fill_diagonal(loss, 0.0)
        self.loss = loss
        if self.mode in (MODE_PSEUDO_ADHOC, MODE_STAR):
            if self.ap is None:
                self.ap = 0
            if not 0 <= self.ap < n:
                raise ValueError("ap must name a device in the group")
        else:
            self.ap = None

    @property
    def n(self) -> int:
        return len(self.devices)

    @property
    def effective_bps(self) -> float:
        return self.capacity_bps - self.background_bps

    def overlay_neighbors(self, device: int) -> list:
        """Devices a protocol treats as direct peers under this topology."""
        if self.mode == MODE_STAR:
            if device == self.ap:
                return [d for d in range(self.n) if d != device]
            return [self.ap]
        return [d for d in range(self.n) if d != device]


@dataclass(frozen=True)
class LogRecord:
    t: float
    event: str
    device: int
    kind: str | None = None
    segment: int | None = None
    nbytes: int = 0
    peer: int | None = None


class TrafficMeter:
    """Local-medium byte accounting; one count per transmission."""

    def __init__(self, n: int):
        self.local_bytes_total = 0
        self.bytes_by_kind: dict = {}
        self.count_by_kind: dict = {}
        self.tx_bytes = np.zeros(n, dtype=np.int64)
        self.rx_bytes = np.zeros(n, dtype=np.int64)

    def record_tx(self, msg: Message, occupations: int) -> None:
        nbytes = msg.nbytes * occupations
        self.local_bytes_total += nbytes
        self.bytes_by_kind[msg.kind] = self.bytes_by_kind.get(msg.kind, 0) + nbytes
        self.count_by_kind[msg.kind] = self.count_by_kind.get(msg.kind, 0) + occupations
        self.tx_bytes[msg.src] += nbytes

    def record_rx(self, device: int, msg: Message) -> None:
        self.rx_bytes[device] += msg.nbytes

    @property
    def data_bytes(self) -> int:
        return sum(v for k, v in self.bytes_by_kind.items() if k in DATA_KINDS)

    @property
    def control_bytes(self) -> int:
        return sum(v for k, v in self.bytes_by_kind.items() if k not in DATA_KINDS)


class CellularModem:
    """FIFO whole-segment downloader for one device.

    Per-segment failure is drawn when service starts and surfaces at
    min(completion, timeout); a download that would outlast the timeout
    fails at the timeout even without a drawn failure.
    """

    def __init__(self, sim: "Simulator", device: int, spec: DeviceSpec):
        self.sim = sim
        self.device = device
        self.spec = spec
        self.queue: deque = deque()
        self.busy = False

    def download(self, segment: int, nbytes: int, on_done: Callable) -> None:
        if not self.spec.has_cellular:
            raise RuntimeError(f"device {self.device} has no cellular link")
        self.queue.append((segment, nbytes, on_done))
        if not self.busy:
            self._serve()

    def _serve(self) -> None:
        if not self.queue:
            self.busy = False
            return
        self.busy = True
        segment, nbytes, on_done = self.queue.popleft()
        t0 = self.sim.now
        duration = self.spec.cellular.seconds_to_send(t0, nbytes * 8)
        failed = self.sim.rng.random() < self.spec.cell_fail_prob
        timeout = self.spec.cell_timeout
        if failed:
            finish = duration if timeout is None else min(duration, timeout)
            success = False
        elif timeout is not None and duration > timeout:
            finish, success = timeout, False
        else:
            finish, success = duration, True
        if finish == float("inf"):
            raise SimStalled(
                f"device {self.device} cellular rate is zero forever "
                f"(segment {segment} cannot complete)"
            )
        self.sim.log("cell_start", self.device, segment=segment, nbytes=nbytes)
        self.sim.schedule(finish, self._finish, segment, nbytes, on_done, success)

    def _finish(self, segment, nbytes, on_done, success) -> None:
        self.sim.log("cell_done" if success else "cell_fail",
                     self.device, segment=segment, nbytes=nbytes)
        self.sim.note_progress()
        on_done(segment, success)
        self._serve()


class LocalMedium:
    """The shared channel: grant-time job materialization, FIFO order."""

    def __init__(self, sim: "Simulator"):
        self.sim = sim
        self.queue: deque = deque()
        self.busy = False
        self.busy_intervals: list = []   # populated when log_events

    def occupations(self, msg: Message) -> int:
        cfg = self.sim.config
        if (cfg.mode == MODE_STAR and msg.src != cfg.ap
                and msg.dst is not None and msg.dst != cfg.ap):
            return 2   # relayed through the access point
        return 1

    def submit(self, build: Callable) -> None:
        """Queue a job; build() runs at grant and returns Message(s) or None."""
        self.queue.append(build)
        if not self.busy:
            self._grant()

    def _grant(self) -> None:
        if self.busy:
            return
        # hold the medium across build() calls: a job may submit more jobs
        # while it materializes and those must queue, not re-enter
        self.busy = True
        while self.queue:
            build = self.queue.popleft()
            out = build()
            if not out:
                continue
            msgs = [out] if isinstance(out, Message) else list(out)
            rate = self.sim.config.effective_bps
            offset = 0.0
            for msg in msgs:
                occ = self.occupations(msg)
                offset += msg.nbytes * 8 * occ / rate
                self.sim.schedule(offset, self._deliver, msg, occ)
            if self.sim.config.log_events:
                self.busy_intervals.append((self.sim.now, self.sim.now + offset))
            self.sim.schedule(offset, self._release)
            return
        self.busy = False

    def _deliver(self, msg: Message, occupations: int) -> None:
        sim = self.sim
        sim.meter.record_tx(msg, occupations)
        sim.log("tx", msg.src, kind=msg.kind, segment=msg.segment,
                nbytes=msg.nbytes * occupations, peer=msg.dst)
        loss = sim.config.loss[msg.src]
        for d in range(sim.config.n):
            if d == msg.src:
                continue
            received = sim.rng.random() >= loss[d]
            if not received:
                continue
            sim.meter.record_rx(d, msg)
            sim.log("rx", d, kind=msg.kind, segment=msg.segment,
                    nbytes=msg.nbytes, peer=msg.src)
            sim.note_progress()
            handler = sim.handlers[d]
            if handler is not None:
                handler(msg)

    def _release(self) -> None:
        self.busy = False
        self._grant()


class Simulator:
    """Single-threaded event loop; all randomness flows from config.seed."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.now = 0.0
        self.rng = np.random.default_rng(config.seed)
        self._heap: list = []
        self._seq = 0
        self.meter = TrafficMeter(config.n)
        self.medium = LocalMedium(self)
        self.modems = [CellularModem(self, d, spec)
                       for d, spec in enumerate(config.devices)]
        self.handlers: list = [None] * config.n
        self.events: list = []
        self._last_progress = 0.0
        self.stall_reporter: Callable | None = None

    def attach(self, device: int, on_message: Callable) -> None:
        self.handlers[device] = on_message

    def schedule(self, delay: float, fn: Callable, *args) -> None:
        if delay < 0:
            raise ValueError("cannot schedule into the past")
        self._seq += 1
        heapq.heappush(self._heap, (self.now + delay, self._seq, fn, args))

    def log(self, event: str, device: int, kind=None, segment=None,
            nbytes=0, peer=None) -> None:
        if self.config.log_events:
            self.events.append(LogRecord(self.now, event, device, kind,
                                         segment, nbytes, peer))

    def note_progress(self) -> None:
        self._last_progress = self.now

    def _anything_in_flight(self) -> bool:
        return self.medium.busy or any(m.busy for m in self.modems)

    def run(self, until: Callable | None = None) -> str:
        """Drain events; returns "done", "capped", or "drained".

        Raises SimStalled when nothing is in flight and no delivery or
        download has completed for a whole idle window.
        """
        cfg = self.config
        while self._heap:
            if until is not None and until():
                return "done"
            t, _, fn, args = heapq.heappop(self._heap)
            if t > cfg.max_time_s:
                return "capped"
            self.now = t
            if (self.now - self._last_progress > cfg.idle_window_s
                    and not self._anything_in_flight()):
                report = self.stall_reporter() if self.stall_reporter else ""
                raise SimStalled(
                    f"no progress for {cfg.idle_window_s:.0f}s at t={self.now:.1f}s",
                    report,
                )
            fn(*args)
        return "done" if until is not None and until() else "drained"
