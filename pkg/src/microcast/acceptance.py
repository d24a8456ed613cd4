"""Acceptance gate: nine measurable criteria over the whole toolkit.

Each evaluator returns a CriterionResult with the measured value, the
bound it is held to, and a verdict.  CSV-backed criteria read recipe
output from a results directory; the rest run inline.  The command line
`check` subcommand and the test suite both call these.
"""

from __future__ import annotations

import bisect
import os
import time
from dataclasses import dataclass

import numpy as np

from . import num, rlnc, scenarios
from .netsim import (BRAKE, CODED_DATA, MODE_CLIQUE, MODE_PSEUDO_ADHOC,
                     MODE_STAR, NOTIFICATION, PIECE, PIECE_REQUEST, REQUEST,
                     DeviceSpec, RateTrace, SimConfig)
from .protocols import (PROTO_BITTORRENT, PROTO_MICROCAST, PROTO_R2,
                        ProtocolConfig, run_protocol)


@dataclass
class CriterionResult:
    number: int
    name: str
    verdict: str                  # pass | fail | not run
    measured: str
    bound: str
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def _result(number, name, ok, measured, bound, detail="") -> CriterionResult:
    return CriterionResult(number, name, "pass" if ok else "fail",
                           measured, bound, detail)


def _not_run(number, name, bound, missing) -> CriterionResult:
    return CriterionResult(number, name, "not run", f"missing {missing}",
                           bound, "generate it with: microcast recipe "
                           f"{missing.split('.')[0].removesuffix('_agg')} --out DIR")


def _load_rows(results_dir: str, filename: str):
    path = os.path.join(results_dir, filename)
    if not os.path.exists(path):
        return None
    _, _, rows = scenarios.read_csv(path)
    return rows


# ------------------------------------------------------- 1: codec round trip

def _build_mul_table() -> np.ndarray:
    """Carry-less shift-and-add multiply, reduced mod the field polynomial.

    Built from scratch so the codec's own tables are not trusted here.
    """
    table = np.zeros((256, 256), dtype=np.uint8)
    for a in range(256):
        for b in range(a, 256):
            x, y, acc = a, b, 0
            while y:
                if y & 1:
                    acc ^= x
                x <<= 1
                if x & 0x100:
                    x ^= 0x11D
                y >>= 1
            table[a, b] = acc
            table[b, a] = acc
    return table


class _RankOracle:
    """Independent innovation judge: reduced basis over the coefficients."""

    def __init__(self, m: int, mul: np.ndarray):
        self.m = m
        self.mul = mul
        self.basis: list = []     # (lead column, reduced row)

    def offer(self, coeffs: np.ndarray) -> bool:
        v = coeffs.astype(np.uint8).copy()
        for lead, row in self.basis:
            c = v[lead]
            if c:
                v ^= self.mul[c, row]
        nz = np.flatnonzero(v)
        if nz.size == 0:
            return False
        lead = int(nz[0])
        inv = self._inverse(int(v[lead]))
        self.basis.append((lead, self.mul[inv, v]))
        return True

    def _inverse(self, a: int) -> int:
        row = self.mul[a]
        return int(np.flatnonzero(row == 1)[0])


def evaluate_codec_roundtrip(trips: int = 1000, seed: int = 7) -> CriterionResult:
    bound = "1000 byte-exact decodes, innovation flag == rank oracle, < 30 s"
    t0 = time.time()
    mul = _build_mul_table()
    params = rlnc.GenerationParams(m=25, n=900)
    rng = np.random.default_rng(seed)
    inserts = 0
    for trip in range(trips):
        data = rng.integers(0, 256, params.m * params.n, dtype=np.uint8).tobytes()
        plain = rlnc.split_segment(trip, data, params)
        state = rlnc.DecoderState(trip, params)
        oracle = _RankOracle(params.m, mul)
        while not state.complete:
            pkt = rlnc.encode(plain, rng, params)
            pkt = rlnc.CodedPacket.from_bytes(pkt.to_bytes())   # wire trip
            got = state.insert(pkt)
            want = oracle.offer(pkt.coefficients)
            inserts += 1
            if got != want:
                return _result(1, "codec-roundtrip", False,
                               f"innovation flag {got} vs oracle {want}",
                               bound, f"trip {trip}, insert {inserts}")
        decoded = b"".join(p.payload for p in state.extract())[: len(data)]
        if decoded != data:
            return _result(1, "codec-roundtrip", False,
                           f"decode mismatch on trip {trip}", bound)
    dt = time.time() - t0
    ok = dt < 30.0
    return _result(1, "codec-roundtrip", ok,
                   f"{trips} exact decodes, {inserts} verified inserts, {dt:.1f}s",
                   bound)


# ----------------------------------------------------- 2: codec throughput

def evaluate_codec_throughput(results_dir: str) -> CriterionResult:
    bound = "m=25 encode and decode >= 8 Mbps; both fall monotonically in m"
    rows = _load_rows(results_dir, "fig7b.csv")
    if rows is None:
        return _not_run(2, "codec-throughput", bound, "fig7b.csv")
    table = {int(r["m"]): (float(r["encode_mbps"]), float(r["decode_mbps"]))
             for r in rows}
    missing = [m for m in (16, 25, 32, 64) if m not in table]
    if missing:
        return _result(2, "codec-throughput", False,
                       f"rows missing for m={missing}", bound)
    enc25, dec25 = table[25]
    ms = sorted(table)
    enc_mono = all(table[a][0] > table[b][0] for a, b in zip(ms, ms[1:]))
    dec_mono = all(table[a][1] > table[b][1] for a, b in zip(ms, ms[1:]))
    ok = enc25 >= 8.0 and dec25 >= 8.0 and enc_mono and dec_mono
    detail = "" if ok else f"series {[(m, table[m]) for m in ms]}"
    return _result(2, "codec-throughput", ok,
                   f"m=25: encode {enc25:.1f} / decode {dec25:.1f} Mbps, "
                   f"monotone={'yes' if enc_mono and dec_mono else 'no'}",
                   bound, detail)


# ------------------------------------------------------- 3: solver vs oracle

def evaluate_solver_oracle(topologies: int = 20, seed: int = 417) -> CriterionResult:
    bound = "simulate within 10% of the exact allocation optimum, < 2 min"
    t0 = time.time()
    rng = np.random.default_rng(seed)
    worst, worst_case = 0.0, ""
    checked = 0
    for k in range(topologies):
        n = int(rng.integers(2, 5))
        loss_choices = [0.0, 0.1, 0.2]
        topo = num.Topology(
            cell_capacity=rng.uniform(0.4, 1.1, n),
            cell_loss=np.full(n, loss_choices[int(rng.integers(0, 3))]),
            local_capacity=rng.uniform(1.5, 6.0, (n, n)),
            local_loss=np.full((n, n), loss_choices[int(rng.integers(0, 3))]),
            gamma=1.0,
        )
        for policy in num.POLICIES:
            cfg = num.SolverConfig(policy=policy, iterations=1000,
                                   seeds=tuple(range(10)))
            got = num.simulate(topo, cfg).avg_rate
            want = num.centralized_oracle(topo, policy)
            rel = abs(got - want) / max(want, 1e-9)
            checked += 1
            if rel > worst:
                worst = rel
                worst_case = (f"topology {k} (n={n}) {policy}: "
                              f"simulate {got:.3f} vs optimum {want:.3f}")
    dt = time.time() - t0
    ok = worst <= 0.10 and dt < 120.0
    return _result(3, "solver-oracle", ok,
                   f"{checked} policy runs, worst deviation {worst:.1%}, {dt:.0f}s",
                   bound, worst_case if not ok else "")


# ------------------------------------------- 4: throughput vs group size

def _series(rows, policy, value="avg_rate_mean"):
    out = {}
    for r in rows:
        if r["policy"] == policy:
            out[int(r["n_devices"])] = float(r[value])
    return [out[k] for k in sorted(out)]


def _declines_after_threshold(values, last_start: int) -> bool:
    """True iff the tail is strictly decreasing from some index on.

    last_start is the largest allowed 0-based decline-start index.
    """
    for t in range(0, last_start + 1):
        tail = values[t:]
        if len(tail) >= 2 and all(b < a for a, b in zip(tail, tail[1:])):
            return True
    return False


def evaluate_group_size_shapes(results_dir: str) -> CriterionResult:
    bound = ("no_coop flat within 2%; unicast rises then strictly falls; "
             "lossless coded == plain; at 20% loss coded >= plain everywhere "
             "and plain declines after a threshold")
    rows_a = _load_rows(results_dir, "fig4a_agg.csv")
    rows_b = _load_rows(results_dir, "fig4b_agg.csv")
    if rows_a is None:
        return _not_run(4, "group-size-shapes", bound, "fig4a_agg.csv")
    if rows_b is None:
        return _not_run(4, "group-size-shapes", bound, "fig4b_agg.csv")
    problems = []

    flat_spread = 0.0
    for rows in (rows_a, rows_b):
        nc = _series(rows, num.NO_COOP)
        spread = (max(nc) - min(nc)) / max(nc)
        flat_spread = max(flat_spread, spread)
    if flat_spread > 0.02:
        problems.append(f"no_coop spread {flat_spread:.1%} > 2%")

    uni = _series(rows_a, num.UNICAST)
    peak = uni.index(max(uni))
    if not uni[1] > uni[0]:
        problems.append(f"unicast does not rise at first: {uni[0]:.3f} -> {uni[1]:.3f}")
    if not _declines_after_threshold(uni, last_start=len(uni) - 2):
        problems.append(f"unicast tail not strictly falling: {np.round(uni, 3)}")

    pb_a = np.array(_series(rows_a, num.PSEUDO_BROADCAST))
    plain_a = np.array(_series(rows_a, num.PSEUDO_BROADCAST_NO_NC))
    eq_gap = float(np.max(np.abs(pb_a - plain_a) / np.maximum(pb_a, 1e-9)))
    if eq_gap > 0.01:
        problems.append(f"lossless coded vs plain differ by {eq_gap:.2%}")

    pb_b = np.array(_series(rows_b, num.PSEUDO_BROADCAST))
    plain_b = np.array(_series(rows_b, num.PSEUDO_BROADCAST_NO_NC))
    margin = float(np.min(pb_b - plain_b * (1 - 0.005)))
    if margin < 0.0:
        problems.append("coded < plain at 20% loss")
    if not _declines_after_threshold(list(plain_b), last_start=len(plain_b) - 2):
        problems.append(f"plain curve never enters decline: {np.round(plain_b, 3)}")

    measured = (f"no_coop spread {flat_spread:.2%}; unicast peak N="
                f"{peak + 1}; lossless pair gap {eq_gap:.1e}; "
                f"loss margin {margin:+.3f}")
    return _result(4, "group-size-shapes", not problems, measured, bound,
                   "; ".join(problems))


# ------------------------------------------- 5: throughput vs local loss

def _loss_series(rows, policy):
    out = {}
    for r in rows:
        if r["policy"] == policy:
            out[float(r["p_local"])] = float(r["avg_rate_mean"])
    return [out[k] for k in sorted(out)], sorted(out)


def evaluate_loss_shapes(results_dir: str) -> CriterionResult:
    bound = ("every policy non-increasing in loss; coded >= plain >= unicast "
             "at loss > 0; coded-vs-plain gap at p=0.3 grows with group size")
    rows_3 = _load_rows(results_dir, "fig5a_agg.csv")
    rows_4 = _load_rows(results_dir, "fig5b_agg.csv")
    if rows_3 is None:
        return _not_run(5, "loss-shapes", bound, "fig5a_agg.csv")
    if rows_4 is None:
        return _not_run(5, "loss-shapes", bound, "fig5b_agg.csv")
    problems = []
    gaps = {}
    for label, rows in (("3", rows_3), ("4", rows_4)):
        curves = {}
        for policy in num.POLICIES:
            vals, ps = _loss_series(rows, policy)
            curves[policy] = vals
            if any(b > a * 1.002 for a, b in zip(vals, vals[1:])):
                problems.append(f"N={label} {policy} increases with loss: "
                                f"{np.round(vals, 3)}")
        pb, plain, uni = (curves[num.PSEUDO_BROADCAST],
                          curves[num.PSEUDO_BROADCAST_NO_NC],
                          curves[num.UNICAST])
        for k, p in enumerate(ps):
            if p <= 0:
                continue
            if not (pb[k] >= plain[k] * 0.995 and plain[k] >= uni[k] * 0.995):
                problems.append(f"N={label} ordering broken at p={p}: "
                                f"{pb[k]:.3f} / {plain[k]:.3f} / {uni[k]:.3f}")
        gaps[label] = pb[-1] - plain[-1]
    if not gaps["4"] > gaps["3"]:
        problems.append(f"gap at p=0.3: N=4 {gaps['4']:.3f} <= N=3 {gaps['3']:.3f}")
    measured = f"gap(p=0.3): N=3 {gaps['3']:.3f}, N=4 {gaps['4']:.3f}"
    return _result(5, "loss-shapes", not problems, measured, bound,
                   "; ".join(problems))


# ------------------------------------------------- 6: local traffic ratios

def evaluate_traffic_ratios(results_dir: str) -> CriterionResult:
    bound = ("pull-swarm/coded >= 2.5; push-star/coded >= 2.5; "
             "push clique > push star")
    rows = _load_rows(results_dir, "fig6b_agg.csv")
    if rows is None:
        return _not_run(6, "traffic-ratios", bound, "fig6b_agg.csv")
    ratio = {(r["protocol"], r["topology"]): float(r["traffic_ratio_mean"])
             for r in rows}
    try:
        mnc = ratio[(PROTO_MICROCAST, MODE_PSEUDO_ADHOC)]
        bt = ratio[(PROTO_BITTORRENT, MODE_PSEUDO_ADHOC)]
        r2s = ratio[(PROTO_R2, MODE_STAR)]
        r2c = ratio[(PROTO_R2, MODE_CLIQUE)]
    except KeyError as missing:
        return _result(6, "traffic-ratios", False,
                       f"row {missing} absent from fig6b_agg.csv", bound)
    checks = [bt / mnc >= 2.5, r2s / mnc >= 2.5, r2c > r2s]
    measured = (f"swarm/coded {bt / mnc:.2f}, push-star/coded {r2s / mnc:.2f}, "
                f"clique {r2c:.2f} vs star {r2s:.2f}")
    detail = "" if all(checks) else (
        f"ratios: coded {mnc:.3f}, swarm {bt:.3f}, star {r2s:.3f}, clique {r2c:.3f}")
    return _result(6, "traffic-ratios", all(checks), measured, bound, detail)


# --------------------------------------------- 7: download adaptivity

def evaluate_download_adaptivity(results_dir: str) -> CriterionResult:
    bound = "adaptive assignment completes >= 5x faster than a static split"
    rows = _load_rows(results_dir, "fig-microdownload_agg.csv")
    if rows is None:
        return _not_run(7, "download-adaptivity", bound,
                        "fig-microdownload_agg.csv")
    mean = {r["assignment"]: float(r["completion_s_mean"]) for r in rows}
    if "adaptive" not in mean or "static" not in mean:
        return _result(7, "download-adaptivity", False,
                       f"rows present: {sorted(mean)}", bound)
    speedup = mean["static"] / mean["adaptive"]
    return _result(7, "download-adaptivity", speedup >= 5.0,
                   f"static {mean['static']:.1f}s / adaptive "
                   f"{mean['adaptive']:.1f}s = {speedup:.2f}x", bound)


# --------------------------------------------- 8: congested medium sweep

def evaluate_congestion(results_dir: str) -> CriterionResult:
    bound = ("coded group rate non-decreasing to 4 devices and >= 3x the "
             "standalone rate from 4 on; pull swarm strictly decreasing "
             "after some count <= 5")
    rows = _load_rows(results_dir, "fig-congested_agg.csv")
    if rows is None:
        return _not_run(8, "congestion-behavior", bound, "fig-congested_agg.csv")
    curve: dict = {}
    for r in rows:
        curve.setdefault(r["protocol"], {})[int(r["n_devices"])] = \
            float(r["avg_rate_bps_mean"])
    problems = []
    mc, bt, alone = curve.get("microcast", {}), curve.get("bittorrent_pull", {}), \
        curve.get("none", {})
    if not (mc and bt and alone) or sorted(mc) != sorted(alone) or 4 not in mc:
        return _result(8, "congestion-behavior", False,
                       f"incomplete sweep: {sorted(curve)} over {sorted(mc)}",
                       bound)
    ks = sorted(mc)
    if not all(mc[k + 1] >= mc[k] * 0.999 for k in ks if k + 1 in mc and k < 4):
        problems.append(f"coded rate dips below its smaller group: "
                        f"{[round(mc[k] / 1e6, 3) for k in ks]}")
    factors = [mc[k] / alone[k] for k in ks if k >= 4]
    if not all(f >= 3.0 for f in factors):
        problems.append(f"coded/standalone at k>=4: {[round(f, 2) for f in factors]}")
    bt_vals = [bt[k] for k in sorted(bt)]
    if not _declines_after_threshold(bt_vals, last_start=4):
        problems.append(f"swarm rate not in strict decline by 5 devices: "
                        f"{[round(v / 1e6, 3) for v in bt_vals]}")
    measured = (f"coded {mc[1] / 1e6:.2f}->{mc[4] / 1e6:.2f} Mbps to k=4, "
                f"min coded/standalone {min(factors):.2f}x, swarm peak at "
                f"k={bt_vals.index(max(bt_vals)) + 1}")
    return _result(8, "congestion-behavior", not problems, measured, bound,
                   "; ".join(problems))


# --------------------------------------------- 9: protocol property grid

GRID_RUNS = 50


def _grid_config(s: int):
    rng = np.random.default_rng(1000 + s)
    protocol = (PROTO_MICROCAST, PROTO_BITTORRENT, PROTO_R2)[s % 3]
    n_dev = int(rng.integers(2, 5))
    mode = (MODE_PSEUDO_ADHOC, MODE_CLIQUE, MODE_STAR)[int(rng.integers(0, 3))]
    loss = float(rng.choice([0.0, 0.1, 0.3]))
    segments = int(rng.integers(3, 7))
    m = int(rng.integers(4, 11))
    n_cell = 1 if n_dev == 2 else int(rng.integers(1, 3))
    devices = [DeviceSpec(cellular=RateTrace.constant(float(rng.uniform(1e6, 3e6))))
               if d < n_cell else DeviceSpec() for d in range(n_dev)]
    sim_cfg = SimConfig(devices=devices, capacity_bps=5e6, loss=loss, mode=mode,
                        seed=s, max_time_s=900.0, log_events=True)
    proto = ProtocolConfig(protocol, file_bytes=segments * m * 24, m=m, n=24,
                           initiator=0)
    return sim_cfg, proto, loss


def _check_microcast_run(res, proto, lossless: bool) -> list:
    problems = []
    m = proto.m
    requests = [e for e in res.sim.events if e.event == "request"]
    last_dims: dict = {}
    for e in requests:
        if not 1 <= e.nbytes <= m:
            problems.append(f"request dims {e.nbytes} outside [1, {m}]")
        key = (e.device, e.segment)
        if e.nbytes > last_dims.get(key, m):
            problems.append(f"request dims grew at {key}")
        last_dims[key] = e.nbytes
    if lossless:
        if len(requests) > 3:
            problems.append(f"{len(requests)} requests after lossless pushes")
        if any(e.nbytes > 2 for e in requests):
            problems.append("lossless request asked for more than a rank gap")
    intents: dict = {}
    for e in res.sim.events:
        if e.event in ("push", "serve"):
            key = (e.device, e.segment)
            intents[key] = intents.get(key, 0) + e.nbytes
    sent: dict = {}
    served: dict = {}
    for e in res.sim.events:
        if e.event == "tx" and e.kind == CODED_DATA:
            key = (e.device, e.segment)
            sent[key] = sent.get(key, 0) + 1
    for e in res.sim.events:
        if e.event == "serve":
            served[(e.device, e.segment)] = served.get((e.device, e.segment), 0) + 1
    req_tx: dict = {}
    for e in res.sim.events:
        if e.event == "tx" and e.kind == REQUEST:
            key = (e.peer, e.segment)
            req_tx[key] = req_tx.get(key, 0) + 1
    for key, count in sent.items():
        if count > intents.get(key, 0):
            problems.append(f"{count} coded packets from {key} vs "
                            f"{intents.get(key, 0)} declared")
    for key, count in served.items():
        if count > req_tx.get(key, 0):
            problems.append(f"{count} serves at {key} vs {req_tx.get(key, 0)} "
                            "requests addressed there")
    problems += _check_coalescing(res)
    return problems


def _received_request_dims(res) -> dict:
    """(server, requester, segment) -> [(t, dims)] for requests the server got.

    The wire records do not carry dims, so the request submit log (which
    does) is paired with the matching transmission: the medium is one
    FIFO queue, so a device's j-th request submission for a segment is
    its j-th request transmission.  A transmission only counts once the
    addressed receiver's reception record confirms the loss draw passed.
    """
    submits: dict = {}
    for e in res.sim.events:
        if e.event == "request":
            submits.setdefault((e.device, e.segment), []).append((e.peer, e.nbytes))
    tx_times: dict = {}
    for e in res.sim.events:
        if e.event == "tx" and e.kind == REQUEST:
            tx_times.setdefault((e.device, e.segment), []).append(e.t)
    dims_at_tx: dict = {}
    for key, subs in submits.items():
        for (dst, dims), t in zip(subs, tx_times.get(key, [])):
            dims_at_tx[(key[0], key[1], t)] = (dst, dims)
    received: dict = {}
    for e in res.sim.events:
        if e.event == "rx" and e.kind == REQUEST:
            hit = dims_at_tx.get((e.peer, e.segment, e.t))
            if hit and hit[0] == e.device:
                received.setdefault((e.device, e.peer, e.segment),
                                    []).append((e.t, hit[1]))
    return received


def _check_coalescing(res) -> list:
    """A coalesced serve must cover every group member's latest ask.

    Group membership is read off the wire: the serve job delivers its
    coded packets and then one notification per member, contiguously
    (single FIFO medium).  Notifications that match no received request
    are other traffic sharing the message kind and are skipped.
    """
    problems = []
    received = _received_request_dims(res)
    tx_by_dev: dict = {}
    for e in res.sim.events:
        if e.event == "tx":
            tx_by_dev.setdefault(e.device, []).append(e)
    times = {d: [e.t for e in txs] for d, txs in tx_by_dev.items()}
    for sv in res.sim.events:
        if sv.event != "serve":
            continue
        txs = tx_by_dev.get(sv.device, [])
        k = bisect.bisect_right(times[sv.device], sv.t) if txs else 0
        coded = 0
        while k < len(txs) and coded < sv.nbytes and \
                txs[k].kind == CODED_DATA and txs[k].segment == sv.segment:
            coded += 1
            k += 1
        if coded < sv.nbytes:
            continue   # batch truncated by the end of the run
        while (k < len(txs) and txs[k].kind == NOTIFICATION
               and txs[k].segment == sv.segment):
            member = txs[k].peer
            k += 1
            hist = [dims for t, dims in
                    received.get((sv.device, member, sv.segment), [])
                    if t <= sv.t]
            if hist and sv.nbytes < hist[-1]:
                problems.append(
                    f"serve of {sv.nbytes} dims at device {sv.device} "
                    f"segment {sv.segment} below member {member}'s "
                    f"asked {hist[-1]}")
    return problems


def _check_bittorrent_run(res, proto, n_dev: int) -> list:
    problems = []
    pieces: dict = {}
    pieces_to: dict = {}
    asked: dict = {}
    for e in res.sim.events:
        if e.event != "tx":
            continue
        if e.kind == PIECE:
            pieces[e.segment] = pieces.get(e.segment, 0) + 1
            key = (e.peer, e.segment)
            pieces_to[key] = pieces_to.get(key, 0) + 1
        elif e.kind == PIECE_REQUEST:
            key = (e.device, e.segment)
            asked[key] = asked.get(key, 0) + 1
    for segment in range(proto.n_segments):
        if pieces.get(segment, 0) < n_dev - 1:
            problems.append(f"segment {segment} moved {pieces.get(segment, 0)} "
                            f"times for {n_dev - 1} lacking devices")
    # every transfer answers a request; the queue dedupe must hold even
    # when timeouts re-ask
    for key, count in pieces_to.items():
        if count > asked.get(key, 0):
            problems.append(f"device {key[0]} got {count} copies of segment "
                            f"{key[1]} for {asked.get(key, 0)} requests")
    return problems


def _check_r2_run(res, proto) -> list:
    problems = []
    cap = proto.m + proto.push_cap_extra
    for node in res.nodes:
        over = {k: v for k, v in node.pushed.items() if v > cap}
        if over:
            problems.append(f"device {node.device} pushed past the cap: {over}")
    # rx records do not carry the destination; the medium is physically
    # broadcast, so every device logs every brake.  Join against the tx
    # record (which names the destination) on the delivery timestamp to
    # keep only brakes actually addressed to the receiver.
    brake_tx: dict = {}
    for e in res.sim.events:
        if e.event == "tx" and e.kind == BRAKE:
            brake_tx.setdefault((e.device, e.peer, e.segment), set()).add(e.t)
    brake_rx: dict = {}
    for e in res.sim.events:
        if e.event == "rx" and e.kind == BRAKE:
            if e.t not in brake_tx.get((e.peer, e.device, e.segment), ()):
                continue
            key = (e.device, e.segment, e.peer)
            brake_rx.setdefault(key, e.t)
    for e in res.sim.events:
        if e.event == "push":
            t = brake_rx.get((e.device, e.segment, e.peer))
            if t is not None and e.t > t:
                problems.append(f"push to {e.peer} after its brake for "
                                f"segment {e.segment}")
    return problems


def evaluate_protocol_properties() -> CriterionResult:
    bound = (f"{GRID_RUNS} randomized runs all complete; rank-credit, "
             "serve accounting, push caps, brake obedience, swarm transfer "
             "floor all hold")
    t0 = time.time()
    problems = []
    for s in range(GRID_RUNS):
        sim_cfg, proto, loss = _grid_config(s)
        try:
            res = run_protocol(sim_cfg, proto)
        except Exception as exc:   # a stall or crash is itself a failure
            problems.append(f"run {s} ({proto.protocol}): {exc}")
            continue
        if not res.metrics.complete:
            problems.append(f"run {s} ({proto.protocol}) finished incomplete")
            continue
        if proto.protocol == PROTO_MICROCAST:
            run_problems = _check_microcast_run(res, proto, loss == 0.0)
        elif proto.protocol == PROTO_BITTORRENT:
            run_problems = _check_bittorrent_run(res, proto, sim_cfg.n)
        else:
            run_problems = _check_r2_run(res, proto)
        problems.extend(f"run {s}: {p}" for p in run_problems)
    dt = time.time() - t0
    measured = (f"{GRID_RUNS} runs, {len(problems)} violations, {dt:.0f}s")
    return _result(9, "protocol-properties", not problems, measured, bound,
                   "; ".join(problems[:6]))


# --------------------------------------------------------------- the gate

def evaluate_all(results_dir: str) -> list:
    return [
        evaluate_codec_roundtrip(),
        evaluate_codec_throughput(results_dir),
        evaluate_solver_oracle(),
        evaluate_group_size_shapes(results_dir),
        evaluate_loss_shapes(results_dir),
        evaluate_traffic_ratios(results_dir),
        evaluate_download_adaptivity(results_dir),
        evaluate_congestion(results_dir),
        evaluate_protocol_properties(),
    ]
