"""Solver ops against hand-derived values and brute-force oracles."""

import itertools
import math

import numpy as np
import pytest

from microcast import num
from microcast.num import (
    NO_COOP,
    PSEUDO_BROADCAST,
    PSEUDO_BROADCAST_NO_NC,
    UNICAST,
    DualState,
    HyperarcSet,
    SolverConfig,
    Topology,
    centralized_oracle,
    downlink_rate_control,
    enumerate_hyperarcs,
    flow_control,
    hyperarc_weights,
    local_schedule,
    queue_update_local,
    queue_update_source,
    simulate,
    unicast_weights,
)


def schedule_ref(eta, topo, policy):
    """Independent max-weight search over an explicit subset enumeration."""
    n = topo.n
    best_key, best_w = None, 0.0
    for i in range(n):
        others = [j for j in range(n) if j != i]
        subsets = sorted(
            itertools.chain.from_iterable(
                itertools.combinations(others, k) for k in range(1, n)
            )
        )
        for s in subsets:
            if policy == PSEUDO_BROADCAST:
                kappa = min(
                    topo.local_capacity[i, j] * (1 - topo.local_loss[i, j]) for j in s
                )
            else:
                kappa = min(topo.local_capacity[i, j] for j in s) * math.prod(
                    1 - topo.local_loss[i, j] for j in s
                )
            w = sum(eta[i, j] for j in s) * kappa
            if w > best_w:
                best_w, best_key = w, (i, s)
    return best_key, best_w


def random_topology(rng, n=None):
    n = n or int(rng.integers(2, 5))
    loss_choices = [0.0, 0.1, 0.2]
    p_local = loss_choices[int(rng.integers(0, 3))]
    return Topology(
        cell_capacity=rng.uniform(0.5, 2.0, n),
        cell_loss=np.full(n, loss_choices[int(rng.integers(0, 3))]),
        local_capacity=rng.uniform(2.0, 6.0, (n, n)),
        local_loss=np.full((n, n), p_local),
        gamma=1.0,
    )


# ---------------------------------------------------------------- closed forms


def test_flow_control_inverse_marginal_utility():
    topo = Topology.uniform(4, cell_capacity=1.0)
    cfg = SolverConfig(x_cap=4.0)
    assert flow_control(np.array([0.3, 0.2, 0.0, 0.0]), topo, cfg) == pytest.approx(2.0)
    # all-zero prices saturate at the cap
    assert flow_control(np.zeros(4), topo, cfg) == 4.0
    # default cap is the raw cellular sum
    assert flow_control(np.zeros(4), topo) == 4.0
    assert flow_control(np.array([100.0, 0, 0, 0]), topo) == pytest.approx(0.01)


def test_flow_control_custom_marginal_utility():
    # U(x) = -1/x has U'(x) = 1/x^2, inverse s -> 1/sqrt(s)
    topo = Topology.uniform(2, cell_capacity=5.0)
    cfg = SolverConfig(uprime_inv=lambda s: s**-0.5)
    assert flow_control(np.array([4.0, 0.0]), topo, cfg) == pytest.approx(0.5)


def test_downlink_bang_bang():
    topo = Topology.uniform(2, cell_capacity=2.0, cell_loss=0.25)
    dual = DualState(np.array([1.0, 0.1]), np.array([[0.0, 0.5], [0.2, 0.0]]))
    x_dl = downlink_rate_control(dual, topo)
    # expected goodput 1.5 wherever lam_j - eta_ij > 0
    assert x_dl[0, 0] == 1.5  # own queue: lam_0 > 0
    assert x_dl[0, 1] == 0.0  # 0.1 - 0.5 < 0
    assert x_dl[1, 0] == 1.5  # 1.0 - 0.2 > 0
    assert x_dl[1, 1] == 1.5
    dual.lam[1] = 0.5
    assert downlink_rate_control(dual, topo)[0, 1] == 0.0  # 0.5 - 0.5 not > 0


def test_queue_updates_project_to_zero():
    lam = queue_update_source(np.array([0.1, 0.0]), 1.0, np.array([5.0, 0.0]), 0.05)
    assert lam[0] == 0.0 and lam[1] == pytest.approx(0.05)
    eta = queue_update_local(
        np.array([[0.0, 0.02], [0.3, 0.0]]),
        np.zeros((2, 2)),
        np.full((2, 2), 1.0),
        0.05,
    )
    assert eta[0, 1] == 0.0 and eta[1, 0] == pytest.approx(0.25)
    assert eta[0, 0] == 0.0 and eta[1, 1] == 0.0  # diagonal pinned


# ------------------------------------------------------------------ scheduling


def test_hyperarc_enumeration_order_and_guard():
    arcs = enumerate_hyperarcs(3)
    assert arcs == [
        (0, (1,)), (0, (1, 2)), (0, (2,)),
        (1, (0,)), (1, (0, 2)), (1, (2,)),
        (2, (0,)), (2, (0, 1)), (2, (1,)),
    ]
    assert len(enumerate_hyperarcs(8)) == 8 * 127
    with pytest.raises(ValueError, match="limited"):
        enumerate_hyperarcs(11)


def test_schedule_single_backlogged_arc():
    topo = Topology.uniform(2, local_capacity=3.0, local_loss=0.2)
    eta = np.zeros((2, 2))
    eta[0, 1] = 5.0
    sched = local_schedule(DualState(np.zeros(2), eta), topo, PSEUDO_BROADCAST)
    assert sched.sender == 0 and sched.members == (1,)
    assert sched.tau == topo.gamma
    assert sched.g[0, 1] == pytest.approx(3.0 * 0.8 * topo.gamma)
    assert sched.g.sum() == pytest.approx(sched.g[0, 1])


def test_schedule_idles_without_backlog():
    topo = Topology.uniform(3, local_capacity=2.0)
    sched = local_schedule(DualState.zeros(3), topo, PSEUDO_BROADCAST)
    assert sched.idle and sched.tau == 0.0 and not sched.g.any()
    sched = local_schedule(DualState.zeros(3), topo, UNICAST)
    assert sched.idle


def test_schedule_matches_brute_force():
    rng = np.random.default_rng(21)
    for _ in range(60):
        n = int(rng.integers(2, 6))
        topo = Topology(
            cell_capacity=np.ones(n),
            cell_loss=np.zeros(n),
            local_capacity=rng.uniform(0.5, 4.0, (n, n)),
            local_loss=rng.uniform(0.0, 0.6, (n, n)),
            gamma=float(rng.uniform(0.5, 2.0)),
        )
        eta = rng.uniform(0.0, 1.0, (n, n))
        np.fill_diagonal(eta, 0.0)
        dual = DualState(np.zeros(n), eta)
        for policy in (PSEUDO_BROADCAST, PSEUDO_BROADCAST_NO_NC):
            key, w = schedule_ref(eta, topo, policy)
            sched = local_schedule(dual, topo, policy)
            assert (sched.sender, sched.members) == key
            assert max(sched.weights) == pytest.approx(w)
            i, members = key
            if policy == PSEUDO_BROADCAST:
                kappa = min(
                    topo.local_capacity[i, j] * (1 - topo.local_loss[i, j])
                    for j in members
                )
            else:
                kappa = min(topo.local_capacity[i, j] for j in members) * math.prod(
                    1 - topo.local_loss[i, j] for j in members
                )
            for j in members:
                assert sched.g[i, j] == pytest.approx(kappa * topo.gamma)


def test_unicast_schedule_matches_brute_force():
    rng = np.random.default_rng(22)
    for _ in range(40):
        n = int(rng.integers(2, 6))
        topo = Topology(
            cell_capacity=np.ones(n),
            cell_loss=np.zeros(n),
            local_capacity=rng.uniform(0.5, 4.0, (n, n)),
            local_loss=rng.uniform(0.0, 0.6, (n, n)),
        )
        eta = rng.uniform(0.0, 1.0, (n, n))
        np.fill_diagonal(eta, 0.0)
        w = eta * topo.local_capacity * (1 - topo.local_loss)
        np.fill_diagonal(w, 0.0)
        i, j = np.unravel_index(np.argmax(w), w.shape)
        sched = local_schedule(DualState(np.zeros(n), eta), topo, UNICAST)
        assert sched.sender == i and sched.members == (j,)
        assert sched.g[i, j] == pytest.approx(
            topo.local_capacity[i, j] * (1 - topo.local_loss[i, j]) * topo.gamma
        )


def test_singleton_hyperarcs_reduce_to_unicast_weights():
    rng = np.random.default_rng(23)
    n = 4
    topo = Topology(
        cell_capacity=np.ones(n),
        cell_loss=np.zeros(n),
        local_capacity=rng.uniform(0.5, 4.0, (n, n)),
        local_loss=rng.uniform(0.0, 0.6, (n, n)),
    )
    eta = rng.uniform(0.0, 1.0, (n, n))
    np.fill_diagonal(eta, 0.0)
    arcs = HyperarcSet(topo)
    uni = unicast_weights(eta, topo)
    for policy in (PSEUDO_BROADCAST, PSEUDO_BROADCAST_NO_NC):
        w = hyperarc_weights(eta, arcs, policy)
        for k, (i, members) in enumerate(arcs.arcs):
            if len(members) == 1:
                assert w[k] == pytest.approx(uni[i, members[0]])


def test_schedule_tie_breaks_lexicographic():
    # symmetric backlog: every sender's full set ties at the top weight;
    # lowest sender must win
    topo = Topology.uniform(3, local_capacity=2.0)
    eta = np.ones((3, 3))
    np.fill_diagonal(eta, 0.0)
    sched = local_schedule(DualState(np.zeros(3), eta), topo, PSEUDO_BROADCAST)
    assert sched.sender == 0 and sched.members == (1, 2)
    # heavy loss makes the pair arc worthless under plain copies; the two
    # singleton arcs of sender 0 tie and the smaller receiver set wins
    topo = Topology.uniform(3, local_capacity=2.0, local_loss=0.9)
    eta = np.zeros((3, 3))
    eta[0, 1] = eta[0, 2] = 2.0
    sched = local_schedule(DualState(np.zeros(3), eta), topo, PSEUDO_BROADCAST_NO_NC)
    assert sched.sender == 0 and sched.members == (1,)


# ------------------------------------------------------------------ the oracle


def test_oracle_frozen_cases():
    # lone device: its own downlink goodput
    topo = Topology.uniform(1, cell_capacity=2.0, cell_loss=0.25)
    assert centralized_oracle(topo, PSEUDO_BROADCAST) == pytest.approx(1.5)
    # two devices, fat local pipe: both halves of the stream get shared
    topo = Topology.uniform(2, cell_capacity=1.0, local_capacity=10.0)
    for policy in (PSEUDO_BROADCAST, PSEUDO_BROADCAST_NO_NC, UNICAST):
        assert centralized_oracle(topo, policy) == pytest.approx(2.0)
    # four devices, local cap 2: per-sender broadcast f <= 2/4, x = 1 + 3*0.5
    topo = Topology.uniform(4, cell_capacity=1.0, local_capacity=2.0)
    assert centralized_oracle(topo, PSEUDO_BROADCAST) == pytest.approx(2.5)
    # unicast airtime splits across 6 links: x = 1 + C_l/n
    topo = Topology.uniform(3, cell_capacity=1.0, local_capacity=1.0)
    assert centralized_oracle(topo, UNICAST) == pytest.approx(4.0 / 3.0)
    # plain copies at 30% loss, full-set broadcast: x = 1 + 2*(0.7^2)/3
    topo = Topology.uniform(3, cell_capacity=1.0, local_capacity=1.0, local_loss=0.3)
    assert centralized_oracle(topo, PSEUDO_BROADCAST_NO_NC) == pytest.approx(
        1.0 + 2.0 * 0.49 / 3.0
    )
    assert centralized_oracle(topo, NO_COOP) == pytest.approx(1.0)


def test_oracle_guard():
    topo = Topology.uniform(6, cell_capacity=1.0)
    with pytest.raises(ValueError, match="oracle"):
        centralized_oracle(topo, PSEUDO_BROADCAST)


def test_oracle_policy_ordering():
    rng = np.random.default_rng(31)
    for _ in range(8):
        topo = random_topology(rng)
        pb = centralized_oracle(topo, PSEUDO_BROADCAST)
        plain = centralized_oracle(topo, PSEUDO_BROADCAST_NO_NC)
        uni = centralized_oracle(topo, UNICAST)
        assert pb >= plain - 1e-9
        assert plain >= uni - 1e-9


def test_oracle_monotone_in_loss():
    rng = np.random.default_rng(32)
    for _ in range(6):
        topo = random_topology(rng)
        for policy in (PSEUDO_BROADCAST, PSEUDO_BROADCAST_NO_NC, UNICAST):
            base = centralized_oracle(topo, policy)
            worse = Topology(
                cell_capacity=topo.cell_capacity,
                cell_loss=np.minimum(topo.cell_loss + 0.2, 1.0),
                local_capacity=topo.local_capacity,
                local_loss=np.minimum(topo.local_loss + 0.2, 1.0),
                gamma=topo.gamma,
            )
            assert centralized_oracle(worse, policy) <= base + 1e-9


# ----------------------------------------------------------------- simulation


def test_simulate_two_device_sharing():
    topo = Topology.uniform(2, cell_capacity=1.0, local_capacity=10.0)
    cfg = SolverConfig(policy=PSEUDO_BROADCAST, seeds=range(4))
    rep = simulate(topo, cfg)
    assert rep.avg_rate == pytest.approx(2.0, rel=0.10)


def test_simulate_tracks_oracle_on_random_topologies():
    rng = np.random.default_rng(33)
    for _ in range(3):
        topo = random_topology(rng, n=int(rng.integers(2, 4)))
        for policy in (PSEUDO_BROADCAST, UNICAST):
            want = centralized_oracle(topo, policy)
            got = simulate(topo, SolverConfig(policy=policy, seeds=range(6))).avg_rate
            assert got == pytest.approx(want, rel=0.10), (policy, want, got)


def test_simulate_no_coop_matches_closed_form():
    topo = Topology.uniform(3, cell_capacity=2.0, cell_loss=0.2)
    rep = simulate(topo, SolverConfig(policy=NO_COOP, seeds=range(8)))
    assert rep.avg_rate == pytest.approx(2.0 * 0.8, rel=0.05)
    assert rep.device_avg.shape == (3,)


def test_simulate_single_device_loss_realization():
    topo = Topology.uniform(1, cell_capacity=1.0, cell_loss=0.5)
    rep = simulate(topo, SolverConfig(policy=PSEUDO_BROADCAST, seeds=range(8)))
    assert rep.avg_rate == pytest.approx(0.5, rel=0.10)


def test_simulate_deterministic_per_seed():
    topo = Topology.uniform(3, cell_capacity=1.0, local_capacity=5.0, local_loss=0.1)
    cfg = SolverConfig(policy=PSEUDO_BROADCAST, seeds=(7, 7))
    rep = simulate(topo, cfg)
    assert np.array_equal(rep.runs[0].device_avg, rep.runs[1].device_avg)
    other = simulate(topo, SolverConfig(policy=PSEUDO_BROADCAST, seeds=(8,)))
    assert not np.array_equal(rep.runs[0].device_avg, other.runs[0].device_avg)


def test_nc_and_plain_identical_without_loss():
    # same seed, no loss: the two broadcast policies see identical weights
    # and draws, so whole trajectories coincide exactly
    topo = Topology.uniform(4, cell_capacity=1.0, local_capacity=3.0)
    a = simulate(topo, SolverConfig(policy=PSEUDO_BROADCAST, seeds=range(3)))
    b = simulate(topo, SolverConfig(policy=PSEUDO_BROADCAST_NO_NC, seeds=range(3)))
    for ra, rb in zip(a.runs, b.runs):
        assert np.array_equal(ra.device_avg, rb.device_avg)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(policy="bogus")
    with pytest.raises(ValueError):
        SolverConfig(step_size=0.0)
    with pytest.raises(ValueError):
        Topology.uniform(2, cell_loss=1.5)
    with pytest.raises(ValueError):
        Topology.uniform(2, gamma=0.0)
