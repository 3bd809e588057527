"""Gossip rounds, scoring, thresholds, severing, and full-trial behavior."""

import math

import numpy as np
import pytest

from robustpush.graph import DynamicDigraph, gen_erdos_renyi, sample_connected
from robustpush.objective import AttackSpec, effective_rows, sample_instance
from robustpush.protocol import (
    NumericDegeneracyError,
    ProtocolConfig,
    SimState,
    init,
    instantaneous_score,
    round_step,
    run_trial,
    step_size,
    threshold,
    update_cumulative_score,
    xhat,
)


def connected_graph(n, p, seed, malicious=()):
    g, _ = sample_connected(n, p, np.random.default_rng(seed), malicious=malicious)
    return g


def make_instance(n, d=2, seed=0, noise=1.0):
    return sample_instance(
        n, d, np.zeros(d), noise, np.random.default_rng(seed), h_sigma=1.0
    )


# ---- configuration ----


def test_config_validation():
    with pytest.raises(ValueError):
        ProtocolConfig(eta0=0.0)
    with pytest.raises(ValueError):
        ProtocolConfig(rho=0.5)  # boundary excluded
    with pytest.raises(ValueError):
        ProtocolConfig(rho=1.1)
    with pytest.raises(ValueError):
        ProtocolConfig(alpha=1.0)
    with pytest.raises(ValueError):
        ProtocolConfig(alpha=0.0)
    with pytest.raises(ValueError):
        ProtocolConfig(beta=-0.1)
    with pytest.raises(ValueError):
        ProtocolConfig(score_mode="unknown")
    with pytest.raises(ValueError):
        ProtocolConfig(detection_start=-1)
    with pytest.raises(ValueError):
        ProtocolConfig(T=0)
    with pytest.raises(ValueError):
        ProtocolConfig(y_floor=0.0)
    with pytest.raises(ValueError):
        ProtocolConfig(grad_clip=0.0)


def test_step_size_schedule():
    cfg = ProtocolConfig(eta0=1.0, rho=1.0)
    assert step_size(cfg, 1) == pytest.approx(0.5)
    assert step_size(cfg, 9) == pytest.approx(0.1)
    cfg2 = ProtocolConfig(eta0=2.0, rho=0.75)
    assert step_size(cfg2, 3) == pytest.approx(2.0 / 4**0.75)
    with pytest.raises(ValueError):
        step_size(cfg, 0)


# ---- initialization ----


def test_init_state_shape_and_weights():
    g = connected_graph(8, 0.6, 1)
    inst = make_instance(8)
    state = init(g, inst, ProtocolConfig(), np.random.default_rng(2))
    assert state.z.shape == (8, 2)
    assert np.array_equal(state.v, state.z)
    assert np.array_equal(state.x, state.z)
    assert np.all(state.y == 1.0)
    assert state.y.sum() == pytest.approx(8.0)
    assert state.round == 0


def test_init_draws_one_standard_normal_block():
    g = connected_graph(6, 0.7, 3)
    inst = make_instance(6)
    state = init(g, inst, ProtocolConfig(), np.random.default_rng(77))
    want = np.random.default_rng(77).standard_normal((6, 2))
    assert np.array_equal(state.z, want)


def test_init_requires_strong_connectivity():
    g = DynamicDigraph(3)
    g.add_edge(0, 1)
    g.add_edge(1, 2)
    inst = make_instance(3)
    with pytest.raises(ValueError):
        init(g, inst, ProtocolConfig())
    state = init(g, inst, ProtocolConfig(), require_connected=False)
    assert state.round == 0


def test_init_rejects_size_mismatch():
    g = connected_graph(5, 0.8, 0)
    with pytest.raises(ValueError):
        init(g, make_instance(6), ProtocolConfig())


# ---- de-biased values and scores ----


def test_xhat_divides_by_weight():
    assert np.allclose(xhat(np.array([2.0, 4.0]), 0.5), [4.0, 8.0])
    with pytest.raises(NumericDegeneracyError):
        xhat(np.array([1.0]), 0.0)
    with pytest.raises(NumericDegeneracyError):
        xhat(np.array([1.0]), -1.0)


def test_instantaneous_score_matches_pairwise_sum():
    rng = np.random.default_rng(5)
    for _ in range(30):
        k = int(rng.integers(2, 7))
        senders = frozenset(range(k))
        xhats = {i: rng.normal(size=3) for i in senders}
        eta = float(rng.uniform(0.05, 2.0))
        receiver = 0
        for j in senders - {receiver}:
            total = sum(
                xhats[j] - xhats[ell] for ell in senders if ell != j
            )
            want = float(total @ total) / eta**2
            got = instantaneous_score(receiver, j, senders, xhats, eta)
            assert got == pytest.approx(want, rel=1e-12)


def test_instantaneous_score_constant_liar_scaling():
    # k senders at a common point, one offset by delta: the liar's summed
    # deviation is (k-1) * delta while each honest sender's is just -delta.
    k = 5
    delta = np.array([2.0, 0.0])
    xhats = {i: np.zeros(2) for i in range(k)}
    xhats[4] = delta
    senders = frozenset(range(k))
    liar = instantaneous_score(0, 4, senders, xhats, 1.0)
    honest = instantaneous_score(0, 1, senders, xhats, 1.0)
    assert liar == pytest.approx((k - 1) ** 2 * float(delta @ delta))
    assert honest == pytest.approx(float(delta @ delta))
    assert liar == pytest.approx((k - 1) ** 2 * honest)


def test_instantaneous_score_validation():
    xhats = {0: np.zeros(2), 1: np.ones(2)}
    senders = frozenset({0, 1})
    with pytest.raises(ValueError):
        instantaneous_score(0, 0, senders, xhats, 1.0)  # no self-scoring
    with pytest.raises(ValueError):
        instantaneous_score(0, 2, senders, xhats, 1.0)  # not a sender
    with pytest.raises(ValueError):
        instantaneous_score(0, 1, senders, xhats, 0.0)  # bad step size


def test_instantaneous_score_nonnegative():
    rng = np.random.default_rng(13)
    for _ in range(20):
        senders = frozenset(range(4))
        xhats = {i: rng.normal(size=2) for i in senders}
        assert instantaneous_score(0, 1, senders, xhats, 0.3) >= 0.0


def test_score_equals_gradient_disparity_at_consensus():
    # One descent step from exact consensus with unit weights: every node's
    # de-biased value is xbar - eta * g_i(xbar), so the score of sender j is
    # exactly the squared summed gradient disparity, with no approximation.
    inst = make_instance(6, seed=8)
    xbar = np.array([0.7, -0.4])
    eta = 0.5
    grads = [2.0 * inst.h[i] * (inst.h[i] @ xbar - inst.s[i]) for i in range(6)]
    xhats = {i: xbar - eta * grads[i] for i in range(6)}
    senders = frozenset(range(6))
    for j in range(1, 6):
        want = sum(grads[j] - grads[ell] for ell in range(6) if ell != j)
        want = float(want @ want)
        got = instantaneous_score(0, j, senders, xhats, eta)
        assert got == pytest.approx(want, rel=1e-12)


def test_score_approximates_gradient_disparity_with_weight_jitter():
    # Push-sum weights hover near one at consensus; a 1e-4 jitter keeps the
    # score within one percent of the pure gradient-disparity value.
    inst = make_instance(6, seed=8)
    rng = np.random.default_rng(3)
    xbar = np.array([0.7, -0.4])
    eta = 0.5
    grads = [2.0 * inst.h[i] * (inst.h[i] @ xbar - inst.s[i]) for i in range(6)]
    ys = 1.0 + 1e-4 * rng.standard_normal(6)
    xhats = {i: (ys[i] * xbar - eta * grads[i]) / ys[i] for i in range(6)}
    senders = frozenset(range(6))
    for j in range(1, 6):
        want = sum(grads[j] - grads[ell] for ell in range(6) if ell != j)
        want = float(want @ want)
        got = instantaneous_score(0, j, senders, xhats, eta)
        assert got == pytest.approx(want, rel=1e-2)


def test_update_cumulative_score_forgetting():
    cfg = ProtocolConfig(alpha=0.9, score_mode="forgetting")
    assert update_cumulative_score(10.0, 1.0, 7, cfg) == pytest.approx(10.0)
    assert update_cumulative_score(0.0, 4.0, 1, cfg) == pytest.approx(4.0)


def test_update_cumulative_score_literal():
    cfg = ProtocolConfig(alpha=0.5, score_mode="literal")
    # round t weighs the new score by alpha^t
    assert update_cumulative_score(4.0, 1.0, 1, cfg) == pytest.approx(4.5)
    assert update_cumulative_score(4.0, 1.0, 2, cfg) == pytest.approx(4.25)


def test_update_cumulative_score_rejects_negative():
    with pytest.raises(ValueError):
        update_cumulative_score(0.0, -1.0, 1, ProtocolConfig())


def test_threshold_known_values():
    # sample std of [1, 2, 3] is 1, so the bar sits at 2 + 1.5
    assert threshold([1.0, 2.0, 3.0], 1.5) == pytest.approx(3.5)
    assert threshold([1.0, 2.0, 3.0], 0.0) == pytest.approx(2.0)
    assert threshold([5.0, 5.0], 2.0) == pytest.approx(5.0)


def test_threshold_needs_two_scores():
    assert threshold([], 1.5) is None
    assert threshold([4.0], 1.5) is None


def test_four_scores_never_exceed_default_threshold():
    # The largest sample z-score among k values is (k-1)/sqrt(k), which is
    # exactly 1.5 at k=4; the strict comparison therefore can never fire
    # with four scores, whatever their values.
    rng = np.random.default_rng(41)
    for _ in range(300):
        scores = rng.exponential(scale=10.0 ** rng.integers(0, 6), size=4)
        chi = threshold(scores, 1.5)
        assert not np.any(scores > chi)
    # with five scores a dominant entry can clear the bar
    scores = np.array([1.0, 2.0, 3.0, 4.0, 30.0])
    assert scores[-1] > threshold(scores, 1.5)


# ---- synthetic-state severing ----


def synthetic_state(adj, malicious=()):
    g = DynamicDigraph.from_adjacency(adj, malicious)
    n = g.n
    return SimState(g, np.random.default_rng(0), np.zeros((n, 2)))


def star_in_adjacency(n, center):
    adj = np.zeros((n, n), dtype=bool)
    for j in range(n):
        if j != center:
            adj[j, center] = True
            adj[center, j] = True
    return adj


def test_detect_and_sever_cuts_only_above_bar():
    from robustpush.protocol import detect_and_sever

    state = synthetic_state(star_in_adjacency(6, 0))
    for j, score in zip(range(1, 6), [1.0, 2.0, 3.0, 4.0, 30.0]):
        state.cum[0, j] = score
        state.scored[0, j] = True
    hits = detect_and_sever(state, 0, ProtocolConfig(beta=1.5))
    assert hits == [5]
    assert not state.graph.has_edge(5, 0)
    assert not state.graph.has_edge(0, 5)
    assert state.cum[0, 5] == 0.0
    assert not state.scored[0, 5]
    assert state.graph.has_edge(4, 0)
    assert state.sever_log == [(0, 0, 5)]


def test_detect_and_sever_uses_frozen_bar():
    # With the dominant score removed the remainder would clear a re-computed
    # bar, but severs within one call come from the single frozen threshold.
    from robustpush.protocol import detect_and_sever

    state = synthetic_state(star_in_adjacency(6, 0))
    for j, score in zip(range(1, 6), [10.0, 3.0, 1.0, 1.0, 1.0]):
        state.cum[0, j] = score
        state.scored[0, j] = True
    hits = detect_and_sever(state, 0, ProtocolConfig(beta=0.5))
    assert hits == [1]  # only the 10; the 3 survives this round
    # re-thresholding the survivors would have cut the 3 as well
    assert 3.0 > threshold([3.0, 1.0, 1.0, 1.0], 0.5)


def test_detect_and_sever_needs_two_scored_neighbors():
    from robustpush.protocol import detect_and_sever

    state = synthetic_state(star_in_adjacency(4, 0))
    state.cum[0, 1] = 100.0
    state.scored[0, 1] = True
    assert detect_and_sever(state, 0, ProtocolConfig(beta=0.0)) == []


def test_detect_and_sever_rejects_malicious_receiver():
    from robustpush.protocol import detect_and_sever

    state = synthetic_state(star_in_adjacency(4, 0), malicious=[0])
    with pytest.raises(ValueError):
        detect_and_sever(state, 0, ProtocolConfig())


# ---- round mechanics ----


def test_mass_conservation_and_positive_weights():
    g = connected_graph(12, 0.5, 7, malicious=[10, 11])
    inst = make_instance(12, seed=7)
    cfg = ProtocolConfig(beta=1.0, T=100)
    attack = AttackSpec(kind="mean_shift", shift=5.0)
    state, _ = run_trial(g, inst, attack, cfg, np.random.default_rng(3))
    assert state.sever_log  # severs happened and mass still balances
    assert state.y.sum() == pytest.approx(12.0, abs=1e-9)
    assert np.all(state.y > 0)


def test_mass_conserved_every_round():
    g = connected_graph(9, 0.5, 2)
    inst = make_instance(9, seed=2)
    cfg = ProtocolConfig(detection_enabled=False)
    state = init(g, inst, cfg, np.random.default_rng(5))
    for _ in range(50):
        round_step(state, inst, None, cfg)
        assert state.y.sum() == pytest.approx(9.0, abs=1e-9)


def test_node_without_out_neighbors_keeps_its_mass():
    adj = np.zeros((3, 3), dtype=bool)
    adj[0, 1] = adj[1, 0] = True  # node 2 is cut off entirely
    g = DynamicDigraph.from_adjacency(adj)
    inst = make_instance(3, seed=11)
    cfg = ProtocolConfig(detection_enabled=False)
    state = init(g, inst, cfg, np.random.default_rng(1), require_connected=False)
    for _ in range(20):
        round_step(state, inst, None, cfg)
        assert state.y[2] == pytest.approx(1.0)
    # the isolated node still descends its own cost
    assert state.isolated_mask()[2]
    assert not np.array_equal(state.z[2], state.v[2])


def test_round_consumes_one_uniform_vector_per_round():
    g = connected_graph(7, 0.6, 9)
    inst = make_instance(7, seed=9)
    cfg = ProtocolConfig(detection_enabled=False)
    state = init(g, inst, cfg, np.random.default_rng(123))
    for _ in range(5):
        round_step(state, inst, None, cfg)
    twin = np.random.default_rng(123)
    twin.standard_normal((7, 2))
    twin.random(7 * 5).reshape(5, 7)
    # both generators should now be in the same position
    assert state.rng.random() == twin.random()


def test_out_neighbor_pick_uses_ascending_order():
    # receiver = floor(u_i * out_degree)-th out-neighbor in ascending order;
    # u = 0 must pick the smallest id, u -> 1 the largest.
    adj = np.zeros((4, 4), dtype=bool)
    adj[0, [1, 3]] = True
    adj[1, 0] = adj[3, 0] = True

    class Fixed:
        def __init__(self, u):
            self.u = u

        def random(self, n):
            return np.array(self.u)

    g = DynamicDigraph.from_adjacency(adj)
    inst = make_instance(4, noise=0.0)
    cfg = ProtocolConfig(detection_enabled=False)
    state = SimState(g, Fixed([0.0, 0.0, 0.0, 0.0]), np.ones((4, 2)))
    round_step(state, inst, None, cfg)
    assert state.senders_of(1) == {0, 1}  # u=0 -> neighbor 1, not 3
    state2 = SimState(g.copy(), Fixed([0.99, 0.0, 0.0, 0.0]), np.ones((4, 2)))
    round_step(state2, inst, None, cfg)
    assert state2.senders_of(3) == {0, 3}  # u near 1 -> neighbor 3


def test_sent_to_records_self_and_picked_receiver():
    g = connected_graph(6, 0.7, 4)
    inst = make_instance(6, seed=4)
    cfg = ProtocolConfig(detection_enabled=False)
    state = init(g, inst, cfg, np.random.default_rng(8))
    round_step(state, inst, None, cfg)
    sent = state.sent_to
    assert np.all(sent.diagonal())
    assert np.all(sent.sum(axis=1) <= 2)  # self plus at most one neighbor
    for i in range(6):
        extra = set(np.nonzero(sent[i])[0].tolist()) - {i}
        assert extra <= g.out_nbrs(i)


def test_grad_clip_bounds_the_step():
    # a huge measurement row would produce an unbounded gradient; the step
    # actually taken is capped at eta * grad_clip
    from robustpush.objective import ObjectiveInstance

    inst = ObjectiveInstance(
        x_o=np.zeros(2), h=np.array([[100.0, 0.0]]), s=np.array([0.0])
    )
    g = DynamicDigraph(1)
    cfg = ProtocolConfig(detection_enabled=False, grad_clip=500.0)
    state = SimState(g, np.random.default_rng(0), np.array([[1.0, 0.0]]))
    round_step(state, inst, None, cfg)
    step = np.linalg.norm(state.v[0] - state.z[0])
    assert step == pytest.approx(step_size(cfg, 1) * 500.0)


def test_grad_clip_inactive_on_well_scaled_runs():
    # with a step size inside the stability region the cap never engages,
    # so capped and uncapped runs are bit-identical
    g = connected_graph(8, 0.6, 6)
    inst = make_instance(8, seed=6)
    cfg_a = ProtocolConfig(detection_enabled=False, T=200, grad_clip=500.0,
                           eta0=0.05)
    cfg_b = ProtocolConfig(detection_enabled=False, T=200, grad_clip=1e18,
                           eta0=0.05)
    sa, _ = run_trial(g, inst, None, cfg_a, np.random.default_rng(2))
    sb, _ = run_trial(g, inst, None, cfg_b, np.random.default_rng(2))
    assert np.array_equal(sa.z, sb.z)


def test_target_pull_drives_malicious_update():
    g = connected_graph(5, 0.8, 3, malicious=[4])
    inst = make_instance(5, seed=3)
    attack = AttackSpec(kind="target_pull", target=[2.0, 2.0], gain=1.5)
    cfg = ProtocolConfig(detection_enabled=False)
    state = init(g, inst, cfg, np.random.default_rng(6))
    round_step(state, inst, attack, cfg)
    want = state.v[4] - step_size(cfg, 1) * 1.5 * (state.x[4] - np.array([2.0, 2.0]))
    assert np.allclose(state.z[4], want)


def test_weight_floor_aborts_with_diagnostic():
    adj = np.zeros((3, 3), dtype=bool)
    adj[0, 1] = True  # node 0 never receives, its weight halves every round
    adj[1, 2] = adj[2, 1] = True
    g = DynamicDigraph.from_adjacency(adj)
    inst = make_instance(3, seed=5)
    cfg = ProtocolConfig(detection_enabled=False, y_floor=0.3)
    state = init(g, inst, cfg, np.random.default_rng(0), require_connected=False)
    round_step(state, inst, None, cfg)  # y_0 = 0.5
    with pytest.raises(NumericDegeneracyError, match="node 0"):
        round_step(state, inst, None, cfg)  # would hit 0.25 < 0.3


# ---- detection timing and bookkeeping ----


def test_no_severs_before_detection_start():
    g = connected_graph(10, 0.6, 14, malicious=[9])
    inst = make_instance(10, seed=14)
    attack = AttackSpec(kind="mean_shift", shift=5.0)
    cfg = ProtocolConfig(beta=0.0, detection_start=5, T=40)
    state, _ = run_trial(g, inst, attack, cfg, np.random.default_rng(4))
    assert state.sever_log
    assert min(t for t, _, _ in state.sever_log) >= 5


def test_first_scoring_round_is_one():
    # round zero has no step size behind the initial values, so even with
    # detection from the start the earliest sever carries round index one
    g = connected_graph(10, 0.6, 15, malicious=[9])
    inst = make_instance(10, seed=15)
    attack = AttackSpec(kind="mean_shift", shift=5.0)
    cfg = ProtocolConfig(beta=0.0, detection_start=0, T=40)
    state, _ = run_trial(g, inst, attack, cfg, np.random.default_rng(4))
    assert state.sever_log
    assert min(t for t, _, _ in state.sever_log) >= 1


def test_detection_disabled_never_severs():
    g = connected_graph(10, 0.6, 16, malicious=[8, 9])
    inst = make_instance(10, seed=16)
    attack = AttackSpec(kind="mean_shift", shift=5.0)
    cfg = ProtocolConfig(detection_enabled=False, T=60)
    state, _ = run_trial(g, inst, attack, cfg, np.random.default_rng(4))
    assert state.sever_log == []
    assert state.graph.num_edges == g.num_edges


def test_scored_entries_only_for_current_in_neighbors():
    g = connected_graph(12, 0.5, 18, malicious=[11])
    inst = make_instance(12, seed=18)
    attack = AttackSpec(kind="mean_shift", shift=5.0)
    cfg = ProtocolConfig(beta=1.0, T=80)
    state, _ = run_trial(g, inst, attack, cfg, np.random.default_rng(9))
    assert state.sever_log
    # scored[i, j] means receiver i holds a score for sender j, which
    # requires the edge j -> i to still exist
    assert not np.any(state.scored & ~state.graph.adj.T)
    for i in state.graph.regular:
        node = state.node_state(i)
        assert set(node.cum_scores) == state.graph.in_nbrs(i)


def test_node_state_snapshot_is_copy():
    g = connected_graph(5, 0.8, 20)
    inst = make_instance(5, seed=20)
    state = init(g, inst, ProtocolConfig(), np.random.default_rng(1))
    snap = state.node_state(2)
    snap.z[0] = 999.0
    assert state.z[2, 0] != 999.0


# ---- whole-trial behavior ----


def test_run_trial_leaves_callers_graph_alone():
    g = connected_graph(10, 0.6, 22, malicious=[9])
    edges_before = g.num_edges
    inst = make_instance(10, seed=22)
    attack = AttackSpec(kind="mean_shift", shift=5.0)
    state, _ = run_trial(g, inst, attack, ProtocolConfig(beta=1.0, T=60),
                         np.random.default_rng(0))
    assert g.num_edges == edges_before
    assert state.graph.num_edges < edges_before


def test_run_trial_deterministic():
    g = connected_graph(10, 0.6, 23, malicious=[9])
    inst = make_instance(10, seed=23)
    attack = AttackSpec(kind="mean_shift", shift=5.0)
    cfg = ProtocolConfig(beta=1.0, T=80)
    a, _ = run_trial(g, inst, attack, cfg, np.random.default_rng(55))
    b, _ = run_trial(g, inst, attack, cfg, np.random.default_rng(55))
    assert np.array_equal(a.z, b.z)
    assert np.array_equal(a.y, b.y)
    assert a.sever_log == b.sever_log


def test_run_trial_sampling_covers_first_and_last_round():
    g = connected_graph(6, 0.7, 24)
    inst = make_instance(6, seed=24)
    cfg = ProtocolConfig(detection_enabled=False, T=25)
    _, samples = run_trial(g, inst, None, cfg, np.random.default_rng(1),
                           sample_stride=10)
    rounds = [s.round for s in samples]
    assert rounds == [0, 10, 20, 25]
    with pytest.raises(ValueError):
        run_trial(g, inst, None, cfg, sample_stride=-1)


def test_honest_network_converges_to_shared_solution():
    from robustpush.objective import closed_form_solution

    g = connected_graph(10, 0.6, 25)
    inst = make_instance(10, seed=25)
    cfg = ProtocolConfig(detection_enabled=False, T=4000)
    state, _ = run_trial(g, inst, None, cfg, np.random.default_rng(2))
    target = closed_form_solution(inst)
    err = np.linalg.norm(state.x - target, axis=1).mean()
    assert err < 0.1


# ---- independent reference implementations ----


def reference_trial(graph, inst, attack, cfg, seed, T):
    """Plain-loop twin of the whole protocol, scores and severs included.

    Written against the documented behavior only: one uniform vector per
    round, half/half mass splitting, scoring from the senders' current
    de-biased values, frozen simultaneous thresholds, bidirectional severs.
    """
    rng = np.random.default_rng(seed)
    g = graph.copy()
    n, d = g.n, inst.d
    h_eff, s_eff = effective_rows(inst, g.malicious, attack)
    z = rng.standard_normal((n, d))
    y = np.ones(n)
    cum = {}
    scored = set()
    log = []
    regular = [i for i in range(n) if i not in g.malicious]

    for t in range(T):
        u = rng.random(n)
        picks = {}
        for i in range(n):
            outs = sorted(g.out_nbrs(i))
            if outs:
                picks[i] = outs[int(u[i] * len(outs))]
        v_new = np.zeros((n, d))
        y_new = np.zeros(n)
        for i in range(n):
            w = 0.5 if i in picks else 1.0
            v_new[i] += w * z[i]
            y_new[i] += w * y[i]
            if i in picks:
                v_new[picks[i]] += w * z[i]
                y_new[picks[i]] += w * y[i]
        x_new = v_new / y_new[:, None]
        grad = np.array(
            [2.0 * h_eff[i] * (h_eff[i] @ x_new[i] - s_eff[i]) for i in range(n)]
        )
        for i in range(n):
            nrm = np.linalg.norm(grad[i])
            if nrm > cfg.grad_clip:
                grad[i] *= cfg.grad_clip / nrm
        z_new = v_new - (cfg.eta0 / (t + 2) ** cfg.rho) * grad

        if cfg.detection_enabled and t >= max(1, cfg.detection_start):
            eta = cfg.eta0 / (t + 1) ** cfg.rho
            xh = {i: z[i] / y[i] for i in range(n)}
            senders_of = {r: {r} for r in range(n)}
            for i, r in picks.items():
                senders_of[r].add(i)
            touched = []
            for r in regular:
                ext = sorted(senders_of[r] - {r})
                if not ext:
                    continue
                touched.append(r)
                for j in ext:
                    s = instantaneous_score(r, j, frozenset(senders_of[r]), xh, eta)
                    cum[(r, j)] = update_cumulative_score(cum.get((r, j), 0.0), s, t, cfg)
                    scored.add((r, j))
            hits = []
            for r in touched:
                js = [j for j in sorted(g.in_nbrs(r)) if (r, j) in scored]
                chi = threshold([cum[(r, j)] for j in js], cfg.beta)
                if chi is None:
                    continue
                hits.extend((r, j) for j in js if cum[(r, j)] > chi)
            for i, j in hits:
                if g.has_edge(i, j) or g.has_edge(j, i):
                    g.sever(i, j)
                    cum[(i, j)] = cum[(j, i)] = 0.0
                    scored.discard((i, j))
                    scored.discard((j, i))
                    log.append((t, i, j))
        z, y = z_new, y_new
    return z, y, g, log, cum


def test_engine_matches_reference_without_detection():
    graph = connected_graph(10, 0.5, 30, malicious=[8, 9])
    inst = make_instance(10, seed=30)
    attack = AttackSpec(kind="mean_shift", shift=5.0)
    cfg = ProtocolConfig(detection_enabled=False, T=300)
    state, _ = run_trial(graph, inst, attack, cfg, np.random.default_rng(71))
    z, y, _, log, _ = reference_trial(graph, inst, attack, cfg, 71, 300)
    assert log == []
    assert np.allclose(state.z, z, rtol=1e-9, atol=1e-12)
    assert np.allclose(state.y, y, rtol=1e-9, atol=1e-12)


def test_engine_matches_reference_with_detection():
    graph = connected_graph(12, 0.5, 31, malicious=[10, 11])
    inst = make_instance(12, seed=31)
    attack = AttackSpec(kind="mean_shift", shift=5.0)
    cfg = ProtocolConfig(beta=1.0, alpha=0.9, T=150)
    state, _ = run_trial(graph, inst, attack, cfg, np.random.default_rng(72))
    z, y, g_ref, log, cum = reference_trial(graph, inst, attack, cfg, 72, 150)
    assert log  # the scenario does produce severs
    assert state.sever_log == log
    assert np.array_equal(state.graph.adj, g_ref.adj)
    assert np.allclose(state.z, z, rtol=1e-8, atol=1e-10)
    for (i, j), value in cum.items():
        assert state.cum[i, j] == pytest.approx(value, rel=1e-8, abs=1e-10)


def test_engine_matches_reference_literal_mode():
    graph = connected_graph(10, 0.5, 32, malicious=[9])
    inst = make_instance(10, seed=32)
    attack = AttackSpec(kind="mean_shift", shift=5.0)
    cfg = ProtocolConfig(beta=1.0, alpha=0.9, score_mode="literal", T=120)
    state, _ = run_trial(graph, inst, attack, cfg, np.random.default_rng(73))
    _, _, g_ref, log, _ = reference_trial(graph, inst, attack, cfg, 73, 120)
    assert state.sever_log == log
    assert np.array_equal(state.graph.adj, g_ref.adj)
