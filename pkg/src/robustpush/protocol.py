"""Push-sum subgradient descent with score-based severing of suspect links.

Every round each node sends its value pair ``(z, y)`` to itself and to one
uniformly chosen out-neighbor, splitting its mass equally over the recipients.
Received mass is summed into ``(v, y)``, the de-biased estimate is
``x = v / y``, and a subgradient step on the local cost produces the next
``z``. Honest nodes additionally score every in-neighbor by how far its
de-biased value sits from the other senders' values this round; scores
accumulate with a forgetting factor, and a neighbor whose accumulated score
rises more than ``beta`` sample standard deviations above the mean of the
scored neighborhood is severed in both directions.

Randomness contract (relied on by reference implementations in the tests):
each round consumes exactly one ``rng.random(n)`` vector, one uniform per node
in node order; node i with out-degree c picks its recipient as the
``floor(u_i * c)``-th out-neighbor in ascending node order. Nodes without
out-neighbors still consume their slot. ``init`` consumes a single
``rng.standard_normal((n, d))`` draw. Nothing else touches the generator, so
trajectories are bit-reproducible from the seed.
"""

import copy
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .graph import DynamicDigraph, is_strongly_connected
from .objective import AttackSpec, ObjectiveInstance, effective_rows
from .util import ensure_rng

__all__ = [
    "NumericDegeneracyError",
    "ProtocolConfig",
    "NodeState",
    "SimState",
    "TrajectorySample",
    "step_size",
    "init",
    "xhat",
    "instantaneous_score",
    "update_cumulative_score",
    "threshold",
    "detect_and_sever",
    "round_step",
    "run_trial",
]

SCORE_MODES = ("forgetting", "literal")


class NumericDegeneracyError(ArithmeticError):
    """A push-sum weight collapsed below the configured floor."""


@dataclass(frozen=True)
class ProtocolConfig:
    """Tuning knobs for the protocol.

    eta0, rho         step size schedule eta_t = eta0 / (t+1)**rho; rho must
                      lie in (0.5, 1] so the steps sum to infinity while
                      their squares stay summable
    alpha             forgetting factor for accumulated scores, in (0, 1)
    beta              severing threshold in sample standard deviations
    score_mode        "forgetting": S~ <- alpha * S~ + S (default);
                      "literal":    S~ <- S~ + alpha**t * S
    detection_enabled turn scoring/severing off entirely
    detection_start   first round eligible for scoring (never before round 1)
    T                 number of rounds a trial runs
    y_floor           abort threshold for push-sum weights
    grad_clip         l2 bound applied to each node's evaluated gradient.
                      The convergence guarantees for push-sum subgradient
                      methods assume bounded subgradients; without a bound, a
                      node whose weight y has randomly dipped evaluates its
                      quadratic gradient at a wildly de-biased point and
                      injects runaway mass into the network. The default is
                      far above any gradient magnitude reached in sane states
                      (honest and attacked alike), so it only arrests those
                      excursions.
    """

    eta0: float = 1.0
    rho: float = 1.0
    alpha: float = 0.9
    beta: float = 1.5
    score_mode: str = "forgetting"
    detection_enabled: bool = True
    detection_start: int = 0
    T: int = 5000
    y_floor: float = 1e-12
    grad_clip: float = 500.0

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ValueError("eta0 must be positive")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")
        if not 0.5 < self.rho <= 1.0:
            raise ValueError("rho must lie in (0.5, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.score_mode not in SCORE_MODES:
            raise ValueError(f"score_mode must be one of {SCORE_MODES}")
        if self.detection_start < 0:
            raise ValueError("detection_start must be nonnegative")
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.y_floor <= 0:
            raise ValueError("y_floor must be positive")


def step_size(cfg: ProtocolConfig, t: int) -> float:
    """Diminishing step eta_t = eta0 / (t+1)**rho, defined for rounds t >= 1."""
    if t < 1:
        raise ValueError("step size is defined for rounds t >= 1")
    return cfg.eta0 / (t + 1) ** cfg.rho


@dataclass(frozen=True)
class NodeState:
    """Read-only snapshot of one node, for inspection and tests."""

    z: np.ndarray
    v: np.ndarray
    y: float
    x: np.ndarray
    cum_scores: dict
    last_senders: frozenset


@dataclass
class TrajectorySample:
    """One recorded round: values, weights, and who is cut off entirely."""

    round: int
    x: np.ndarray
    y: np.ndarray
    isolated: np.ndarray


class SimState:
    """Full mutable simulation state; self-contained and copyable.

    Mass bookkeeping: the score matrix ``cum[i, j]`` is receiver-major
    (receiver i's accumulated score for sender j) and is only meaningful where
    ``scored[i, j]`` is set; severing clears both orientations. ``sent_to``
    records last round's message matrix including the self messages.
    """

    __slots__ = (
        "graph", "rng", "round", "z", "v", "y", "x",
        "cum", "scored", "sent_to", "sever_log",
        "_cache_version", "_counts", "_cumadj", "_regular_mask", "_malicious_idx",
    )

    def __init__(self, graph: DynamicDigraph, rng: np.random.Generator, z0: np.ndarray):
        n = graph.n
        self.graph = graph
        self.rng = rng
        self.round = 0
        self.z = np.array(z0, dtype=float)
        self.v = self.z.copy()
        self.y = np.ones(n)
        self.x = self.z.copy()
        self.cum = np.zeros((n, n))
        self.scored = np.zeros((n, n), dtype=bool)
        self.sent_to = np.eye(n, dtype=bool)
        self.sever_log: List[Tuple[int, int, int]] = []
        self._cache_version = -1
        self._counts = None
        self._cumadj = None
        mask = np.ones(n, dtype=bool)
        for m in graph.malicious:
            mask[m] = False
        self._regular_mask = mask
        self._malicious_idx = np.asarray(sorted(graph.malicious), dtype=int)

    # ---- derived views ----

    def senders_of(self, i: int) -> frozenset:
        """Who delivered a message to i in the last executed round (self included)."""
        return frozenset(np.nonzero(self.sent_to[:, i])[0].tolist())

    def node_state(self, i: int) -> NodeState:
        nbrs = sorted(self.graph.in_nbrs(i))
        return NodeState(
            z=self.z[i].copy(),
            v=self.v[i].copy(),
            y=float(self.y[i]),
            x=self.x[i].copy(),
            cum_scores={j: float(self.cum[i, j]) for j in nbrs},
            last_senders=self.senders_of(i),
        )

    @property
    def nodes(self) -> list:
        return [self.node_state(i) for i in range(self.graph.n)]

    def isolated_mask(self) -> np.ndarray:
        adj = self.graph.adj
        return (~adj.any(axis=0)) & (~adj.any(axis=1))

    def copy(self) -> "SimState":
        dup = SimState(self.graph.copy(), copy.deepcopy(self.rng), self.z)
        dup.round = self.round
        dup.v = self.v.copy()
        dup.y = self.y.copy()
        dup.x = self.x.copy()
        dup.cum = self.cum.copy()
        dup.scored = self.scored.copy()
        dup.sent_to = self.sent_to.copy()
        dup.sever_log = list(self.sever_log)
        return dup

    def _topology(self) -> tuple:
        """Out-degree counts and cumulative adjacency, cached per graph version."""
        if self._cache_version != self.graph.version:
            adj = self.graph.adj
            self._counts = adj.sum(axis=1)
            self._cumadj = np.cumsum(adj, axis=1)
            self._cache_version = self.graph.version
        return self._counts, self._cumadj


def init(
    graph: DynamicDigraph,
    inst: ObjectiveInstance,
    cfg: ProtocolConfig,
    rng: "np.random.Generator | int | None" = None,
    require_connected: bool = True,
) -> SimState:
    """Fresh state at round 0: z ~ N(0, I), unit weights, v = z, x = z.

    Requires the communication graph to be strongly connected (set
    ``require_connected=False`` only for synthetic test states) and the
    instance to cover every node.
    """
    if inst.n != graph.n:
        raise ValueError(f"instance has {inst.n} rows for a {graph.n}-node graph")
    if require_connected and not is_strongly_connected(graph):
        raise ValueError("communication graph must be strongly connected")
    rng = ensure_rng(rng)
    z0 = rng.standard_normal((graph.n, inst.d))
    return SimState(graph, rng, z0)


def xhat(z: np.ndarray, y: float) -> np.ndarray:
    """De-biased estimate z / y; the push-sum weight must be positive."""
    if y <= 0:
        raise NumericDegeneracyError(f"push-sum weight {y} is not positive")
    return np.asarray(z, dtype=float) / y


def instantaneous_score(
    i: int, j: int, senders: frozenset, xhats: dict, eta: float
) -> float:
    """How far sender j's de-biased value sits from receiver i's other senders.

    ``senders`` is the set of nodes that reached receiver i this round and
    ``xhats`` maps each of them to its de-biased vector. The score is the
    squared norm of the summed deviations of j from every other sender,
    normalized by the current squared step size, so a constant-offset liar
    scores ~(k-1)^2 times its offset while honest jitter stays bounded.
    """
    if i == j:
        raise ValueError("a receiver does not score itself")
    if j not in senders:
        raise ValueError(f"node {j} was not among this round's senders")
    if eta <= 0:
        raise ValueError("step size must be positive")
    xj = np.asarray(xhats[j], dtype=float)
    total = np.zeros_like(xj)
    for ell in senders:
        if ell != j:
            total += xj - np.asarray(xhats[ell], dtype=float)
    return float(total @ total) / (eta * eta)


def update_cumulative_score(prev: float, inst_score: float, t: int, cfg: ProtocolConfig) -> float:
    """Fold one instantaneous score into the running score for round t."""
    if inst_score < 0:
        raise ValueError("instantaneous scores are nonnegative")
    if cfg.score_mode == "forgetting":
        return cfg.alpha * prev + inst_score
    return prev + cfg.alpha**t * inst_score


def threshold(scores, beta: float) -> Optional[float]:
    """Severing bar: mean + beta * sample std. None when under 2 scores."""
    arr = np.asarray(list(scores), dtype=float)
    if arr.size < 2:
        return None
    return float(arr.mean() + beta * arr.std(ddof=1))


def detect_and_sever(state: SimState, i: int, cfg: ProtocolConfig) -> list:
    """Apply receiver i's severing rule to its scored in-neighbors.

    Thresholds are computed from the frozen current scores; every scored
    neighbor strictly above the bar is severed in both directions and its
    score entries cleared. Returns the severed ids (ascending). Only honest
    nodes run detection.
    """
    g = state.graph
    if i in g.malicious:
        raise ValueError("malicious nodes do not run detection")
    js = [j for j in sorted(g.in_nbrs(i)) if state.scored[i, j]]
    chi = threshold([float(state.cum[i, j]) for j in js], cfg.beta)
    if chi is None:
        return []
    hits = [j for j in js if state.cum[i, j] > chi]
    for j in hits:
        _sever_and_clear(state, i, j, state.round)
    return hits


def _sever_and_clear(state: SimState, i: int, j: int, t: int) -> None:
    state.graph.sever(i, j)
    state.cum[i, j] = state.cum[j, i] = 0.0
    state.scored[i, j] = state.scored[j, i] = False
    state.sever_log.append((t, i, j))


def _scatter_rows(dst: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    out = np.empty((n, rows.shape[1]))
    for c in range(rows.shape[1]):
        out[:, c] = np.bincount(dst, weights=rows[:, c], minlength=n)
    return out


def round_step(
    state: SimState,
    inst: ObjectiveInstance,
    attack: Optional[AttackSpec],
    cfg: ProtocolConfig,
) -> None:
    """Advance one synchronous round: gossip, subgradient step, detection.

    All round-(t+1) quantities are computed from frozen round-t values. Each
    sender splits its mass equally over its recipients (self plus the chosen
    out-neighbor; self only when it has no out-neighbors, keeping the total
    weight exactly conserved). Scoring sees the senders' round-t values and
    divides by the step size that produced them, and severs are applied
    simultaneously from frozen thresholds after all scores update.
    """
    g = state.graph
    n = g.n
    t = state.round
    counts, cumadj = state._topology()

    u = state.rng.random(n)
    has_out = counts > 0
    pick = (u * counts).astype(np.int64)
    sel = (cumadj > pick[:, None]).argmax(axis=1)
    src = np.nonzero(has_out)[0]
    dst = sel[src]

    w = np.where(has_out, 0.5, 1.0)
    wz = state.z * w[:, None]
    wy = state.y * w
    v_new = wz + _scatter_rows(dst, wz[src], n)
    y_new = wy + np.bincount(dst, weights=wy[src], minlength=n)
    if np.any(y_new < cfg.y_floor):
        node = int(np.argmin(y_new))
        raise NumericDegeneracyError(
            f"push-sum weight of node {node} fell to {y_new[node]:.3e} "
            f"at round {t + 1} (floor {cfg.y_floor:.1e})"
        )
    x_new = v_new / y_new[:, None]

    h_eff, s_eff = effective_rows(inst, g.malicious, attack)
    resid = (h_eff * x_new).sum(axis=1) - s_eff
    grad = 2.0 * h_eff * resid[:, None]
    if (
        attack is not None
        and attack.kind == "target_pull"
        and state._malicious_idx.size
    ):
        m = state._malicious_idx
        grad[m] = attack.gain * (x_new[m] - np.asarray(attack.target))
    norms = np.linalg.norm(grad, axis=1)
    over = norms > cfg.grad_clip
    if over.any():
        grad[over] *= (cfg.grad_clip / norms[over])[:, None]
    z_new = v_new - step_size(cfg, t + 1) * grad

    if cfg.detection_enabled and t >= max(1, cfg.detection_start):
        _score_and_sever(state, src, dst, t, cfg)

    sent = np.zeros((n, n), dtype=bool)
    sent[np.arange(n), np.arange(n)] = True
    sent[src, dst] = True
    state.sent_to = sent
    state.v = v_new
    state.y = y_new
    state.x = x_new
    state.z = z_new
    state.round = t + 1


def _score_and_sever(
    state: SimState, src: np.ndarray, dst: np.ndarray, t: int, cfg: ProtocolConfig
) -> None:
    """Vectorized scoring over this round's messages, then simultaneous severs.

    Equivalent to running :func:`instantaneous_score`,
    :func:`update_cumulative_score`, and :func:`detect_and_sever` per honest
    receiver on frozen values; the identity used is that the summed deviation
    of sender j equals k * xhat_j - sum of all senders' xhats.
    """
    n = state.graph.n
    eta = step_size(cfg, t)
    xh = state.z / state.y[:, None]
    k = 1.0 + np.bincount(dst, minlength=n)
    total = xh + _scatter_rows(dst, xh[src], n)

    reg_recv = state._regular_mask[dst]
    js = src[reg_recv]
    rs = dst[reg_recv]
    if js.size == 0:
        return
    diff = k[rs, None] * xh[js] - total[rs]
    s_inst = (diff * diff).sum(axis=1) / (eta * eta)
    if cfg.score_mode == "forgetting":
        state.cum[rs, js] = cfg.alpha * state.cum[rs, js] + s_inst
    else:
        state.cum[rs, js] += cfg.alpha**t * s_inst
    state.scored[rs, js] = True

    recv = np.unique(rs)
    rows = state.cum[recv]
    mask = state.scored[recv]
    nsc = mask.sum(axis=1)
    denom = np.maximum(nsc, 1)
    mean = (rows * mask).sum(axis=1) / denom
    dev = (rows - mean[:, None]) * mask
    var = (dev * dev).sum(axis=1) / np.maximum(nsc - 1, 1)
    chi = mean + cfg.beta * np.sqrt(var)
    eligible = nsc >= 2
    exceed = mask & (rows > chi[:, None]) & eligible[:, None]
    for ri, j in zip(*np.nonzero(exceed)):
        i = int(recv[ri])
        j = int(j)
        if state.graph.adj[i, j] or state.graph.adj[j, i]:
            _sever_and_clear(state, i, j, t)


def run_trial(
    graph: DynamicDigraph,
    inst: ObjectiveInstance,
    attack: Optional[AttackSpec],
    cfg: ProtocolConfig,
    rng: "np.random.Generator | int | None" = None,
    sample_stride: int = 0,
) -> tuple:
    """Run one full trial of cfg.T rounds on a copy of the graph.

    The caller's graph is never mutated; the evolved topology is available on
    the returned state. Static attacks are baked into a working instance once
    up front (the per-round overlay would rebuild identical rows every round).
    With ``sample_stride`` k > 0, rounds 0, k, 2k, ... and the final round are
    recorded. Returns ``(state, samples)``.
    """
    if sample_stride < 0:
        raise ValueError("sample_stride must be >= 0")
    g = graph.copy()
    work_inst, work_attack = inst, attack
    if attack is not None and attack.kind in ("spoof_shift", "mean_shift"):
        from .objective import apply_attack

        work_inst = apply_attack(inst, g.malicious, attack)
        work_attack = None
    state = init(g, work_inst, cfg, rng)
    samples: List[TrajectorySample] = []

    def record():
        samples.append(
            TrajectorySample(
                round=state.round,
                x=state.x.copy(),
                y=state.y.copy(),
                isolated=state.isolated_mask(),
            )
        )

    if sample_stride > 0:
        record()
    for _ in range(cfg.T):
        round_step(state, work_inst, work_attack, cfg)
        if sample_stride > 0 and state.round % sample_stride == 0:
            record()
    if sample_stride > 0 and samples[-1].round != state.round:
        record()
    return state, samples
