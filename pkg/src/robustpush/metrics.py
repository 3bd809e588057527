"""Evaluation metrics over the honest nodes' final estimates."""

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .graph import DynamicDigraph, count_attack_edges
from .objective import ObjectiveInstance, loss

__all__ = [
    "optimality_gap",
    "cost_increase",
    "disagreement",
    "degradation_ratio",
    "DetectionStats",
    "detection_stats",
]


def _check_p(p: float) -> float:
    if p != np.inf and p < 1:
        raise ValueError("p must be >= 1 (or inf)")
    return p


def _row_norms(rows: np.ndarray, p: float) -> np.ndarray:
    return np.linalg.norm(np.atleast_2d(rows), ord=p, axis=1)


def optimality_gap(finals: np.ndarray, benchmark: np.ndarray, p: float = 2) -> float:
    """Mean p-norm distance of the final estimates to the benchmark point."""
    _check_p(p)
    finals = np.atleast_2d(np.asarray(finals, dtype=float))
    return float(_row_norms(finals - np.asarray(benchmark, dtype=float), p).mean())


def cost_increase(
    inst: ObjectiveInstance,
    node_ids: Sequence[int],
    finals: np.ndarray,
    benchmark: np.ndarray,
    aggregate_form: bool = False,
) -> float:
    """Mean excess private cost at the finals versus at the benchmark.

    The default averages the per-node differences f_i(x_i) - f_i(x*); the
    aggregate form subtracts the mean benchmark cost from the mean final cost
    instead. The two coincide by linearity and both stay available so either
    reading of the metric can be reproduced. Can be negative: an individual
    node may fit its own measurement better than the benchmark does.
    """
    node_ids = list(node_ids)
    finals = np.atleast_2d(np.asarray(finals, dtype=float))
    if len(node_ids) != finals.shape[0]:
        raise ValueError("one final estimate per node id required")
    f_final = np.asarray([loss(inst, i, x) for i, x in zip(node_ids, finals)])
    f_bench = np.asarray([loss(inst, i, benchmark) for i in node_ids])
    if aggregate_form:
        return float(f_final.mean() - f_bench.mean())
    return float((f_final - f_bench).mean())


def disagreement(finals: np.ndarray, p: float = 2) -> float:
    """Mean p-norm distance of the finals to their own average."""
    _check_p(p)
    finals = np.atleast_2d(np.asarray(finals, dtype=float))
    center = finals.mean(axis=0)
    return float(_row_norms(finals - center, p).mean())


def degradation_ratio(
    finals: np.ndarray, x_o: np.ndarray, benchmark: np.ndarray, p: float = 2
) -> float:
    """Mean distance to the ground truth, relative to the benchmark's distance.

    Values near 1 mean the network does about as well as centralized least
    squares; the ratio is undefined when the benchmark coincides with the
    ground truth (noise-free data), which raises ``ZeroDivisionError``.
    """
    _check_p(p)
    x_o = np.asarray(x_o, dtype=float)
    denom = float(np.linalg.norm(np.asarray(benchmark, dtype=float) - x_o, ord=p))
    if denom == 0.0:
        raise ZeroDivisionError("benchmark coincides with the ground truth")
    finals = np.atleast_2d(np.asarray(finals, dtype=float))
    return float(_row_norms(finals - x_o, p).mean() / denom)


@dataclass(frozen=True)
class DetectionStats:
    """Topology outcome of a trial's severing activity.

    attack_edges_remaining  directed malicious-to-regular edges left at the end
    severed_total           distinct links removed over the trial
    false_severs            removed links that joined two regular nodes
    regular_isolated        regular nodes outside the largest strongly
                            connected component of the final regular-only
                            subgraph
    isolation_round         round whose severs removed the last attack edge
                            (0 when none existed, None when some remain)
    """

    attack_edges_remaining: int
    severed_total: int
    false_severs: int
    regular_isolated: int
    isolation_round: Optional[int]


def detection_stats(
    initial: DynamicDigraph, sever_log: Iterable[Tuple[int, int, int]]
) -> DetectionStats:
    """Replay a sever log against the starting topology and summarize it."""
    g = initial.copy()
    mal = g.malicious
    remaining = count_attack_edges(g)
    isolation_round: Optional[int] = 0 if remaining == 0 else None
    false_severs = 0
    total = 0
    for rnd, i, j in sever_log:
        if not (g.has_edge(i, j) or g.has_edge(j, i)):
            raise ValueError(f"sever log names a missing link ({i}, {j})")
        g.sever(i, j)
        total += 1
        if i not in mal and j not in mal:
            false_severs += 1
        if isolation_round is None and count_attack_edges(g) == 0:
            isolation_round = int(rnd)

    reg = [i for i in range(g.n) if i not in mal]
    if reg:
        sub = g.adj[np.ix_(reg, reg)]
        ncomp, labels = connected_components(
            csr_matrix(sub), directed=True, connection="strong"
        )
        largest = max(np.bincount(labels, minlength=ncomp)) if len(reg) else 0
        regular_isolated = len(reg) - int(largest)
    else:
        regular_isolated = 0

    return DetectionStats(
        attack_edges_remaining=count_attack_edges(g),
        severed_total=total,
        false_severs=false_severs,
        regular_isolated=regular_isolated,
        isolation_round=isolation_round,
    )
