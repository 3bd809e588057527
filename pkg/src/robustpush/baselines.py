"""Reference algorithms the severing protocol is compared against.

Both baselines communicate with every neighbor each round over the fixed
(undirected, symmetric) topology and never sever anything; robustness has to
come from the update rule itself. Malicious nodes run the same update but
report values driven by their corrupted data, exactly as in the main
protocol.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .graph import DynamicDigraph
from .objective import AttackSpec, ObjectiveInstance, apply_attack
from .protocol import TrajectorySample
from .util import ensure_rng

__all__ = ["TVConfig", "TrimmedConfig", "run_tv", "run_trimmed"]


@dataclass(frozen=True)
class TVConfig:
    """Subgradient descent on f_i plus a total-variation coupling term.

    Each node descends ``grad f_i(x_i) + lam * sum_j sign(x_i - x_j)`` over
    its in-neighbors, with the elementwise sign convention sign(0) = 0. Large
    ``lam`` forces agreement, small ``lam`` leaves nodes near their private
    minimizers.
    """

    lam: float = 0.1
    eta0: float = 1.0
    rho: float = 1.0
    T: int = 5000

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.eta0 <= 0:
            raise ValueError("eta0 must be positive")
        if not 0.5 < self.rho <= 1.0:
            raise ValueError("rho must lie in (0.5, 1]")
        if self.T < 1:
            raise ValueError("T must be at least 1")


@dataclass(frozen=True)
class TrimmedConfig:
    """Consensus with per-coordinate trimming before the gradient step.

    Each round a node sorts the received values coordinate-wise, drops the
    ``kappa`` largest and ``kappa`` smallest, averages the survivors together
    with its own value, and takes a gradient step at that point. Fewer than
    2 * kappa + 1 received values leave nothing trustworthy to average, so the
    node falls back to its own value.
    """

    kappa: int = 3
    eta0: float = 1.0
    rho: float = 1.0
    T: int = 5000

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if self.eta0 <= 0:
            raise ValueError("eta0 must be positive")
        if not 0.5 < self.rho <= 1.0:
            raise ValueError("rho must lie in (0.5, 1]")
        if self.T < 1:
            raise ValueError("T must be at least 1")


def _prepare(graph, inst, attack):
    """Bake static attacks once; dynamic kinds stay query-time."""
    if attack is not None and attack.kind in ("spoof_shift", "mean_shift"):
        return apply_attack(inst, graph.malicious, attack), None
    return inst, attack


def _grad_all(inst, attack, malicious_idx, x):
    resid = (inst.h * x).sum(axis=1) - inst.s
    grad = 2.0 * inst.h * resid[:, None]
    if attack is not None and attack.kind == "target_pull" and malicious_idx.size:
        m = malicious_idx
        grad[m] = attack.gain * (x[m] - np.asarray(attack.target))
    return grad


def _sample(samples: list, t: int, x: np.ndarray, n: int) -> None:
    samples.append(
        TrajectorySample(
            round=t, x=x.copy(), y=np.ones(n), isolated=np.zeros(n, dtype=bool)
        )
    )


def run_tv(
    graph: DynamicDigraph,
    inst: ObjectiveInstance,
    attack: Optional[AttackSpec],
    cfg: TVConfig,
    rng: "np.random.Generator | int | None" = None,
    sample_stride: int = 0,
) -> tuple:
    """Run the TV-penalized baseline; returns ``(final_x, samples)``.

    Starts from x ~ N(0, I) (one ``standard_normal((n, d))`` draw, matching
    the main protocol's init contract). The topology never changes.
    """
    if sample_stride < 0:
        raise ValueError("sample_stride must be >= 0")
    if inst.n != graph.n:
        raise ValueError("instance/graph size mismatch")
    rng = ensure_rng(rng)
    n = graph.n
    inst, attack = _prepare(graph, inst, attack)
    mal_idx = np.asarray(sorted(graph.malicious), dtype=int)
    in_mask = graph.adj.T.astype(float)

    x = rng.standard_normal((n, inst.d))
    samples: List[TrajectorySample] = []
    if sample_stride > 0:
        _sample(samples, 0, x, n)
    for t in range(1, cfg.T + 1):
        eta = cfg.eta0 / (t + 1) ** cfg.rho
        grad = _grad_all(inst, attack, mal_idx, x)
        coupling = np.einsum("ij,ijd->id", in_mask, np.sign(x[:, None, :] - x[None, :, :]))
        x = x - eta * (grad + cfg.lam * coupling)
        if sample_stride > 0 and (t % sample_stride == 0 or t == cfg.T):
            _sample(samples, t, x, n)
    return x, samples


def run_trimmed(
    graph: DynamicDigraph,
    inst: ObjectiveInstance,
    attack: Optional[AttackSpec],
    cfg: TrimmedConfig,
    rng: "np.random.Generator | int | None" = None,
    sample_stride: int = 0,
) -> tuple:
    """Run the trimmed-consensus baseline; returns ``(final_x, samples)``."""
    if sample_stride < 0:
        raise ValueError("sample_stride must be >= 0")
    if inst.n != graph.n:
        raise ValueError("instance/graph size mismatch")
    rng = ensure_rng(rng)
    n = graph.n
    inst, attack = _prepare(graph, inst, attack)
    mal_idx = np.asarray(sorted(graph.malicious), dtype=int)
    in_lists = [np.asarray(sorted(graph.in_nbrs(i)), dtype=int) for i in range(n)]

    x = rng.standard_normal((n, inst.d))
    samples: List[TrajectorySample] = []
    if sample_stride > 0:
        _sample(samples, 0, x, n)
    for t in range(1, cfg.T + 1):
        eta = cfg.eta0 / (t + 1) ** cfg.rho
        m = np.empty_like(x)
        for i in range(n):
            nbrs = in_lists[i]
            if nbrs.size < 2 * cfg.kappa + 1:
                m[i] = x[i]
                continue
            vals = np.sort(x[nbrs], axis=0)
            survivors = vals[cfg.kappa : nbrs.size - cfg.kappa]
            m[i] = (survivors.sum(axis=0) + x[i]) / (survivors.shape[0] + 1)
        grad = _grad_all(inst, attack, mal_idx, m)
        x = m - eta * grad
        if sample_stride > 0 and (t % sample_stride == 0 or t == cfg.T):
            _sample(samples, t, x, n)
    return x, samples
