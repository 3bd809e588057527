"""Directed communication graphs with a regular/malicious node split.

Nodes are integers ``0..n-1``. A subset of nodes is marked malicious; the
split never changes after construction, only edges do. Severing removes both
directions of a link at once, which is how a receiver cuts off a suspect: it
stops listening *and* stops feeding the suspect its own values.
"""

from typing import Iterable, Iterator, Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

__all__ = [
    "DynamicDigraph",
    "gen_erdos_renyi",
    "sample_connected",
    "is_strongly_connected",
    "strongly_connected_components",
    "count_attack_edges",
    "to_edge_list",
]


class DynamicDigraph:
    """Mutable directed graph over a fixed node set.

    The adjacency is a dense boolean matrix (``adj[i, j]`` means edge i -> j);
    the graphs used here are small and dense enough that this beats sparse
    bookkeeping. ``version`` increments on every mutation so callers can cache
    derived arrays (out-degree counts and the like) safely.
    """

    __slots__ = ("n", "adj", "malicious", "version")

    def __init__(self, n: int, malicious: Iterable[int] = ()):
        if n < 1:
            raise ValueError("graph needs at least one node")
        mal = frozenset(int(i) for i in malicious)
        bad = [i for i in mal if not 0 <= i < n]
        if bad:
            raise ValueError(f"malicious ids out of range: {sorted(bad)}")
        self.n = int(n)
        self.adj = np.zeros((n, n), dtype=bool)
        self.malicious = mal
        self.version = 0

    @classmethod
    def from_adjacency(cls, adj: np.ndarray, malicious: Iterable[int] = ()) -> "DynamicDigraph":
        adj = np.asarray(adj, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be square")
        if adj.diagonal().any():
            raise ValueError("self loops are not allowed")
        g = cls(adj.shape[0], malicious)
        g.adj = adj.copy()
        return g

    # ---- mutation ----

    def add_edge(self, i: int, j: int) -> None:
        """Insert the directed edge i -> j."""
        self._check(i)
        self._check(j)
        if i == j:
            raise ValueError("self loops are not allowed")
        self.adj[i, j] = True
        self.version += 1

    def sever(self, i: int, j: int) -> None:
        """Remove both directions of the link between i and j (idempotent)."""
        self._check(i)
        self._check(j)
        self.adj[i, j] = False
        self.adj[j, i] = False
        self.version += 1

    # ---- queries ----

    def has_edge(self, i: int, j: int) -> bool:
        self._check(i)
        self._check(j)
        return bool(self.adj[i, j])

    def out_nbrs(self, i: int) -> set:
        """Nodes that i sends to."""
        self._check(i)
        return set(np.nonzero(self.adj[i])[0].tolist())

    def in_nbrs(self, i: int) -> set:
        """Nodes that send to i."""
        self._check(i)
        return set(np.nonzero(self.adj[:, i])[0].tolist())

    def edges(self) -> Iterator[tuple]:
        rows, cols = np.nonzero(self.adj)
        return zip(rows.tolist(), cols.tolist())

    @property
    def num_edges(self) -> int:
        return int(self.adj.sum())

    @property
    def regular(self) -> list:
        return [i for i in range(self.n) if i not in self.malicious]

    def copy(self) -> "DynamicDigraph":
        g = DynamicDigraph(self.n, self.malicious)
        g.adj = self.adj.copy()
        g.version = self.version
        return g

    def _check(self, i: int) -> None:
        if not 0 <= i < self.n:
            raise ValueError(f"node {i} out of range for n={self.n}")

    def __repr__(self) -> str:
        return (
            f"DynamicDigraph(n={self.n}, edges={self.num_edges}, "
            f"malicious={sorted(self.malicious)})"
        )


def gen_erdos_renyi(
    n: int,
    p: float,
    rng: "np.random.Generator | int | None" = None,
    malicious: Iterable[int] = (),
) -> DynamicDigraph:
    """Sample an undirected Erdos-Renyi graph and return it as a digraph.

    Each unordered pair is linked with probability ``p`` independently; a
    linked pair contributes both directed edges, so communication starts out
    symmetric. Deterministic for a given seeded generator.
    """
    from .util import ensure_rng

    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability must lie in [0, 1], got {p}")
    rng = ensure_rng(rng)
    u = rng.random((n, n))
    upper = np.triu(u < p, k=1)
    g = DynamicDigraph(n, malicious)
    g.adj = upper | upper.T
    return g


def sample_connected(
    n: int,
    p: float,
    rng: "np.random.Generator | int | None" = None,
    malicious: Iterable[int] = (),
    max_tries: int = 200,
) -> tuple:
    """Redraw Erdos-Renyi graphs until one is strongly connected.

    Returns ``(graph, tries)``. Redraws come from the same generator stream,
    so the result is still a deterministic function of the seed.
    """
    from .util import ensure_rng

    rng = ensure_rng(rng)
    for attempt in range(1, max_tries + 1):
        g = gen_erdos_renyi(n, p, rng, malicious)
        if is_strongly_connected(g):
            return g, attempt
    raise RuntimeError(
        f"no strongly connected graph in {max_tries} draws (n={n}, p={p})"
    )


def _restricted_adj(g: DynamicDigraph, restrict: Optional[Iterable[int]]) -> np.ndarray:
    if restrict is None:
        return g.adj
    idx = sorted(set(int(i) for i in restrict))
    if not idx:
        raise ValueError("restriction set is empty")
    for i in idx:
        g._check(i)
    sub = np.asarray(idx)
    return g.adj[np.ix_(sub, sub)]


def is_strongly_connected(g: DynamicDigraph, restrict: Optional[Iterable[int]] = None) -> bool:
    """True if every node (of the restriction) reaches every other one.

    ``restrict`` induces the subgraph on that node set first. A single-node
    graph counts as strongly connected.
    """
    adj = _restricted_adj(g, restrict)
    if adj.shape[0] == 1:
        return True
    ncomp, _ = connected_components(csr_matrix(adj), directed=True, connection="strong")
    return ncomp == 1


def strongly_connected_components(g: DynamicDigraph) -> list:
    """Partition the nodes into strongly connected components (list of sets)."""
    ncomp, labels = connected_components(
        csr_matrix(g.adj), directed=True, connection="strong"
    )
    comps = [set() for _ in range(ncomp)]
    for node, lab in enumerate(labels):
        comps[lab].add(int(node))
    return comps


def count_attack_edges(g: DynamicDigraph) -> int:
    """Number of directed edges from a malicious node into a regular one."""
    if not g.malicious:
        return 0
    mal = np.asarray(sorted(g.malicious))
    reg = np.asarray([i for i in range(g.n) if i not in g.malicious], dtype=int)
    if reg.size == 0:
        return 0
    return int(g.adj[np.ix_(mal, reg)].sum())


def to_edge_list(g: DynamicDigraph) -> str:
    """Serialize as edge-list text: a malicious-ids header, one edge per line."""
    lines = ["# malicious: " + " ".join(str(i) for i in sorted(g.malicious))]
    lines.extend(f"{i} {j}" for i, j in g.edges())
    return "\n".join(lines) + "\n"
