"""Communication/task graph analysis for multi-agent estimation.

Provides k-hop neighborhoods on the undirected communication graph, the
induced-subgraph matrices L (Laplacian), H (shared-neighbor diagonal) and
M = L + H used by the distributed observer, the cluster decomposition
obtained by intersecting the communication and task graphs, and the
structural checks the control architecture relies on (connectivity,
task-graph acyclicity, intra-cluster communication coverage).

Agent identifiers are arbitrary positive integers; every ordering exposed
here (neighborhood members, cluster labels, topological order) is
deterministic: ascending ids, then lexicographic.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AssumptionViolationError,
    EmptyNeighborhoodError,
    InvalidParameterError,
)

POSDEF_TOL = 1e-9


class CommGraph:
    """Undirected, simple communication graph over a fixed agent set."""

    def __init__(self, agents, edges):
        self.agents = tuple(sorted(set(agents)))
        if len(self.agents) == 0:
            raise InvalidParameterError("graph needs at least one agent")
        known = set(self.agents)
        adj = {i: set() for i in self.agents}
        norm_edges = set()
        for a, b in edges:
            if a == b:
                raise InvalidParameterError(f"self-loop {a}-{b} not allowed")
            if a not in known or b not in known:
                raise InvalidParameterError(f"edge {a}-{b} uses unknown agent id")
            adj[a].add(b)
            adj[b].add(a)
            norm_edges.add((min(a, b), max(a, b)))
        self.edges = frozenset(norm_edges)
        self._adj = {i: tuple(sorted(s)) for i, s in adj.items()}

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def neighbors(self, i) -> tuple:
        """Direct (1-hop) neighbors of agent i."""
        return self._adj[i]

    def closed_neighbors(self, i) -> frozenset:
        """Agent i together with its direct neighbors."""
        return frozenset(self._adj[i]) | {i}

    def has_edge(self, a, b) -> bool:
        return (min(a, b), max(a, b)) in self.edges

    def bfs_distances(self, src) -> dict:
        """Shortest-path hop counts from src to every reachable agent."""
        dist = {src: 0}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in self._adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist

    def is_connected(self) -> bool:
        return len(self.bfs_distances(self.agents[0])) == self.n_agents


class TaskGraph:
    """Directed task-dependency graph; edge (i, j) means task i needs x_j.

    Self-loops are stored but ignored by the cycle check, since a task may
    always depend on its own agent's state.
    """

    def __init__(self, agents, edges):
        self.agents = tuple(sorted(set(agents)))
        known = set(self.agents)
        self.edges = frozenset((a, b) for a, b in edges)
        for a, b in self.edges:
            if a not in known or b not in known:
                raise InvalidParameterError(f"task edge ({a},{b}) uses unknown agent id")

    def task_neighborhood(self, i) -> frozenset:
        """Agents whose state task i depends on, always including i."""
        return frozenset(b for a, b in self.edges if a == i) | {i}

    def has_cycle(self) -> bool:
        """Kahn's algorithm over the graph with self-loops dropped."""
        succ = {i: set() for i in self.agents}
        indeg = {i: 0 for i in self.agents}
        for a, b in self.edges:
            if a != b and b not in succ[a]:
                succ[a].add(b)
                indeg[b] += 1
        queue = [i for i in self.agents if indeg[i] == 0]
        seen = 0
        while queue:
            u = queue.pop()
            seen += 1
            for v in succ[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    queue.append(v)
        return seen != len(self.agents)


@dataclass(frozen=True)
class KHopNeighborhood:
    """Agents at hop distance 2..k from the owner, in ascending-id order."""

    owner: int
    k: int
    members: tuple

    @property
    def size(self) -> int:
        return len(self.members)

    def index_of(self, agent) -> int:
        return self.members.index(agent)


def k_hop_neighbors(g: CommGraph, i, k: int) -> KHopNeighborhood:
    """Agents reachable from i over shortest paths of length 2..k."""
    if k < 2:
        raise InvalidParameterError(f"k must be >= 2, got {k}")
    dist = g.bfs_distances(i)
    members = tuple(sorted(j for j, d in dist.items() if 2 <= d <= k))
    return KHopNeighborhood(owner=i, k=k, members=members)


@dataclass(frozen=True)
class InducedMatrices:
    """L, H, M for one agent's k-hop induced subgraph.

    L is the Laplacian of the subgraph induced by the neighborhood members,
    H is diagonal with H_jj the number of direct neighbors member j shares
    with the owner, and M = L + H. Rows/columns follow the member ordering
    of the neighborhood.
    """

    owner: int
    members: tuple
    L: np.ndarray
    H: np.ndarray
    M: np.ndarray


def induced_matrices(g: CommGraph, nbh: KHopNeighborhood) -> InducedMatrices:
    """Build L, H and M = L + H for a k-hop neighborhood of g."""
    members = nbh.members
    eta = len(members)
    if eta == 0:
        raise EmptyNeighborhoodError(
            f"agent {nbh.owner} has no {nbh.k}-hop neighbors; nothing to estimate"
        )
    pos = {m: idx for idx, m in enumerate(members)}
    L = np.zeros((eta, eta))
    for a, b in g.edges:
        if a in pos and b in pos:
            ia, ib = pos[a], pos[b]
            L[ia, ib] -= 1.0
            L[ib, ia] -= 1.0
            L[ia, ia] += 1.0
            L[ib, ib] += 1.0
    owner_nbrs = set(g.neighbors(nbh.owner))
    H = np.diag([float(len(owner_nbrs & set(g.neighbors(m)))) for m in members])
    return InducedMatrices(owner=nbh.owner, members=members, L=L, H=H, M=L + H)


def min_eigenvalue_check(mats: InducedMatrices, tol: float = POSDEF_TOL) -> float:
    """Smallest eigenvalue of M; raises unless it clears the tolerance.

    A nonpositive value means either the communication graph is
    disconnected or a neighborhood component has no shared-neighbor link
    back to the owner.
    """
    lam = float(np.linalg.eigvalsh(mats.M)[0])
    if lam <= tol:
        raise AssumptionViolationError(
            f"M for agent {mats.owner} is not positive definite "
            f"(lambda_min={lam:.3e} <= {tol:.0e})"
        )
    return lam


def min_required_k(gc: CommGraph, gt: TaskGraph) -> int:
    """Smallest hop depth covering every task dependency without a link.

    Maximum shortest-path distance over pairs (i, j) where task i depends
    on j but j is not in i's closed communication neighborhood; 0 when no
    such mismatch exists.
    """
    worst = 0
    for i in gc.agents:
        needed = gt.task_neighborhood(i) - gc.closed_neighbors(i)
        if not needed:
            continue
        dist = gc.bfs_distances(i)
        for j in needed:
            if j not in dist:
                raise AssumptionViolationError(
                    f"agent {j} needed by task {i} is unreachable in the communication graph"
                )
            worst = max(worst, dist[j])
    return worst


@dataclass(frozen=True)
class ClusterDecomposition:
    """Partition of the agents induced by matched comm/task edges.

    ``clusters`` are the connected components of the edge set where an
    undirected communication edge coincides with a task edge in either
    direction; they are labeled 0..N'-1 in ascending order of their
    smallest member. ``topo_order`` lists cluster labels so that every
    cluster appears before the clusters that depend on it (leaf clusters,
    the ones with no outgoing dependency edges, come first); it is the
    lexicographically smallest such order.
    """

    clusters: tuple          # tuple of frozensets of agent ids
    cluster_edges: frozenset  # directed pairs of cluster labels
    topo_order: tuple

    def label_of(self, agent) -> int:
        for idx, c in enumerate(self.clusters):
            if agent in c:
                return idx
        raise InvalidParameterError(f"agent {agent} not in any cluster")

    def leaf_labels(self) -> tuple:
        out = {a for a, _ in self.cluster_edges}
        return tuple(l for l in range(len(self.clusters)) if l not in out)


def cluster_decomposition(gc: CommGraph, gt: TaskGraph) -> ClusterDecomposition:
    """Clusters, their dependency edges and a leaf-first processing order."""
    if gt.has_cycle():
        raise AssumptionViolationError("task graph has a cycle (ignoring self-loops)")

    task_pairs = set(gt.edges)
    matched = [
        (a, b)
        for (a, b) in gc.edges
        if (a, b) in task_pairs or (b, a) in task_pairs
    ]
    parent = {i: i for i in gc.agents}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in matched:
        parent[find(a)] = find(b)
    groups = {}
    for i in gc.agents:
        groups.setdefault(find(i), set()).add(i)
    clusters = tuple(
        frozenset(c) for c in sorted(groups.values(), key=lambda c: min(c))
    )
    label = {}
    for idx, c in enumerate(clusters):
        for m in c:
            label[m] = idx

    cluster_edges = frozenset(
        (label[a], label[b]) for a, b in gt.edges if a != b and label[a] != label[b]
    )

    # Leaf-first order: repeatedly emit the smallest label whose
    # out-neighbors have all been emitted already.
    succ = {l: set() for l in range(len(clusters))}
    for a, b in cluster_edges:
        succ[a].add(b)
    remaining = set(range(len(clusters)))
    done = set()
    order = []
    while remaining:
        ready = sorted(l for l in remaining if succ[l] <= done)
        if not ready:
            raise AssumptionViolationError("cluster-induced graph has a cycle")
        order.append(ready[0])
        done.add(ready[0])
        remaining.discard(ready[0])
    return ClusterDecomposition(
        clusters=clusters, cluster_edges=cluster_edges, topo_order=tuple(order)
    )


@dataclass
class AssumptionReport:
    """Outcome of the structural checks; report-only, never raises."""

    comm_connected: bool
    task_acyclic: bool
    intra_cluster_ok: bool
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.comm_connected and self.task_acyclic and self.intra_cluster_ok

    def to_dict(self) -> dict:
        return {
            "comm_connected": self.comm_connected,
            "task_acyclic": self.task_acyclic,
            "intra_cluster_ok": self.intra_cluster_ok,
            "failures": list(self.failures),
            "ok": self.ok,
        }


def check_assumptions(
    gc: CommGraph, gt: TaskGraph, dec: ClusterDecomposition | None = None
) -> AssumptionReport:
    """Flag connectivity, task acyclicity and intra-cluster communication.

    The last check requires that inside every cluster, task dependencies
    are backed by direct communication links: for each cluster member, its
    task neighbors within the cluster must lie in its closed communication
    neighborhood.
    """
    failures = []
    connected = gc.is_connected()
    if not connected:
        failures.append("communication graph is not connected")
    acyclic = not gt.has_cycle()
    if not acyclic:
        failures.append("task graph has a cycle (ignoring self-loops)")

    intra_ok = True
    if dec is None and acyclic:
        dec = cluster_decomposition(gc, gt)
    if dec is not None:
        for idx, cluster in enumerate(dec.clusters):
            for m in sorted(cluster):
                inside = gt.task_neighborhood(m) & cluster
                covered = gc.closed_neighbors(m) & cluster
                missing = inside - covered
                if missing:
                    intra_ok = False
                    failures.append(
                        f"cluster {idx}: agent {m} depends on {sorted(missing)} "
                        "without a communication link"
                    )
    return AssumptionReport(
        comm_connected=connected,
        task_acyclic=acyclic,
        intra_cluster_ok=intra_ok,
        failures=failures,
    )
