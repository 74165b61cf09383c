"""Communication graphs, link failures, components and ID flooding.

Agents are indexed ``0 .. n_agents - 1`` in code; configuration files and
CSV output use 1-based receptor numbers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


@dataclass(frozen=True)
class GraphSnapshot:
    n_agents: int
    edges: frozenset[tuple[int, int]] = frozenset()

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("n_agents must be positive")
        norm = set()
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop on agent {i}")
            if not (0 <= i < self.n_agents and 0 <= j < self.n_agents):
                raise ValueError(f"edge {(i, j)} outside 0..{self.n_agents - 1}")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))

    @classmethod
    def complete(cls, n: int) -> "GraphSnapshot":
        return cls(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))

    @classmethod
    def path(cls, n: int) -> "GraphSnapshot":
        return cls(n, frozenset((i, i + 1) for i in range(n - 1)))

    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n_agents)]
        for i, j in sorted(self.edges):
            adj[i].append(j)
            adj[j].append(i)
        return adj

    def degrees(self) -> np.ndarray:
        d = np.zeros(self.n_agents, dtype=int)
        for i, j in self.edges:
            d[i] += 1
            d[j] += 1
        return d

    def neighborhoods(self) -> list[list[int]]:
        """Closed neighbourhoods: each agent followed by its neighbours."""
        return [[i] + nbrs for i, nbrs in enumerate(self.adjacency())]


class TopologyMode(str, enum.Enum):
    SCRIPTED = "scripted"
    REGULAR_WITH_FAILURES = "regular_with_failures"


def regular_graph(n: int, degree: int) -> GraphSnapshot:
    """Circulant ``degree``-regular graph on ``n`` nodes.

    Node ``i`` links to ``i +- 1 .. i +- degree//2``; odd degrees add the
    antipodal chord ``i + n/2``.
    """
    if degree < 0 or degree >= n:
        raise ValueError(f"no {degree}-regular graph on {n} nodes")
    if (n * degree) % 2:
        raise ValueError(f"no {degree}-regular graph on {n} nodes: n * degree is odd")
    edges = set()
    for i in range(n):
        for s in range(1, degree // 2 + 1):
            j = (i + s) % n
            edges.add((min(i, j), max(i, j)))
        if degree % 2:
            j = (i + n // 2) % n
            edges.add((min(i, j), max(i, j)))
    return GraphSnapshot(n, frozenset(edges))


@dataclass(frozen=True)
class TopologySchedule:
    n_agents: int
    mode: TopologyMode = TopologyMode.SCRIPTED
    scripted: Mapping[int, GraphSnapshot] = field(default_factory=dict)
    degree: int = 4
    p_fail: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", TopologyMode(self.mode))
        if not 0.0 <= self.p_fail <= 1.0:
            raise ValueError(f"link failure probability must be in [0, 1], got {self.p_fail}")
        if self.mode is TopologyMode.REGULAR_WITH_FAILURES:
            regular_graph(self.n_agents, self.degree)  # parity / size check
        for k, g in self.scripted.items():
            if g.n_agents != self.n_agents:
                raise ValueError(f"scripted graph at step {k} has {g.n_agents} agents")

    def check_covers(self, steps: Iterable[int]):
        if self.mode is TopologyMode.SCRIPTED:
            missing = [k for k in steps if k not in self.scripted]
            if missing:
                raise ValueError(f"scripted topology has no graph for steps {missing}")

    def with_p(self, p_fail: float) -> "TopologySchedule":
        return TopologySchedule(self.n_agents, self.mode, self.scripted, self.degree, p_fail, self.seed)


def snapshot_at(sched: TopologySchedule, step: int, round_seed: int | None = None) -> GraphSnapshot:
    """Graph in force at time step ``step``.

    In failure mode every edge of the regular graph is dropped independently
    with probability ``p_fail``, drawing from a generator keyed on
    ``(seed, step)`` so that the same step always yields the same graph.
    """
    if sched.mode is TopologyMode.SCRIPTED:
        try:
            return sched.scripted[step]
        except KeyError:
            raise ValueError(f"scripted topology has no graph for step {step}") from None
    base = regular_graph(sched.n_agents, sched.degree)
    seed = sched.seed if round_seed is None else round_seed
    rng = np.random.default_rng([seed, step])
    edges = sorted(base.edges)
    keep = rng.random(len(edges)) >= sched.p_fail
    return GraphSnapshot(sched.n_agents, frozenset(e for e, k in zip(edges, keep) if k))


def components(g: GraphSnapshot) -> list[frozenset[int]]:
    """Connected components, ordered by their smallest member."""
    if g.edges:
        i, j = np.array(sorted(g.edges)).T
        mat = coo_matrix((np.ones(i.size), (i, j)), shape=(g.n_agents, g.n_agents))
    else:
        mat = coo_matrix((g.n_agents, g.n_agents))
    _, labels = connected_components(mat, directed=False)
    groups: dict[int, set[int]] = {}
    for node, lab in enumerate(labels):
        groups.setdefault(lab, set()).add(node)
    return sorted((frozenset(s) for s in groups.values()), key=min)


def initial_ids(n_agents: int) -> list[frozenset[int]]:
    return [frozenset({i}) for i in range(n_agents)]


def flood_ids(id_sets: Sequence[frozenset[int]], g: GraphSnapshot) -> list[frozenset[int]]:
    """One flooding round: every agent merges the ID sets of its neighbours."""
    if len(id_sets) != g.n_agents:
        raise ValueError(f"{len(id_sets)} ID sets for {g.n_agents} agents")
    for i, s in enumerate(id_sets):
        if i not in s:
            raise ValueError(f"agent {i}'s ID set does not contain its own ID")
    adj = g.adjacency()
    return [id_sets[i].union(*(id_sets[j] for j in adj[i])) for i in range(g.n_agents)]
