"""Follower graphs, Laplacians and the leader-follower system matrix."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

TOL_HURWITZ = 1e-9


class GraphError(ValueError):
    """Raised when a graph violates the follower-graph invariants."""


def _normalise_edges(n_agents: int, edges: Iterable[Sequence[int]]) -> tuple[tuple[int, int], ...]:
    seen = set()
    out = []
    for edge in edges:
        if len(edge) != 2:
            raise GraphError(f"edge {edge!r} is not a pair")
        i, j = int(edge[0]), int(edge[1])
        if i == j:
            raise GraphError(f"self-loop on node {i}")
        if not (0 <= i < n_agents and 0 <= j < n_agents):
            raise GraphError(f"edge ({i}, {j}) references a node outside 0..{n_agents - 1}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise GraphError(f"duplicate edge {key}")
        seen.add(key)
        out.append(key)
    return tuple(sorted(out))


def connected_components(n_agents: int, edges: Iterable[tuple[int, int]]) -> list[list[int]]:
    """Components of an undirected graph by breadth-first traversal."""
    adj: list[list[int]] = [[] for _ in range(n_agents)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = [False] * n_agents
    comps = []
    for root in range(n_agents):
        if seen[root]:
            continue
        seen[root] = True
        queue = [root]
        comp = []
        while queue:
            node = queue.pop(0)
            comp.append(node)
            for nb in adj[node]:
                if not seen[nb]:
                    seen[nb] = True
                    queue.append(nb)
        comps.append(sorted(comp))
    return comps


@dataclass(frozen=True)
class AgentGraph:
    """Undirected follower graph with the leader-link indicator vector.

    Node indices are 0-based internally; use :meth:`from_config` for the
    1-based edge lists used in scenario files.
    """

    n_agents: int
    edges: tuple[tuple[int, int], ...]
    leader_links: tuple[int, ...]

    def __post_init__(self):
        if int(self.n_agents) < 1:
            raise GraphError("n_agents must be a positive integer")
        object.__setattr__(self, "n_agents", int(self.n_agents))
        object.__setattr__(self, "edges", _normalise_edges(self.n_agents, self.edges))
        links = tuple(int(b) for b in self.leader_links)
        if len(links) != self.n_agents:
            raise GraphError(f"leader_links has {len(links)} entries, expected {self.n_agents}")
        if any(b not in (0, 1) for b in links):
            raise GraphError("leader_links entries must be 0 or 1")
        if not any(links):
            raise GraphError("at least one follower must receive the leader state (b_i = 1)")
        object.__setattr__(self, "leader_links", links)
        comps = connected_components(self.n_agents, self.edges)
        if len(comps) > 1:
            listing = "; ".join("{" + ", ".join(str(i + 1) for i in c) + "}" for c in comps)
            raise GraphError(f"follower graph is disconnected, components (1-based): {listing}")

    @classmethod
    def from_config(cls, section: dict) -> "AgentGraph":
        """Build from a config section with 1-based ``edges``."""
        n = section["n_agents"]
        edges = [(int(i) - 1, int(j) - 1) for i, j in section.get("edges", [])]
        return cls(n, tuple(edges), tuple(section["leader_links"]))

    def to_config(self) -> dict:
        return {
            "n_agents": self.n_agents,
            "edges": [[i + 1, j + 1] for i, j in self.edges],
            "leader_links": list(self.leader_links),
        }

    def neighbours(self, i: int) -> list[int]:
        return sorted({b if a == i else a for a, b in self.edges if i in (a, b)})


@dataclass(frozen=True)
class LayerPair:
    physical: AgentGraph
    auxiliary: AgentGraph

    def __post_init__(self):
        if self.physical.n_agents != self.auxiliary.n_agents:
            raise GraphError(
                "physical and auxiliary layers need one virtual agent per follower "
                f"({self.physical.n_agents} != {self.auxiliary.n_agents})"
            )

    @classmethod
    def mirrored(cls, graph: AgentGraph) -> "LayerPair":
        return cls(graph, graph)


def laplacian(graph: AgentGraph) -> np.ndarray:
    """Graph Laplacian: -1 per edge off the diagonal, node degree on it."""
    n = graph.n_agents
    L = np.zeros((n, n))
    for i, j in graph.edges:
        L[i, j] = L[j, i] = -1.0
        L[i, i] += 1.0
        L[j, j] += 1.0
    return L


def hurwitz_check(M, tol: float = TOL_HURWITZ) -> tuple[bool, float]:
    """Return ``(is_hurwitz, spectral_abscissa)`` for a square matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    try:
        eig = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise ValueError(f"eigenvalue solver failed: {exc}") from exc
    abscissa = float(np.max(eig.real))
    return abscissa < -tol, abscissa


def system_matrix(graph: AgentGraph, weights: Optional[Sequence[float]] = None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(A, B)`` with ``A = -(L + diag(b))`` and ``B = diag(b) @ 1``.

    ``weights`` overrides the leader links on the diagonal, which is how the
    auxiliary-layer matrix ``-(L_z + W)`` is built.
    """
    b = np.asarray(graph.leader_links if weights is None else weights, dtype=float)
    A = -(laplacian(graph) + np.diag(b))
    ok, abscissa = hurwitz_check(A)
    if not ok:
        raise GraphError(f"system matrix is not Hurwitz (spectral abscissa {abscissa:.3e})")
    return A, b.copy()
