"""Bounded enumeration of candidate linkage paths through the graph.

A candidate path starts at a source node, walks distinct nodes, and
terminates at the first target node it reaches, so target nodes never
appear in a path interior. Enumeration is breadth-first with the
frontier expanded in ascending node-id order, giving a deterministic
path list independent of thread count or hash seeds.
"""
from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import PathExplosion
from .graph import KIND_SOURCE, KIND_TARGET, SpatialGraph

DEFAULT_MAX_NODES = 11
DEFAULT_CAP = 1_000_000


@dataclass(frozen=True)
class LinkagePath:
    """An ordered node walk from a source cell to its terminal target cell.

    ``score`` is the fraction of traversed edges carrying weight +1 and is
    fixed at construction from the real (unpermuted) edge weights.
    """

    nodes: tuple[int, ...]
    edge_weights: tuple[int, ...]
    score: float

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


def path_score(edge_weights: tuple[int, ...] | list[int]) -> float:
    """Fraction of +1 weights along a path; requires at least one edge."""
    if len(edge_weights) == 0:
        raise ValueError("a path must traverse at least one edge")
    positive = sum(1 for w in edge_weights if w > 0)
    return positive / len(edge_weights)


def enumerate_walks(
    adjacency: list[list[int]],
    start: int,
    terminal: frozenset[int] | set[int],
    max_nodes: int,
) -> list[tuple[int, ...]]:
    """Breadth-first enumeration of simple walks ending on a terminal node.

    Walks are extended in ascending neighbor-id order, never revisit a
    node, never pass through a terminal node, and carry at most
    ``max_nodes`` nodes. The start node must not itself be terminal.
    Results come back in breadth-first emission order.
    """
    if max_nodes < 2:
        raise ValueError("max_nodes must allow at least one edge")
    if start in terminal:
        raise ValueError(f"start node {start} is a terminal node")
    out: list[tuple[int, ...]] = []
    queue: deque[tuple[int, ...]] = deque([(start,)])
    while queue:
        walk = queue.popleft()
        seen = set(walk)
        for nbr in adjacency[walk[-1]]:
            if nbr in seen:
                continue
            if nbr in terminal:
                out.append(walk + (nbr,))
            elif len(walk) < max_nodes - 1:
                queue.append(walk + (nbr,))
    return out


def _to_linkage_paths(graph: SpatialGraph, walks: list[tuple[int, ...]]) -> list[LinkagePath]:
    paths = []
    for walk in walks:
        weights = tuple(graph.edge_weight(u, v) for u, v in zip(walk[:-1], walk[1:]))
        paths.append(LinkagePath(nodes=walk, edge_weights=weights, score=path_score(weights)))
    return paths


def bfs_paths(
    graph: SpatialGraph,
    source: int,
    max_nodes: int = DEFAULT_MAX_NODES,
    targets: set[int] | None = None,
) -> list[LinkagePath]:
    """All bounded simple paths from one source node to any target node.

    ``targets`` defaults to every target-kind node of the graph.
    """
    node = graph.nodes[source]
    if node.kind != KIND_SOURCE:
        raise ValueError(f"node {source} is not a source node (kind={node.kind!r})")
    if targets is None:
        targets = frozenset(graph.nodes_of_kind(KIND_TARGET))
    walks = enumerate_walks(graph.adjacency, source, targets, max_nodes)
    return _to_linkage_paths(graph, walks)


def extract_all_paths(
    graph: SpatialGraph,
    max_nodes: int = DEFAULT_MAX_NODES,
    cap: int = DEFAULT_CAP,
    threads: int = 1,
) -> list[LinkagePath]:
    """Enumerate candidate paths from every source node.

    The result is sorted by (source node id, node sequence), so it is
    identical for any thread count. Raises when the total number of paths
    exceeds ``cap``; partial results are never returned.
    """
    if cap <= 0:
        raise ValueError("cap must be positive")
    sources = graph.nodes_of_kind(KIND_SOURCE)
    targets = frozenset(graph.nodes_of_kind(KIND_TARGET))

    def walks_from(src: int) -> list[tuple[int, ...]]:
        return enumerate_walks(graph.adjacency, src, targets, max_nodes)

    if threads > 1 and len(sources) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_source = list(pool.map(walks_from, sources))
    else:
        per_source = [walks_from(src) for src in sources]

    total = sum(len(w) for w in per_source)
    if total > cap:
        raise PathExplosion(
            f"path enumeration produced {total} paths, exceeding the cap of {cap}",
            hint="lower --max-len or --dmax, tighten the bands, or raise --cap",
        )
    walks = [w for group in per_source for w in group]
    walks.sort()
    return _to_linkage_paths(graph, walks)


def linkage_frequency(
    paths: list[LinkagePath], graph: SpatialGraph, shape: tuple[int, int]
) -> np.ndarray:
    """Per-cell count of how many of the given paths visit each cell."""
    freq = np.zeros(shape, dtype=np.int64)
    for path in paths:
        for node_id in path.nodes:
            node = graph.nodes[node_id]
            freq[node.row, node.col] += 1
    return freq
