"""Spatial graph construction over banded cells of two change fields.

Nodes are qualified cells (source field cells plus target field cells,
with target taking precedence when the same cell qualifies in both
fields). Edges come from a Delaunay triangulation of the node cell
centers in grid-index space, pruned to a maximum grid distance, and each
edge carries a +1/-1 coherence weight. Triangulation is made
order-independent by sorting points into canonical (row, col) order
before handing them to the triangulator.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import DuplicatePoint, EmptySide, MaskDimMismatch
from .grid import KIND_SOURCE, KIND_TARGET, CellSet

VARIANT_STANDARD = "standard"
VARIANT_CMAD = "cmad"

METRIC_EUCLIDEAN = "euclidean"
METRIC_CHEBYSHEV = "chebyshev"
METRICS = (METRIC_EUCLIDEAN, METRIC_CHEBYSHEV)


@dataclass(frozen=True)
class GraphNode:
    """One graph node: a qualified grid cell with its signed change value.

    ``anomalous`` is populated only for source nodes under the mask-based
    edge weighting variant; it is None otherwise.
    """

    id: int
    row: int
    col: int
    kind: str
    value: float
    anomalous: bool | None = None


@dataclass(frozen=True)
class GraphEdge:
    u: int
    v: int
    weight: int
    distance: float


@dataclass
class SpatialGraph:
    """Undirected weighted graph over qualified cells.

    ``adjacency[i]`` lists the neighbor ids of node i in ascending order,
    which fixes the expansion order of every traversal. ``params`` echoes
    the construction settings needed to rebuild edge weights during null
    resampling (variant, band intervals, orientations, distance cutoff).
    """

    nodes: list[GraphNode]
    edges: list[GraphEdge]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        adjacency: list[list[int]] = [[] for _ in self.nodes]
        weights: dict[tuple[int, int], int] = {}
        for e in self.edges:
            adjacency[e.u].append(e.v)
            adjacency[e.v].append(e.u)
            weights[(e.u, e.v)] = e.weight
            weights[(e.v, e.u)] = e.weight
        for nbrs in adjacency:
            nbrs.sort()
        self.adjacency = adjacency
        self._weights = weights

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_weight(self, u: int, v: int) -> int:
        return self._weights[(u, v)]

    def nodes_of_kind(self, kind: str) -> list[int]:
        return [n.id for n in self.nodes if n.kind == kind]


def _pairwise_distance(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    d = np.abs(a - b)
    if metric == METRIC_EUCLIDEAN:
        return np.sqrt((d * d).sum(axis=-1))
    if metric == METRIC_CHEBYSHEV:
        return d.max(axis=-1)
    raise ValueError(f"unknown metric {metric!r}, expected one of {METRICS}")


def _collinear(points: np.ndarray) -> bool:
    # Exact cross-product test; grid coordinates are integer-valued so no
    # tolerance is needed.
    if len(points) < 3:
        return True
    base = points[0]
    d0 = points[1] - base
    rest = points[2:] - base
    cross = d0[0] * rest[:, 1] - d0[1] * rest[:, 0]
    return bool(np.all(cross == 0.0))


def delaunay_triangulate(points: Sequence[tuple[float, float]]) -> list[tuple[int, int]]:
    """Delaunay edges of a point set, as index pairs into the input order.

    Points are canonically sorted by (row, col) before triangulation so
    the result does not depend on input ordering. Degenerate sets (two
    points, or any number of collinear points) fall back to the chain of
    consecutive points along the line, which is the limit triangulation.
    Coincident points are rejected.

    Returns edges as (i, j) with i < j, sorted ascending.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) point array, got shape {pts.shape}")
    n = len(pts)
    if n < 2:
        raise ValueError(f"triangulation needs at least 2 points, got {n}")

    order = np.lexsort((pts[:, 1], pts[:, 0]))
    sorted_pts = pts[order]
    same = np.all(sorted_pts[1:] == sorted_pts[:-1], axis=1)
    if same.any():
        k = int(np.nonzero(same)[0][0])
        r, c = sorted_pts[k]
        raise DuplicatePoint(
            f"coincident points at ({r:g}, {c:g})",
            hint="deduplicate qualified cells before building the graph",
        )

    edge_set: set[tuple[int, int]] = set()
    if _collinear(sorted_pts):
        # Lexicographic order is monotone along any line, so consecutive
        # sorted points are nearest neighbors on the line.
        chain = order
        for a, b in zip(chain[:-1], chain[1:]):
            edge_set.add((min(int(a), int(b)), max(int(a), int(b))))
    else:
        try:
            tri = Delaunay(sorted_pts)
        except QhullError as exc:  # pragma: no cover - guarded by _collinear
            raise ValueError(f"triangulation failed: {exc}") from exc
        for simplex in tri.simplices:
            for k in range(3):
                a = int(order[simplex[k]])
                b = int(order[simplex[(k + 1) % 3]])
                edge_set.add((min(a, b), max(a, b)))
    return sorted(edge_set)


def filter_edges_by_distance(
    edges: Sequence[tuple[int, int]],
    points: Sequence[tuple[float, float]],
    max_dist: float,
    metric: str = METRIC_EUCLIDEAN,
) -> list[tuple[int, int, float]]:
    """Drop edges longer than max_dist; keep (i, j, distance) for the rest.

    The comparison is inclusive: an edge at exactly max_dist survives.
    """
    if max_dist <= 0:
        raise ValueError("max_dist must be positive")
    pts = np.asarray(points, dtype=np.float64)
    kept = []
    for i, j in edges:
        d = float(_pairwise_distance(pts[i], pts[j], metric))
        if d <= max_dist:
            kept.append((i, j, d))
    return kept


def _coherence_weight(u: GraphNode, v: GraphNode) -> int:
    return 1 if np.sign(u.value) == np.sign(v.value) else -1


def _cmad_weight(u: GraphNode, v: GraphNode) -> int:
    # Source endpoints must be mask-anomalous; target endpoints qualified
    # at the configured band, which holds by construction of the node set.
    for node in (u, v):
        if node.kind == KIND_SOURCE and not node.anomalous:
            return -1
    return 1


def build_graph(
    source_cells: CellSet,
    target_cells: CellSet,
    max_edge_cells: float = 11.0,
    metric: str = METRIC_EUCLIDEAN,
    variant: str = VARIANT_STANDARD,
    anomaly_mask: np.ndarray | None = None,
    grid_shape: tuple[int, int] | None = None,
    params: dict | None = None,
) -> SpatialGraph:
    """Assemble the linkage graph from qualified source and target cells.

    A cell qualifying in both fields becomes a single target node (target
    precedence). Node ids follow canonical (row, col) order. Delaunay
    edges longer than ``max_edge_cells`` grid units are removed. Under the
    ``cmad`` variant an anomaly mask (shape ``grid_shape``) replaces value
    sign agreement in the edge weight rule for source endpoints.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}, expected one of {METRICS}")
    if variant not in (VARIANT_STANDARD, VARIANT_CMAD):
        raise ValueError(f"unknown variant {variant!r}")
    if not source_cells.cells:
        raise EmptySide(
            "no source cells qualified at the requested band",
            hint="loosen the source band or widen the window",
        )
    if not target_cells.cells:
        raise EmptySide(
            "no target cells qualified at the requested band",
            hint="loosen the target band or widen the window",
        )

    mask = None
    if variant == VARIANT_CMAD:
        if anomaly_mask is None:
            raise ValueError("cmad variant requires an anomaly mask")
        mask = np.asarray(anomaly_mask, dtype=bool)
        if grid_shape is not None and mask.shape != tuple(grid_shape):
            raise MaskDimMismatch(
                f"anomaly mask shape {mask.shape} does not match grid shape {tuple(grid_shape)}",
                hint="crop the mask with the same window as the grids",
            )

    by_cell: dict[tuple[int, int], tuple[str, float]] = {}
    for r, c, v in source_cells.cells:
        by_cell[(r, c)] = (KIND_SOURCE, v)
    for r, c, v in target_cells.cells:
        # Target precedence on dual-qualified cells.
        by_cell[(r, c)] = (KIND_TARGET, v)

    ordered = sorted(by_cell.items())
    nodes = []
    for node_id, ((r, c), (kind, value)) in enumerate(ordered):
        anomalous = None
        if mask is not None and kind == KIND_SOURCE:
            if not (0 <= r < mask.shape[0] and 0 <= c < mask.shape[1]):
                raise MaskDimMismatch(
                    f"source cell ({r}, {c}) lies outside the anomaly mask of shape {mask.shape}"
                )
            anomalous = bool(mask[r, c])
        nodes.append(
            GraphNode(id=node_id, row=r, col=c, kind=kind, value=value, anomalous=anomalous)
        )

    points = [(n.row, n.col) for n in nodes]
    if len(points) < 2:
        edges: list[GraphEdge] = []
    else:
        raw = delaunay_triangulate(points)
        kept = filter_edges_by_distance(raw, points, max_edge_cells, metric)
        weight_fn = _cmad_weight if variant == VARIANT_CMAD else _coherence_weight
        edges = [
            GraphEdge(u=i, v=j, weight=weight_fn(nodes[i], nodes[j]), distance=d)
            for i, j, d in kept
        ]

    graph_params = {
        "variant": variant,
        "max_edge_cells": float(max_edge_cells),
        "metric": metric,
        "band_source": source_cells.band,
        "band_target": target_cells.band,
    }
    if params:
        graph_params.update(params)
    return SpatialGraph(nodes=nodes, edges=edges, params=graph_params)
