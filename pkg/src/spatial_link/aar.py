"""Transport benchmark mode over a single field of point observations.

Elevated observation points (selected by a precomputed binary mask) are
triangulated, long edges are pruned, and connected components are kept
only when their spatial extent exceeds a minimum span, mirroring the
length convention for atmospheric transport corridors. Path significance
from origin points to a monitoring station reuses the bounded path
enumeration and the permutation null, with the score counting edges
whose endpoint values both reach the elevation threshold.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, EmptySide, PathExplosion, StationUnreachable
from .grid import ChangeGrid
from .graph import (
    GraphEdge,
    GraphNode,
    SpatialGraph,
    delaunay_triangulate,
)
from .paths import DEFAULT_CAP, LinkagePath, enumerate_walks, path_score
from .significance import (
    PermutationNull,
    SeedPolicy,
    SignificanceResult,
)

KM_PER_DEGREE = 111.11
DEFAULT_MAX_EDGE_KM = 250.0
DEFAULT_MIN_EXTENT_KM = 2000.0
DEFAULT_SNAP_KM = 150.0
DEFAULT_AAR_ALPHA = 0.005

KIND_POINT = "point"


@dataclass(frozen=True)
class GeoPoint:
    """One observation point: geographic position, grid cell, and value."""

    lat: float
    lon: float
    cell: tuple[int, int] | None = None
    value: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon < 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180)")


@dataclass(frozen=True)
class AarComponent:
    """A maximal connected node set with its spatial span."""

    node_ids: tuple[int, ...]
    extent_km: float
    retained: bool

    @property
    def size(self) -> int:
        return len(self.node_ids)


def _latlon(p) -> tuple[float, float]:
    if isinstance(p, GeoPoint):
        return p.lat, p.lon
    lat, lon = p
    return float(lat), float(lon)


def equirect_distance(a, b) -> float:
    """Equirectangular distance in km: 111.11 km per degree of arc.

    The longitude difference is wrapped to [-180, 180) and scaled by the
    cosine of the mean latitude before combining with the latitude
    difference in quadrature.
    """
    lat_a, lon_a = _latlon(a)
    lat_b, lon_b = _latlon(b)
    dlat = lat_b - lat_a
    dlon = (lon_b - lon_a + 180.0) % 360.0 - 180.0
    mean_lat = np.deg2rad((lat_a + lat_b) / 2.0)
    return float(KM_PER_DEGREE * np.hypot(dlat, dlon * np.cos(mean_lat)))


def elevated_points(values: ChangeGrid, mask: ChangeGrid) -> list[GeoPoint]:
    """Points at cells flagged by the binary mask, in row-major order.

    A cell contributes a point when the mask is valid and nonzero there
    and the value field is valid. Coordinates come from the value field's
    registration.
    """
    if values.shape != mask.shape:
        raise DimMismatch(
            f"mask shape {mask.shape} does not match value field shape {values.shape}"
        )
    flagged = mask.valid_mask & (mask.values != 0) & values.valid_mask
    reg = values.registration
    points = []
    for r, c in np.argwhere(flagged):
        lat, lon = reg.cell_center(int(r), int(c))
        points.append(GeoPoint(lat=lat, lon=lon, cell=(int(r), int(c)), value=float(values.values[r, c])))
    return points


def build_aar_graph(points: list[GeoPoint], max_edge_km: float = DEFAULT_MAX_EDGE_KM) -> SpatialGraph:
    """Triangulate observation points and prune geographically long edges.

    Triangulation runs on (lat, lon) treated as planar coordinates; the
    pruning cutoff uses the equirectangular distance, keeping edges at or
    below ``max_edge_km``. Nodes are untyped in this mode and edge weights
    are placeholders: scoring applies the elevation threshold rule at
    significance time.
    """
    if len(points) < 2:
        raise EmptySide(
            f"point graph needs at least 2 points, got {len(points)}",
            hint="check the elevation mask",
        )
    coords = [(p.lat, p.lon) for p in points]
    raw = delaunay_triangulate(coords)
    edges = []
    for i, j in raw:
        d = equirect_distance(points[i], points[j])
        if d <= max_edge_km:
            edges.append(GraphEdge(u=i, v=j, weight=1, distance=d))
    nodes = [
        GraphNode(id=k, row=p.cell[0] if p.cell else -1, col=p.cell[1] if p.cell else -1,
                  kind=KIND_POINT, value=p.value)
        for k, p in enumerate(points)
    ]
    return SpatialGraph(
        nodes=nodes,
        edges=edges,
        params={"variant": "aar", "max_edge_km": float(max_edge_km)},
    )


def connected_components(
    graph: SpatialGraph, points: list[GeoPoint], min_extent_km: float = DEFAULT_MIN_EXTENT_KM
) -> list[AarComponent]:
    """Partition the graph into components and measure each one's span.

    Components are ordered by their smallest node id. A component is
    retained only when its extent strictly exceeds ``min_extent_km``.
    """
    n = graph.n_nodes
    seen = np.zeros(n, dtype=bool)
    components = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        members = []
        while stack:
            u = stack.pop()
            members.append(u)
            for v in graph.adjacency[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        members.sort()
        extent = component_extent(members, points)
        components.append(
            AarComponent(
                node_ids=tuple(members),
                extent_km=extent,
                retained=extent > min_extent_km,
            )
        )
    return components


def component_extent(node_ids, points: list[GeoPoint]) -> float:
    """Maximum pairwise equirectangular distance over component nodes."""
    ids = list(node_ids)
    if not ids:
        raise ValueError("component must be non-empty")
    if len(ids) == 1:
        return 0.0
    lats = np.asarray([points[i].lat for i in ids])
    lons = np.asarray([points[i].lon for i in ids])
    dlat = lats[:, None] - lats[None, :]
    dlon = (lons[:, None] - lons[None, :] + 180.0) % 360.0 - 180.0
    mean_lat = np.deg2rad((lats[:, None] + lats[None, :]) / 2.0)
    d = KM_PER_DEGREE * np.hypot(dlat, dlon * np.cos(mean_lat))
    return float(d.max())


def snap_to_node(points: list[GeoPoint], lat: float, lon: float, snap_km: float = DEFAULT_SNAP_KM) -> int:
    """Nearest point id within the snap radius; smallest id wins ties."""
    dists = np.asarray([equirect_distance(p, (lat, lon)) for p in points])
    best = int(np.argmin(dists))
    if dists[best] > snap_km:
        raise StationUnreachable(
            f"no point within {snap_km:g} km of ({lat:g}, {lon:g}); "
            f"nearest is {dists[best]:.1f} km away",
            hint="widen the snap radius or check the coordinates",
        )
    return best


def station_path_significance(
    graph: SpatialGraph,
    points: list[GeoPoint],
    values_grid: ChangeGrid,
    origin_ids,
    station: tuple[float, float] | GeoPoint,
    max_nodes: int = 11,
    n_replicates: int = 999,
    alpha: float = DEFAULT_AAR_ALPHA,
    seed: int = 0,
    threads: int = 1,
    threshold: float | None = None,
    snap_km: float = DEFAULT_SNAP_KM,
    cap: int = DEFAULT_CAP,
) -> tuple[list[SignificanceResult], int]:
    """Significance of origin-to-station paths under the permutation null.

    The station snaps to its nearest point within ``snap_km``. Candidate
    paths run from each origin node to the station node, bounded at
    ``max_nodes`` nodes. A path's score is the fraction of its edges whose
    two endpoint values both reach the elevation threshold (default: the
    smallest value over the graph's points, i.e. the loosest threshold
    consistent with the mask). The null permutes the value field over all
    its valid cells. Returns the results and the snapped station node id.
    """
    if not origin_ids:
        raise ValueError("origins must be non-empty")
    st_lat, st_lon = _latlon(station)
    station_id = snap_to_node(points, st_lat, st_lon, snap_km)
    origins = sorted(set(int(o) for o in origin_ids) - {station_id})
    if threshold is None:
        threshold = min(p.value for p in points)

    walks: list[tuple[int, ...]] = []
    for origin in origins:
        walks.extend(enumerate_walks(graph.adjacency, origin, {station_id}, max_nodes))
    if len(walks) > cap:
        raise PathExplosion(
            f"path enumeration produced {len(walks)} paths, exceeding the cap of {cap}",
            hint="lower --max-len or --max-edge-km, or raise --cap",
        )
    walks.sort()

    paths = []
    for walk in walks:
        weights = tuple(
            1 if (points[u].value >= threshold and points[v].value >= threshold) else -1
            for u, v in zip(walk[:-1], walk[1:])
        )
        paths.append(LinkagePath(nodes=walk, edge_weights=weights, score=path_score(weights)))

    if not paths:
        return [], station_id
    engine = PermutationNull.for_point_field(
        values_grid,
        cells=[p.cell for p in points],
        threshold=float(threshold),
        policy=SeedPolicy(base_seed=seed),
        n_replicates=n_replicates,
        threads=threads,
    )
    return engine.evaluate(paths, alpha=alpha), station_id


@dataclass
class AarReport:
    """Everything the benchmark run produced, ready for serialization."""

    points: list[GeoPoint]
    graph: SpatialGraph
    components: list[AarComponent]
    station_id: int | None
    threshold: float
    results: list[SignificanceResult] = field(default_factory=list)
    dropped_origins: list = field(default_factory=list)


def run_aar(
    values_grid: ChangeGrid,
    mask_grid: ChangeGrid,
    origins: list[tuple[float, float]] | list[tuple[int, int]],
    station: tuple[float, float],
    max_edge_km: float = DEFAULT_MAX_EDGE_KM,
    min_extent_km: float = DEFAULT_MIN_EXTENT_KM,
    max_nodes: int = 11,
    n_replicates: int = 999,
    alpha: float = DEFAULT_AAR_ALPHA,
    seed: int = 0,
    threads: int = 1,
    threshold: float | None = None,
    snap_km: float = DEFAULT_SNAP_KM,
    cap: int = DEFAULT_CAP,
) -> AarReport:
    """End-to-end benchmark: points, graph, components, station paths.

    Origins may be (lat, lon) pairs or (row, col) cells; each snaps to its
    nearest point within the snap radius. Origins that fail to snap or
    fall outside retained components are dropped (recorded in the report);
    path testing proceeds with the rest. Only components whose extent
    exceeds ``min_extent_km`` take part in path analysis.
    """
    points = elevated_points(values_grid, mask_grid)
    if len(points) < 2:
        raise EmptySide(
            f"elevation mask selects {len(points)} points; need at least 2",
            hint="check the mask payload and validity",
        )
    graph = build_aar_graph(points, max_edge_km=max_edge_km)
    components = connected_components(graph, points, min_extent_km=min_extent_km)
    if threshold is None:
        threshold = min(p.value for p in points)

    retained_nodes: set[int] = set()
    for comp in components:
        if comp.retained:
            retained_nodes.update(comp.node_ids)

    cell_to_id = {p.cell: i for i, p in enumerate(points)}
    origin_ids: list[int] = []
    dropped: list = []
    for entry in origins:
        a, b = entry
        if isinstance(a, (int, np.integer)) and isinstance(b, (int, np.integer)):
            node = cell_to_id.get((int(a), int(b)))
            if node is None:
                dropped.append([int(a), int(b)])
                continue
        else:
            try:
                node = snap_to_node(points, float(a), float(b), snap_km)
            except StationUnreachable:
                dropped.append([float(a), float(b)])
                continue
        if node in retained_nodes:
            origin_ids.append(node)
        else:
            dropped.append(list(entry))

    report = AarReport(
        points=points,
        graph=graph,
        components=components,
        station_id=None,
        threshold=float(threshold),
        dropped_origins=dropped,
    )
    if not origin_ids:
        # Nothing to test: either no origin snapped or none lies in a
        # retained component; an empty result set is a valid outcome.
        try:
            report.station_id = snap_to_node(points, station[0], station[1], snap_km)
        except StationUnreachable:
            report.station_id = None
        return report

    results, station_id = station_path_significance(
        graph,
        points,
        values_grid,
        origin_ids,
        station,
        max_nodes=max_nodes,
        n_replicates=n_replicates,
        alpha=alpha,
        seed=seed,
        threads=threads,
        threshold=threshold,
        snap_km=snap_km,
        cap=cap,
    )
    report.station_id = station_id
    report.results = results
    return report
