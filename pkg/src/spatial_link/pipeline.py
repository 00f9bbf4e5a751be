"""End-to-end orchestration: grids in, significance artifacts out.

A run loads and prepares the two change fields, qualifies cells at the
configured bands, builds the linkage graph, enumerates candidate paths,
scores them against the permutation null, and writes five artifacts
(graph.json, paths.json, results.json, significant.geojson,
frequency.csv) into the output directory. The band sweep repeats this
for all nine band pairings into per-pairing subdirectories.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import io
from .errors import ConfigError, DimMismatch, EmptySide
from .grid import (
    BANDS,
    LOSS_NEGATIVE,
    ORIENTATIONS,
    ChangeGrid,
    RegionWindow,
    classify_cells,
    compute_threshold_bands,
    crop_region,
    resample_nearest,
)
from .graph import METRICS, VARIANT_CMAD, VARIANT_STANDARD, build_graph
from .paths import extract_all_paths, linkage_frequency
from .significance import PermutationNull, SeedPolicy, filter_significant

SCOPE_WINDOW = "window"
SCOPE_GLOBAL = "global"


@dataclass
class RunConfig:
    """Everything a pipeline run depends on; echoed into every artifact."""

    source: str
    target: str
    mask: str | None = None
    variant: str = VARIANT_STANDARD
    orientation_source: str = LOSS_NEGATIVE
    orientation_target: str = LOSS_NEGATIVE
    window: str | None = None
    band_source: str = "moderate"
    band_target: str = "moderate"
    band_scope: str = SCOPE_WINDOW
    ub_multiplier: float = 1.5
    dmax: float = 11.0
    metric: str = "euclidean"
    max_len: int = 11
    cap: int = 1_000_000
    m: int = 999
    alpha: float = 0.05
    seed: int = 0
    threads: int = 1
    share_null: bool = False
    bh: bool = False
    sweep_bands: bool = False
    resample_source: list | None = None
    out_dir: str = "."

    def validate(self) -> None:
        if self.variant not in (VARIANT_STANDARD, VARIANT_CMAD):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.variant == VARIANT_CMAD and not self.mask:
            raise ConfigError("the cmad variant requires --mask")
        for name in ("orientation_source", "orientation_target"):
            if getattr(self, name) not in ORIENTATIONS:
                raise ConfigError(f"{name} must be one of {ORIENTATIONS}")
        for name in ("band_source", "band_target"):
            if getattr(self, name) not in BANDS:
                raise ConfigError(f"{name} must be one of {BANDS}")
        if self.band_scope not in (SCOPE_WINDOW, SCOPE_GLOBAL):
            raise ConfigError(f"band_scope must be {SCOPE_WINDOW!r} or {SCOPE_GLOBAL!r}")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}")
        if self.dmax <= 0 or self.max_len < 2 or self.cap <= 0 or self.m < 1:
            raise ConfigError("dmax, max_len, cap, and m must be positive (max_len >= 2)")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie strictly between 0 and 1")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.resample_source is not None:
            dims = list(self.resample_source)
            if len(dims) != 2 or any(int(d) <= 0 for d in dims):
                raise ConfigError("resample_source must be [rows, cols] with positive entries")
        if self.window is not None:
            RegionWindow.parse(self.window)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(
                f"unknown config keys: {', '.join(sorted(unknown))}",
                hint=f"known keys: {', '.join(sorted(known))}",
            )
        if "source" not in doc or "target" not in doc:
            raise ConfigError("config must set both source and target")
        return cls(**doc)

    def echo(self) -> dict:
        """Config as recorded in output metadata.

        Execution-environment knobs (thread count, output directory) are
        excluded: results are independent of them, and the block must
        reproduce byte-identical results when re-run anywhere.
        """
        doc = asdict(self)
        doc.pop("threads")
        doc.pop("out_dir")
        return doc


@dataclass
class BandRunResult:
    band_source: str
    band_target: str
    out_dir: str
    n_nodes: int
    n_edges: int
    n_paths: int
    n_significant: int
    note: str | None = None


def prepare_grids(config: RunConfig):
    """Load, resample, and window the fields; derive banding thresholds."""
    source = io.load_grid(config.source)
    target = io.load_grid(config.target)
    mask_grid = io.load_grid(config.mask) if config.mask else None

    if config.resample_source is not None:
        rows, cols = (int(d) for d in config.resample_source)
        source = resample_nearest(source, rows, cols)
        if mask_grid is not None:
            mask_grid = resample_nearest(mask_grid, rows, cols)
    if source.shape != target.shape:
        raise DimMismatch(
            f"source grid {source.shape} and target grid {target.shape} differ",
            hint="use resample_source to bring the source onto the target dims",
        )
    if mask_grid is not None and mask_grid.shape != source.shape:
        raise DimMismatch(
            f"anomaly mask {mask_grid.shape} does not match the grids {source.shape}",
            hint="the mask must share the source grid geometry",
        )

    window = RegionWindow.parse(config.window) if config.window else None
    if window is not None:
        win_source = crop_region(source, window)
        win_target = crop_region(target, window)
        win_mask = crop_region(mask_grid, window) if mask_grid is not None else None
    else:
        win_source, win_target, win_mask = source, target, mask_grid

    scope_source = source if config.band_scope == SCOPE_GLOBAL else win_source
    scope_target = target if config.band_scope == SCOPE_GLOBAL else win_target
    bands_source = compute_threshold_bands(
        scope_source, config.orientation_source, config.ub_multiplier
    )
    bands_target = compute_threshold_bands(
        scope_target, config.orientation_target, config.ub_multiplier
    )

    anomaly_bits = None
    if win_mask is not None:
        anomaly_bits = win_mask.valid_mask & (win_mask.values != 0)
    return win_source, win_target, anomaly_bits, bands_source, bands_target


def _run_band_pair(
    config: RunConfig,
    band_source: str,
    band_target: str,
    source: ChangeGrid,
    target: ChangeGrid,
    anomaly_bits,
    bands_source,
    bands_target,
    out_dir: str,
) -> BandRunResult:
    os.makedirs(out_dir, exist_ok=True)
    echo = config.echo()
    echo["band_source"] = band_source
    echo["band_target"] = band_target
    metadata = io.metadata_block(echo, config.seed)

    def write_empty(note: str) -> BandRunResult:
        for name, doc in (
            ("graph.json", {"metadata": metadata, "note": note, "params": {}, "nodes": [], "edges": []}),
            ("paths.json", {"metadata": metadata, "note": note, "paths": []}),
            ("results.json", {"metadata": metadata, "note": note, "results": []}),
            (
                "significant.geojson",
                {"type": "FeatureCollection", "metadata": metadata, "note": note, "features": []},
            ),
        ):
            io.write_json(doc, os.path.join(out_dir, name))
        io.frequency_to_csv(
            np.zeros(source.shape, dtype=np.int64),
            metadata,
            os.path.join(out_dir, "frequency.csv"),
        )
        return BandRunResult(band_source, band_target, out_dir, 0, 0, 0, 0, note=note)

    source_cells = classify_cells(
        source, bands_source, band_source, "source", None, config.orientation_source
    )
    target_cells = classify_cells(
        target, bands_target, band_target, "target", None, config.orientation_target
    )
    graph_params = {
        "orientation_source": config.orientation_source,
        "orientation_target": config.orientation_target,
        "target_interval": list(bands_target.interval(band_target)),
        "thresholds_source": {
            "median": bands_source.median,
            "q3": bands_source.q3,
            "ub": bands_source.ub,
        },
        "thresholds_target": {
            "median": bands_target.median,
            "q3": bands_target.q3,
            "ub": bands_target.ub,
        },
        "window": config.window,
        "band_scope": config.band_scope,
    }
    try:
        graph = build_graph(
            source_cells,
            target_cells,
            max_edge_cells=config.dmax,
            metric=config.metric,
            variant=config.variant,
            anomaly_mask=anomaly_bits if config.variant == VARIANT_CMAD else None,
            grid_shape=source.shape,
            params=graph_params,
        )
    except EmptySide as exc:
        # A sweep cell with an empty band is an expected outcome, not a
        # failed run; single-pair runs propagate the error instead.
        if not config.sweep_bands:
            raise
        return write_empty(str(exc))

    io.write_json(io.graph_to_json(graph, metadata), os.path.join(out_dir, "graph.json"))

    paths = extract_all_paths(graph, max_nodes=config.max_len, cap=config.cap, threads=config.threads)
    io.write_json(io.paths_to_json(paths, graph, metadata), os.path.join(out_dir, "paths.json"))

    if paths:
        engine = PermutationNull.for_graph(
            graph,
            source,
            target,
            policy=SeedPolicy(base_seed=config.seed),
            n_replicates=config.m,
            threads=config.threads,
            anomaly_mask=anomaly_bits if config.variant == VARIANT_CMAD else None,
        )
        results = engine.evaluate(
            paths,
            alpha=config.alpha,
            share_null_by_length=config.share_null,
            bh_correction=config.bh,
        )
    else:
        results = []
    io.write_json(io.results_to_json(results, metadata), os.path.join(out_dir, "results.json"))

    significant = filter_significant(results)
    io.write_json(
        io.export_geojson(significant, graph, source.registration, metadata),
        os.path.join(out_dir, "significant.geojson"),
    )
    freq = linkage_frequency([r.path for r in significant], graph, source.shape)
    io.frequency_to_csv(freq, metadata, os.path.join(out_dir, "frequency.csv"))

    return BandRunResult(
        band_source=band_source,
        band_target=band_target,
        out_dir=out_dir,
        n_nodes=graph.n_nodes,
        n_edges=graph.n_edges,
        n_paths=len(paths),
        n_significant=len(significant),
    )


def run_pipeline(config: RunConfig) -> list[BandRunResult]:
    """Execute one run (or a 3x3 band sweep) and write all artifacts."""
    config.validate()
    source, target, anomaly_bits, bands_source, bands_target = prepare_grids(config)

    if config.sweep_bands:
        pairs = [(bs, bt) for bs in BANDS for bt in BANDS]
    else:
        pairs = [(config.band_source, config.band_target)]

    results = []
    for band_source, band_target in pairs:
        if config.sweep_bands:
            out_dir = os.path.join(config.out_dir, f"{band_source}_{band_target}")
        else:
            out_dir = config.out_dir
        results.append(
            _run_band_pair(
                config,
                band_source,
                band_target,
                source,
                target,
                anomaly_bits,
                bands_source,
                bands_target,
                out_dir,
            )
        )
    return results
