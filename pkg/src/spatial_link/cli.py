"""Command line front end.

Subcommands mirror the pipeline stages so each intermediate artifact can
be produced, inspected, and fed forward independently: ``thresholds``,
``diff``, ``build-graph``, ``extract-paths``, ``significance``,
``pipeline``, ``synth``, and ``aar``. Thread count resolves from
``--threads``, then the config file, then the SPATIAL_LINK_THREADS
environment variable, then 1.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__, io
from .aar import (
    DEFAULT_AAR_ALPHA,
    DEFAULT_MAX_EDGE_KM,
    DEFAULT_MIN_EXTENT_KM,
    DEFAULT_SNAP_KM,
    run_aar,
)
from .errors import ConfigError, SpatialLinkError
from .graph import build_graph
from .grid import (
    LOSS_NEGATIVE,
    RegionWindow,
    classify_cells,
    compute_threshold_bands,
    crop_region,
    diff_grids,
)
from .paths import DEFAULT_CAP, DEFAULT_MAX_NODES, extract_all_paths
from .pipeline import RunConfig, prepare_grids, run_pipeline
from .significance import (
    DEFAULT_ALPHA,
    DEFAULT_REPLICATES,
    PermutationNull,
    SeedPolicy,
)
from .synthetic import NoiseModel, PlantSpec, chain_spec, generate, generate_null

ENV_THREADS = "SPATIAL_LINK_THREADS"


def _resolve_threads(flag_value: int | None, config_value: int | None = None) -> int:
    if flag_value is not None:
        return flag_value
    if config_value is not None:
        return config_value
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"{ENV_THREADS}={env!r} is not an integer") from exc
    return 1


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="base seed (default 0)")
    parser.add_argument(
        "--threads", type=int, default=None,
        help=f"worker threads (default: ${ENV_THREADS} or 1)",
    )


# -- subcommand implementations -------------------------------------------


def cmd_thresholds(args) -> int:
    grid = io.load_grid(args.grid)
    window = RegionWindow.parse(args.window) if args.window else None
    if window is not None:
        grid = crop_region(grid, window)
    bands = compute_threshold_bands(grid, args.orientation, args.ub_multiplier)
    doc = {
        "grid": args.grid,
        "orientation": args.orientation,
        "window": args.window,
        "median": bands.median,
        "q3": bands.q3,
        "ub": bands.ub,
    }
    print(json.dumps(doc, indent=2))
    return 0


def cmd_diff(args) -> int:
    earlier = io.load_grid(args.earlier)
    later = io.load_grid(args.later)
    io.save_grid(diff_grids(later, earlier), args.output)
    return 0


def _config_from_args(args, threads: int) -> RunConfig:
    return RunConfig(
        source=args.source,
        target=args.target,
        mask=args.mask,
        variant=args.variant,
        orientation_source=args.orientation_source,
        orientation_target=args.orientation_target,
        window=args.window,
        band_source=args.band_source,
        band_target=args.band_target,
        band_scope=args.band_scope,
        ub_multiplier=args.ub_multiplier,
        dmax=args.dmax,
        metric=args.metric,
        seed=args.seed if args.seed is not None else 0,
        threads=threads,
    )


def cmd_build_graph(args) -> int:
    threads = _resolve_threads(args.threads)
    config = _config_from_args(args, threads)
    config.validate()
    source, target, anomaly_bits, bands_source, bands_target = prepare_grids(config)
    source_cells = classify_cells(
        source, bands_source, config.band_source, "source", None, config.orientation_source
    )
    target_cells = classify_cells(
        target, bands_target, config.band_target, "target", None, config.orientation_target
    )
    graph = build_graph(
        source_cells,
        target_cells,
        max_edge_cells=config.dmax,
        metric=config.metric,
        variant=config.variant,
        anomaly_mask=anomaly_bits if config.variant == "cmad" else None,
        grid_shape=source.shape,
        params={
            "orientation_source": config.orientation_source,
            "orientation_target": config.orientation_target,
            "target_interval": list(bands_target.interval(config.band_target)),
            "window": config.window,
            "band_scope": config.band_scope,
        },
    )
    metadata = io.metadata_block(config.echo(), config.seed)
    io.write_json(io.graph_to_json(graph, metadata), args.output)
    print(f"graph: {graph.n_nodes} nodes, {graph.n_edges} edges -> {args.output}")
    return 0


def cmd_extract_paths(args) -> int:
    threads = _resolve_threads(args.threads)
    doc = io.read_json(args.graph)
    graph = io.graph_from_json(doc)
    paths = extract_all_paths(graph, max_nodes=args.max_len, cap=args.cap, threads=threads)
    echo = {
        "command": "extract-paths",
        "graph": args.graph,
        "max_len": args.max_len,
        "cap": args.cap,
    }
    metadata = io.metadata_block(echo, args.seed if args.seed is not None else 0)
    io.write_json(io.paths_to_json(paths, graph, metadata), args.output)
    print(f"paths: {len(paths)} candidates -> {args.output}")
    return 0


def cmd_significance(args) -> int:
    threads = _resolve_threads(args.threads)
    seed = args.seed if args.seed is not None else 0
    graph = io.graph_from_json(io.read_json(args.graph))
    paths = io.paths_from_json(io.read_json(args.paths))

    source = io.load_grid(args.source)
    target = io.load_grid(args.target)
    window_spec = graph.params.get("window")
    if window_spec:
        window = RegionWindow.parse(window_spec)
        source = crop_region(source, window)
        target = crop_region(target, window)
    anomaly_bits = None
    if args.mask:
        mask_grid = io.load_grid(args.mask)
        if window_spec:
            mask_grid = crop_region(mask_grid, RegionWindow.parse(window_spec))
        anomaly_bits = mask_grid.valid_mask & (mask_grid.values != 0)

    engine = PermutationNull.for_graph(
        graph,
        source,
        target,
        policy=SeedPolicy(base_seed=seed),
        n_replicates=args.m,
        threads=threads,
        anomaly_mask=anomaly_bits,
    )
    results = engine.evaluate(
        paths, alpha=args.alpha, share_null_by_length=args.share_null,
        bh_correction=args.bh,
    )
    echo = {
        "command": "significance",
        "graph": args.graph,
        "paths": args.paths,
        "source": args.source,
        "target": args.target,
        "mask": args.mask,
        "m": args.m,
        "alpha": args.alpha,
        "share_null": bool(args.share_null),
        "bh": bool(args.bh),
    }
    metadata = io.metadata_block(echo, seed)
    io.write_json(io.results_to_json(results, metadata), args.output)
    n_sig = sum(1 for r in results if r.significant)
    print(f"significance: {n_sig}/{len(results)} paths at alpha={args.alpha} -> {args.output}")
    return 0


def cmd_pipeline(args) -> int:
    doc = {}
    if args.config:
        doc = io.read_json(args.config)
    overrides = {
        "source": args.source,
        "target": args.target,
        "mask": args.mask,
        "variant": args.variant,
        "orientation_source": args.orientation_source,
        "orientation_target": args.orientation_target,
        "window": args.window,
        "band_source": args.band_source,
        "band_target": args.band_target,
        "band_scope": args.band_scope,
        "ub_multiplier": args.ub_multiplier,
        "dmax": args.dmax,
        "metric": args.metric,
        "max_len": args.max_len,
        "cap": args.cap,
        "m": args.m,
        "alpha": args.alpha,
        "seed": args.seed,
        "share_null": args.share_null,
        "bh": args.bh,
        "sweep_bands": args.sweep_bands,
        "out_dir": args.out_dir,
    }
    if args.resample_source:
        overrides["resample_source"] = _parse_dims(args.resample_source)
    doc.update({k: v for k, v in overrides.items() if v is not None})
    doc["threads"] = _resolve_threads(args.threads, doc.get("threads"))
    config = RunConfig.from_dict(doc)
    for result in run_pipeline(config):
        label = f"{result.band_source}/{result.band_target}"
        if result.note:
            print(f"{label}: skipped ({result.note})")
        else:
            print(
                f"{label}: nodes={result.n_nodes} edges={result.n_edges} "
                f"paths={result.n_paths} significant={result.n_significant}"
            )
    return 0


def _parse_dims(text: str) -> list[int]:
    for sep in ("x", ","):
        if sep in text:
            a, b = text.split(sep)
            return [int(a), int(b)]
    raise ConfigError(f"cannot parse dims {text!r}, expected ROWSxCOLS")


def cmd_synth(args) -> int:
    doc = io.read_json(args.spec)
    dims = doc.get("dims")
    if not dims or len(dims) != 2:
        raise ConfigError("synth spec must set dims: [rows, cols]")
    noise_doc = doc.get("noise", {})
    noise = NoiseModel(
        name=noise_doc.get("name", "gaussian"),
        sigma=float(noise_doc.get("sigma", 1.0)),
        mean=float(noise_doc.get("mean", 0.0)),
    )
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    os.makedirs(args.out_dir, exist_ok=True)
    metadata = io.metadata_block(doc, seed)

    if "chain_cells" in doc:
        cells = [tuple(c) for c in doc["chain_cells"]]
        if "chain_values" in doc:
            spec = PlantSpec(
                chain_cells=tuple((int(r), int(c)) for r, c in cells),
                chain_values=tuple(float(v) for v in doc["chain_values"]),
                split_index=int(doc["split_index"]),
                noise=noise,
                seed=seed,
                max_spacing_cells=float(doc.get("max_spacing_cells", 11.0)),
                max_len=int(doc.get("max_len", 11)),
            )
            spec.validate()
        else:
            spec = chain_spec(
                cells,
                int(doc["split_index"]),
                band=doc.get("band", "moderate"),
                noise=noise,
                seed=seed,
                max_spacing_cells=float(doc.get("max_spacing_cells", 11.0)),
                max_len=int(doc.get("max_len", 11)),
            )
        source, target, truth = generate(spec, (int(dims[0]), int(dims[1])))
        truth_doc = {
            "metadata": metadata,
            "cells": [list(c) for c in truth.cells],
            "split_index": truth.split_index,
            "values": list(truth.values),
        }
        io.write_json(truth_doc, os.path.join(args.out_dir, "truth.json"))
    else:
        source, target = generate_null((int(dims[0]), int(dims[1])), noise, seed)

    io.save_grid(source, os.path.join(args.out_dir, "source.raw"))
    io.save_grid(target, os.path.join(args.out_dir, "target.raw"))
    print(f"synthetic instance ({dims[0]}x{dims[1]}, seed {seed}) -> {args.out_dir}")
    return 0


def cmd_aar(args) -> int:
    threads = _resolve_threads(args.threads)
    seed = args.seed if args.seed is not None else 0
    values = io.load_grid(args.values)
    mask = io.load_grid(args.mask)

    doc = io.read_json(args.origins)
    if isinstance(doc, dict):
        if "origins" not in doc:
            raise ConfigError(
                f"{args.origins} has no 'origins' key",
                hint="expected a JSON list or an object with an origins list",
            )
        raw_origins = doc["origins"]
    else:
        raw_origins = doc
    origins = []
    try:
        for entry in raw_origins:
            if isinstance(entry, dict):
                if "cell" in entry:
                    r, c = entry["cell"]
                    origins.append((int(r), int(c)))
                else:
                    origins.append((float(entry["lat"]), float(entry["lon"])))
            else:
                a, b = entry
                origins.append((float(a), float(b)))
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(
            f"bad origin entry in {args.origins}: {exc}",
            hint="entries are [lat, lon], {lat, lon}, or {cell: [row, col]}",
        ) from exc
    try:
        st_lat, st_lon = (float(v) for v in args.station.split(","))
    except ValueError as exc:
        raise ConfigError(f"cannot parse station {args.station!r}, expected lat,lon") from exc

    report = run_aar(
        values,
        mask,
        origins,
        (st_lat, st_lon),
        max_edge_km=args.max_edge_km,
        min_extent_km=args.min_extent_km,
        max_nodes=args.max_len,
        n_replicates=args.m,
        alpha=args.alpha,
        seed=seed,
        threads=threads,
        threshold=args.threshold,
        snap_km=args.snap_km,
        cap=args.cap,
    )

    echo = {
        "command": "aar",
        "values": args.values,
        "mask": args.mask,
        "origins": args.origins,
        "station": args.station,
        "max_edge_km": args.max_edge_km,
        "min_extent_km": args.min_extent_km,
        "max_len": args.max_len,
        "m": args.m,
        "alpha": args.alpha,
        "threshold": report.threshold,
        "snap_km": args.snap_km,
    }
    metadata = io.metadata_block(echo, seed)
    station_doc = None
    if report.station_id is not None:
        p = report.points[report.station_id]
        station_doc = {
            "id": report.station_id,
            "lat": p.lat,
            "lon": p.lon,
            "cell": list(p.cell) if p.cell else None,
        }
    out_doc = {
        "metadata": metadata,
        "n_points": len(report.points),
        "threshold": report.threshold,
        "station": station_doc,
        "components": [
            {
                "size": comp.size,
                "extent_km": comp.extent_km,
                "retained": comp.retained,
                "node_ids": list(comp.node_ids),
            }
            for comp in report.components
        ],
        "dropped_origins": report.dropped_origins,
        "results": [
            {
                "path_index": k,
                "nodes": list(r.path.nodes),
                "observed": r.observed,
                "p_value": r.p_value,
                "significant": r.significant,
                "alpha": r.alpha,
            }
            for k, r in enumerate(report.results)
        ],
    }
    io.write_json(out_doc, args.output)
    n_sig = sum(1 for r in report.results if r.significant)
    n_ret = sum(1 for c in report.components if c.retained)
    print(
        f"aar: {len(report.points)} points, {len(report.components)} components "
        f"({n_ret} retained), {n_sig}/{len(report.results)} significant paths -> {args.output}"
    )
    return 0


# -- parser wiring ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spatial-link",
        description="Detect statistically significant spatial linkage paths "
        "between two gridded change fields.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("thresholds", help="print a field's banding thresholds as JSON")
    p.add_argument("--grid", required=True)
    p.add_argument("--orientation", default=LOSS_NEGATIVE)
    p.add_argument("--window", default=None, help="inclusive r0:r1,c0:c1")
    p.add_argument("--ub-multiplier", type=float, default=1.5)
    _add_common(p)
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("diff", help="per-cell change field LATER - EARLIER")
    p.add_argument("earlier")
    p.add_argument("later")
    p.add_argument("-o", "--output", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_diff)

    def add_graph_flags(p):
        p.add_argument("--source", required=True)
        p.add_argument("--target", required=True)
        p.add_argument("--mask", default=None)
        p.add_argument("--variant", default="standard", choices=["standard", "cmad"])
        p.add_argument("--orientation-source", default=LOSS_NEGATIVE)
        p.add_argument("--orientation-target", default=LOSS_NEGATIVE)
        p.add_argument("--window", default=None)
        p.add_argument("--band-source", default="moderate")
        p.add_argument("--band-target", default="moderate")
        p.add_argument("--band-scope", default="window", choices=["window", "global"])
        p.add_argument("--ub-multiplier", type=float, default=1.5)
        p.add_argument("--dmax", type=float, default=11.0, help="max edge length in cells")
        p.add_argument("--metric", default="euclidean", choices=["euclidean", "chebyshev"])

    p = sub.add_parser("build-graph", help="build the linkage graph and write graph.json")
    add_graph_flags(p)
    p.add_argument("-o", "--output", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("extract-paths", help="enumerate candidate paths from graph.json")
    p.add_argument("--graph", required=True)
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_NODES, help="max nodes per path")
    p.add_argument("--cap", type=int, default=DEFAULT_CAP)
    p.add_argument("-o", "--output", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_extract_paths)

    p = sub.add_parser("significance", help="score candidate paths under the permutation null")
    p.add_argument("--graph", required=True)
    p.add_argument("--paths", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--m", type=int, default=DEFAULT_REPLICATES, help="null replicates")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--share-null", action="store_true")
    p.add_argument("--bh", action="store_true", help="Benjamini-Hochberg correction")
    p.add_argument("-o", "--output", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_significance)

    p = sub.add_parser("pipeline", help="full run: bands, graph, paths, significance, artifacts")
    p.add_argument("--config", default=None, help="JSON config; flags override its entries")
    p.add_argument("--source")
    p.add_argument("--target")
    p.add_argument("--mask")
    p.add_argument("--variant", choices=["standard", "cmad"])
    p.add_argument("--orientation-source")
    p.add_argument("--orientation-target")
    p.add_argument("--window")
    p.add_argument("--band-source")
    p.add_argument("--band-target")
    p.add_argument("--band-scope", choices=["window", "global"])
    p.add_argument("--ub-multiplier", type=float)
    p.add_argument("--dmax", type=float)
    p.add_argument("--metric", choices=["euclidean", "chebyshev"])
    p.add_argument("--max-len", type=int)
    p.add_argument("--cap", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--share-null", action="store_true", default=None)
    p.add_argument("--bh", action="store_true", default=None)
    p.add_argument("--sweep-bands", action="store_true", default=None)
    p.add_argument("--resample-source", default=None, help="ROWSxCOLS for the source grid")
    p.add_argument("--out-dir", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("synth", help="generate a planted or null synthetic instance")
    p.add_argument("--spec", required=True, help="JSON instance spec")
    p.add_argument("--out-dir", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("aar", help="transport benchmark over one point field")
    p.add_argument("--values", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--origins", required=True, help="JSON list of [lat, lon] or {cell: [r, c]}")
    p.add_argument("--station", required=True, help="lat,lon")
    p.add_argument("--max-edge-km", type=float, default=DEFAULT_MAX_EDGE_KM)
    p.add_argument("--min-extent-km", type=float, default=DEFAULT_MIN_EXTENT_KM)
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_NODES)
    p.add_argument("--m", type=int, default=DEFAULT_REPLICATES)
    p.add_argument("--alpha", type=float, default=DEFAULT_AAR_ALPHA)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--snap-km", type=float, default=DEFAULT_SNAP_KM)
    p.add_argument("--cap", type=int, default=DEFAULT_CAP)
    p.add_argument("-o", "--output", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_aar)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpatialLinkError as exc:
        print(f"spatial-link: error [{exc.module}]: {exc}", file=sys.stderr)
        if exc.hint:
            print(f"spatial-link: hint: {exc.hint}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
