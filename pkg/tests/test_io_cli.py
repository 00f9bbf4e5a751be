"""Grid formats, artifact serializers, and the command line front end."""
from __future__ import annotations

import json
import os

import numpy as np
import pytest

from spatial_link import __version__, cli, io
from spatial_link.errors import MalformedHeader
from spatial_link.graph import build_graph
from spatial_link.grid import (
    KIND_SOURCE,
    KIND_TARGET,
    LOSS_NEGATIVE,
    ChangeGrid,
    GridRegistration,
    QUARTER_DEGREE_GLOBAL,
    classify_cells,
    compute_threshold_bands,
)
from spatial_link.paths import LinkagePath, extract_all_paths
from spatial_link.significance import PermutationNull, SeedPolicy, SignificanceResult
from spatial_link.synthetic import chain_spec, generate


def grid_of(values, valid=None, registration=QUARTER_DEGREE_GLOBAL) -> ChangeGrid:
    values = np.asarray(values, dtype=float)
    valid = np.ones_like(values, dtype=bool) if valid is None else valid
    return ChangeGrid(values=values, valid_mask=valid, registration=registration)


class TestGridFormatA:
    def test_round_trip(self, tmp_path):
        grid = grid_of([[-1.5, 2.25], [0.5, -3.0]])
        path = str(tmp_path / "grid.raw")
        io.save_grid(grid, path)
        back = io.load_grid(path)
        assert np.array_equal(back.values, grid.values)
        assert back.valid_mask.all()
        assert back.registration == grid.registration
        assert not os.path.exists(path + ".mask")

    def test_mask_round_trip_with_nan_at_invalid(self, tmp_path):
        vals = np.array([[np.nan, 1.0], [2.0, np.nan]])
        valid = ~np.isnan(vals)
        grid = grid_of(vals, valid)
        path = str(tmp_path / "g.raw")
        io.save_grid(grid, path)
        assert os.path.exists(path + ".mask")
        back = io.load_grid(path)
        assert np.array_equal(back.valid_mask, valid)
        assert np.isnan(back.values[0, 0]) and np.isnan(back.values[1, 1])
        assert back.values[0, 1] == 1.0

    def test_payload_rounds_to_single_precision(self, tmp_path):
        grid = grid_of([[0.1, 0.2], [0.3, 0.4]])
        path = str(tmp_path / "g.raw")
        io.save_grid(grid, path)
        back = io.load_grid(path)
        assert back.values[0, 0] == float(np.float32(0.1))
        assert back.values[0, 0] != 0.1

    def test_load_by_sidecar_path(self, tmp_path):
        grid = grid_of([[1.0, -1.0]])
        path = str(tmp_path / "g.raw")
        io.save_grid(grid, path)
        back = io.load_grid(path + ".json")
        assert np.array_equal(back.values, grid.values)

    def test_sidecar_payload_path_indirection(self, tmp_path):
        np.array([1.0, 2.0, 3.0, 4.0], dtype="<f4").tofile(tmp_path / "payload.bin")
        sidecar = {
            "rows": 2, "cols": 2, "lat0": 0.0, "lon0": 0.0,
            "dlat": 1.0, "dlon": 1.0, "cell_km": 111.11,
            "payload_path": "payload.bin",
        }
        spath = tmp_path / "grid.json"
        spath.write_text(json.dumps(sidecar))
        back = io.load_grid(str(spath))
        assert back.values.tolist() == [[1.0, 2.0], [3.0, 4.0]]

    def test_payload_size_mismatch(self, tmp_path):
        grid = grid_of([[1.0, 2.0], [3.0, 4.0]])
        path = str(tmp_path / "g.raw")
        io.save_grid(grid, path)
        np.array([1.0, 2.0, 3.0], dtype="<f4").tofile(path)
        with pytest.raises(MalformedHeader, match="holds 3 values") as exc:
            io.load_grid(path)
        assert exc.value.hint == "dimension mismatch between header and payload"

    def test_missing_sidecar_field(self, tmp_path):
        grid = grid_of([[1.0]])
        path = str(tmp_path / "g.raw")
        io.save_grid(grid, path)
        doc = json.loads(open(path + ".json").read())
        del doc["cell_km"]
        open(path + ".json", "w").write(json.dumps(doc))
        with pytest.raises(MalformedHeader, match="cell_km"):
            io.load_grid(path)

    def test_non_integer_dims(self, tmp_path):
        grid = grid_of([[1.0]])
        path = str(tmp_path / "g.raw")
        io.save_grid(grid, path)
        doc = json.loads(open(path + ".json").read())
        doc["rows"] = 1.5
        open(path + ".json", "w").write(json.dumps(doc))
        with pytest.raises(MalformedHeader, match="invalid dims"):
            io.load_grid(path)

    def test_mask_size_mismatch(self, tmp_path):
        vals = np.array([[np.nan, 1.0]])
        grid = grid_of(vals, ~np.isnan(vals))
        path = str(tmp_path / "g.raw")
        io.save_grid(grid, path)
        np.zeros(5, dtype=np.uint8).tofile(path + ".mask")
        with pytest.raises(MalformedHeader, match="5 bytes"):
            io.load_grid(path)

    def test_corrupt_sidecar_json(self, tmp_path):
        path = str(tmp_path / "g.raw")
        np.zeros(1, dtype="<f4").tofile(path)
        open(path + ".json", "w").write("{not json")
        with pytest.raises(MalformedHeader, match="not valid JSON"):
            io.load_grid(path)


class TestGridFormatB:
    def test_round_trip(self, tmp_path):
        vals = np.array([[0.1 + 0.2, -1.0], [np.nan, 4.0]])
        grid = grid_of(vals, ~np.isnan(vals))
        path = str(tmp_path / "g.csv")
        io.save_grid_csv(grid, path)
        back = io.load_grid(path)
        assert np.array_equal(back.valid_mask, grid.valid_mask)
        assert back.values[0, 0] == vals[0, 0]
        assert back.values[1, 1] == 4.0

    def test_unlisted_cells_are_invalid(self, tmp_path):
        path = tmp_path / "g.csv"
        path.write_text("row,col,value\n0,0,1.5\n2,3,-2.5\n")
        back = io.load_grid(str(path))
        assert back.shape == (3, 4)
        assert back.valid_mask.sum() == 2
        assert back.values[2, 3] == -2.5

    def test_duplicate_cell(self, tmp_path):
        path = tmp_path / "g.csv"
        path.write_text("row,col,value\n0,0,1.0\n0,0,2.0\n")
        with pytest.raises(MalformedHeader, match="duplicate cell"):
            io.load_grid(str(path))

    def test_bad_header(self, tmp_path):
        path = tmp_path / "g.csv"
        path.write_text("x,y,z\n0,0,1.0\n")
        with pytest.raises(MalformedHeader, match="header"):
            io.load_grid(str(path))

    def test_negative_index(self, tmp_path):
        path = tmp_path / "g.csv"
        path.write_text("row,col,value\n-1,0,1.0\n")
        with pytest.raises(MalformedHeader, match="negative cell index"):
            io.load_grid(str(path))

    def test_bad_record_reports_line(self, tmp_path):
        path = tmp_path / "g.csv"
        path.write_text("row,col,value\n0,0,1.0\n1,oops,2.0\n")
        with pytest.raises(MalformedHeader, match=":3:"):
            io.load_grid(str(path))

    def test_no_cells(self, tmp_path):
        path = tmp_path / "g.csv"
        path.write_text("row,col,value\n")
        with pytest.raises(MalformedHeader, match="no cells"):
            io.load_grid(str(path))


class TestMetadataBlock:
    def test_fields(self):
        block = io.metadata_block({"dmax": 2.0}, seed=7)
        assert block["tool"] == "spatial-link"
        assert block["version"] == __version__
        assert block["config"] == {"dmax": 2.0}
        assert block["seed"] == 7
        assert block["null_model"] == "field-permutation"


def small_graph(variant="standard"):
    spec = chain_spec([(2, 2 + i) for i in range(4)], split_index=2, seed=3)
    source, target, _ = generate(spec, (12, 12))
    bs = compute_threshold_bands(source, LOSS_NEGATIVE)
    bt = compute_threshold_bands(target, LOSS_NEGATIVE)
    src = classify_cells(source, bs, "moderate", KIND_SOURCE)
    tgt = classify_cells(target, bt, "moderate", KIND_TARGET)
    kwargs = {}
    if variant == "cmad":
        kwargs = {"anomaly_mask": np.ones((12, 12), dtype=bool), "grid_shape": (12, 12)}
    return build_graph(src, tgt, max_edge_cells=2.0, variant=variant,
                       params={"note": "fixture"}, **kwargs), source, target


class TestGraphJson:
    def test_round_trip(self):
        graph, _, _ = small_graph()
        doc = io.graph_to_json(graph, io.metadata_block({}, 0))
        back = io.graph_from_json(doc)
        assert back.nodes == graph.nodes
        assert back.edges == graph.edges
        assert back.params == graph.params

    def test_round_trip_preserves_anomaly_flags(self):
        graph, _, _ = small_graph(variant="cmad")
        assert any(n.anomalous is not None for n in graph.nodes)
        doc = io.graph_to_json(graph, io.metadata_block({}, 0))
        back = io.graph_from_json(doc)
        assert back.nodes == graph.nodes

    def test_none_anomalous_is_omitted_from_json(self):
        graph, _, _ = small_graph()
        doc = io.graph_to_json(graph, io.metadata_block({}, 0))
        assert all("anomalous" not in n for n in doc["nodes"])


class TestPathsJson:
    def test_round_trip(self):
        graph, _, _ = small_graph()
        paths = extract_all_paths(graph, max_nodes=4)
        assert paths
        doc = io.paths_to_json(paths, graph, io.metadata_block({}, 0))
        assert io.paths_from_json(doc) == paths
        for entry, p in zip(doc["paths"], paths):
            assert entry["cells"] == [[graph.nodes[i].row, graph.nodes[i].col] for i in p.nodes]


class TestResultsJson:
    def test_layout(self):
        path = LinkagePath(nodes=(0, 1), edge_weights=(1,), score=1.0)
        res = SignificanceResult(path=path, observed=1.0, p_value=0.01,
                                 significant=True, alpha=0.05)
        doc = io.results_to_json([res], io.metadata_block({}, 0))
        (entry,) = doc["results"]
        assert entry == {
            "path_index": 0,
            "nodes": [0, 1],
            "observed": 1.0,
            "p_value": 0.01,
            "significant": True,
            "alpha": 0.05,
        }


class TestGeoJson:
    def make_result(self, cells):
        from spatial_link.graph import GraphEdge, GraphNode, SpatialGraph

        nodes = [
            GraphNode(id=i, row=r, col=c, kind=KIND_SOURCE if i == 0 else KIND_TARGET,
                      value=-1.0)
            for i, (r, c) in enumerate(cells)
        ]
        edges = [GraphEdge(u=i, v=i + 1, weight=1, distance=1.0) for i in range(len(cells) - 1)]
        graph = SpatialGraph(nodes=nodes, edges=edges)
        path = LinkagePath(nodes=tuple(range(len(cells))),
                           edge_weights=(1,) * (len(cells) - 1), score=1.0)
        res = SignificanceResult(path=path, observed=1.0, p_value=0.004,
                                 significant=True, alpha=0.05)
        return graph, res

    def test_antarctic_cell_centers(self):
        graph, res = self.make_result([(0, 200), (0, 211)])
        doc = io.export_geojson([res], graph, QUARTER_DEGREE_GLOBAL, io.metadata_block({}, 0))
        assert doc["type"] == "FeatureCollection"
        (feat,) = doc["features"]
        assert feat["geometry"]["type"] == "LineString"
        assert feat["geometry"]["coordinates"] == [[-130.0, -90.0], [-127.25, -90.0]]
        assert feat["properties"] == {
            "score": 1.0,
            "p_value": 0.004,
            "source_cell": [0, 200],
            "target_cell": [0, 211],
        }

    def test_coordinates_invert_back_to_cells(self):
        cells = [(3, 7), (4, 9), (6, 9)]
        reg = GridRegistration(lat0=-60.0, lon0=10.0, dlat=0.5, dlon=0.5, cell_km=50.0)
        graph, res = self.make_result(cells)
        doc = io.export_geojson([res], graph, reg, io.metadata_block({}, 0))
        back = [
            (round((lat - reg.lat0) / reg.dlat), round((lon - reg.lon0) / reg.dlon))
            for lon, lat in doc["features"][0]["geometry"]["coordinates"]
        ]
        assert back == cells

    def test_empty_result_list(self):
        doc = io.export_geojson([], None, QUARTER_DEGREE_GLOBAL, io.metadata_block({}, 0))
        assert doc["features"] == []


class TestFrequencyCsv:
    def test_round_trip_with_metadata_comment(self, tmp_path):
        freq = np.array([[0, 2, 1], [3, 0, 0]], dtype=np.int64)
        path = str(tmp_path / "freq.csv")
        io.frequency_to_csv(freq, io.metadata_block({"m": 9}, 1), path)
        first = open(path).readline()
        assert first.startswith("# metadata: ")
        assert json.loads(first[len("# metadata: "):])["config"] == {"m": 9}
        assert np.array_equal(io.load_frequency_csv(path), freq)

    def test_single_row_keeps_two_dims(self, tmp_path):
        path = str(tmp_path / "freq.csv")
        io.frequency_to_csv(np.array([[1, 2]]), io.metadata_block({}, 0), path)
        assert io.load_frequency_csv(path).shape == (1, 2)


@pytest.fixture()
def instance_files(tmp_path):
    """A planted instance saved in format A, ready for CLI runs."""
    spec = chain_spec([(4, 4 + i) for i in range(6)], split_index=3, seed=8)
    source, target, _ = generate(spec, (20, 20))
    spath, tpath = str(tmp_path / "source.raw"), str(tmp_path / "target.raw")
    io.save_grid(source, spath)
    io.save_grid(target, tpath)
    return spath, tpath


class TestCli:
    def run(self, argv, capsys):
        rc = cli.main(argv)
        out = capsys.readouterr()
        return rc, out.out, out.err

    def test_missing_input_file_exits_nonzero_with_module(self, tmp_path, capsys):
        rc, _, err = self.run(
            ["thresholds", "--grid", str(tmp_path / "absent.raw")], capsys
        )
        assert rc == 1
        assert "spatial-link: error [grid-core]" in err

    def test_thresholds_prints_band_json(self, instance_files, capsys):
        spath, _ = instance_files
        rc, out, _ = self.run(["thresholds", "--grid", spath], capsys)
        assert rc == 0
        doc = json.loads(out)
        bands = compute_threshold_bands(io.load_grid(spath), LOSS_NEGATIVE)
        assert doc["median"] == bands.median
        assert doc["q3"] == bands.q3
        assert doc["ub"] == bands.ub
        assert doc["orientation"] == LOSS_NEGATIVE

    def test_diff_subtracts_earlier_from_later(self, tmp_path, capsys):
        earlier = grid_of([[1.0, 2.0]])
        later = grid_of([[3.0, -1.0]])
        io.save_grid(earlier, str(tmp_path / "a.raw"))
        io.save_grid(later, str(tmp_path / "b.raw"))
        out = str(tmp_path / "d.raw")
        rc, _, _ = self.run(
            ["diff", str(tmp_path / "a.raw"), str(tmp_path / "b.raw"), "-o", out], capsys
        )
        assert rc == 0
        assert io.load_grid(out).values.tolist() == [[2.0, -3.0]]

    def test_stage_chain_matches_api(self, instance_files, tmp_path, capsys):
        """build-graph | extract-paths | significance equals the direct API."""
        spath, tpath = instance_files
        gpath = str(tmp_path / "graph.json")
        ppath = str(tmp_path / "paths.json")
        rpath = str(tmp_path / "results.json")
        base = ["--source", spath, "--target", tpath]
        rc, out, _ = self.run(
            ["build-graph", *base, "--dmax", "2.0", "-o", gpath], capsys
        )
        assert rc == 0 and "nodes" in out
        rc, _, _ = self.run(
            ["extract-paths", "--graph", gpath, "--max-len", "4", "-o", ppath], capsys
        )
        assert rc == 0
        rc, _, _ = self.run(
            ["significance", *base, "--graph", gpath, "--paths", ppath,
             "--m", "99", "--seed", "5", "-o", rpath], capsys
        )
        assert rc == 0

        source, target = io.load_grid(spath), io.load_grid(tpath)
        src = classify_cells(source, compute_threshold_bands(source, LOSS_NEGATIVE),
                             "moderate", KIND_SOURCE)
        tgt = classify_cells(target, compute_threshold_bands(target, LOSS_NEGATIVE),
                             "moderate", KIND_TARGET)
        graph = build_graph(src, tgt, max_edge_cells=2.0)
        paths = extract_all_paths(graph, max_nodes=4)
        engine = PermutationNull.for_graph(
            graph, source, target, SeedPolicy(base_seed=5), n_replicates=99
        )
        expected = engine.evaluate(paths)

        doc = json.loads(open(rpath).read())
        assert [r["nodes"] for r in doc["results"]] == [list(p.nodes) for p in paths]
        assert [r["p_value"] for r in doc["results"]] == [r.p_value for r in expected]

    def test_pipeline_writes_artifacts_and_is_thread_invariant(
        self, instance_files, tmp_path, capsys
    ):
        spath, tpath = instance_files
        config = {
            "source": spath,
            "target": tpath,
            "dmax": 2.0,
            "max_len": 4,
            "m": 99,
            "seed": 3,
        }
        cpath = tmp_path / "config.json"
        cpath.write_text(json.dumps(config))
        out1, out8 = str(tmp_path / "run1"), str(tmp_path / "run8")
        rc, out, _ = self.run(
            ["pipeline", "--config", str(cpath), "--out-dir", out1, "--threads", "1"], capsys
        )
        assert rc == 0
        assert "nodes=" in out and "significant=" in out
        for name in ("graph.json", "paths.json", "results.json",
                     "significant.geojson", "frequency.csv"):
            assert os.path.exists(os.path.join(out1, name)), name
        rc, _, _ = self.run(
            ["pipeline", "--config", str(cpath), "--out-dir", out8, "--threads", "8"], capsys
        )
        assert rc == 0
        a = open(os.path.join(out1, "results.json"), "rb").read()
        b = open(os.path.join(out8, "results.json"), "rb").read()
        assert a == b

    def test_pipeline_zero_significant_still_exits_zero(
        self, instance_files, tmp_path, capsys
    ):
        spath, tpath = instance_files
        out_dir = str(tmp_path / "nullrun")
        # m=9 puts the p-value floor at 0.1, above alpha, so nothing passes
        rc, out, _ = self.run(
            ["pipeline", "--source", spath, "--target", tpath, "--dmax", "2.0",
             "--max-len", "4", "--m", "9", "--out-dir", out_dir], capsys
        )
        assert rc == 0
        assert "significant=0" in out
        doc = json.loads(open(os.path.join(out_dir, "significant.geojson")).read())
        assert doc["features"] == []

    def test_pipeline_band_sweep_writes_nine_cells(self, instance_files, tmp_path, capsys):
        spath, tpath = instance_files
        out_dir = str(tmp_path / "sweep")
        rc, out, _ = self.run(
            ["pipeline", "--source", spath, "--target", tpath, "--dmax", "2.0",
             "--max-len", "3", "--m", "9", "--sweep-bands", "--out-dir", out_dir], capsys
        )
        assert rc == 0
        bands = ("moderate", "high", "anomalous")
        subdirs = sorted(os.listdir(out_dir))
        assert sorted(f"{a}_{b}" for a in bands for b in bands) == subdirs
        for sub in subdirs:
            assert os.path.exists(os.path.join(out_dir, sub, "results.json"))

    def test_pipeline_rejects_unknown_config_key(self, instance_files, tmp_path, capsys):
        spath, tpath = instance_files
        cpath = tmp_path / "config.json"
        cpath.write_text(json.dumps({"source": spath, "target": tpath, "dmaax": 2.0}))
        rc, _, err = self.run(["pipeline", "--config", str(cpath)], capsys)
        assert rc == 1
        assert "unknown config keys: dmaax" in err

    def test_synth_planted_instance(self, tmp_path, capsys):
        spec = {
            "dims": [12, 12],
            "chain_cells": [[2, 2], [2, 3], [2, 4]],
            "split_index": 1,
            "band": "moderate",
            "seed": 3,
        }
        spath = tmp_path / "spec.json"
        spath.write_text(json.dumps(spec))
        out_dir = str(tmp_path / "inst")
        rc, _, _ = self.run(["synth", "--spec", str(spath), "--out-dir", out_dir], capsys)
        assert rc == 0
        truth = json.loads(open(os.path.join(out_dir, "truth.json")).read())
        assert truth["cells"] == spec["chain_cells"]
        source = io.load_grid(os.path.join(out_dir, "source.raw"))
        assert source.shape == (12, 12)

    def test_synth_null_instance_has_no_truth_file(self, tmp_path, capsys):
        spath = tmp_path / "spec.json"
        spath.write_text(json.dumps({"dims": [8, 8], "seed": 1}))
        out_dir = str(tmp_path / "inst")
        rc, _, _ = self.run(["synth", "--spec", str(spath), "--out-dir", out_dir], capsys)
        assert rc == 0
        assert os.path.exists(os.path.join(out_dir, "source.raw"))
        assert not os.path.exists(os.path.join(out_dir, "truth.json"))

    def test_aar_end_to_end(self, tmp_path, capsys):
        reg = GridRegistration(lat0=0.0, lon0=0.0, dlat=1.0, dlon=1.0, cell_km=111.11)
        vals = np.full((50, 50), 0.1)
        mask = np.zeros((50, 50))
        for i in range(21):
            vals[i, 5], mask[i, 5] = 10.0, 1.0
        for r in range(3):
            for c in range(3):
                vals[44 + r, 30 + c], mask[44 + r, 30 + c] = 2.0, 1.0
        vpath, mpath = str(tmp_path / "v.raw"), str(tmp_path / "m.raw")
        io.save_grid(grid_of(vals, registration=reg), vpath)
        io.save_grid(grid_of(mask, registration=reg), mpath)
        opath = tmp_path / "origins.json"
        opath.write_text(json.dumps(
            {"origins": [{"cell": [12, 5]}, [14.1, 5.2], {"lat": 44.5, "lon": 30.5}]}
        ))
        rpath = str(tmp_path / "report.json")
        rc, out, _ = self.run(
            ["aar", "--values", vpath, "--mask", mpath, "--origins", str(opath),
             "--station", "20.2,5.3", "--seed", "1", "-o", rpath], capsys
        )
        assert rc == 0
        assert "30 points, 2 components (1 retained)" in out
        doc = json.loads(open(rpath).read())
        assert doc["n_points"] == 30
        assert doc["station"]["cell"] == [20, 5]
        assert doc["threshold"] == 2.0
        assert [44.5, 30.5] in doc["dropped_origins"]
        assert len(doc["results"]) == 2
        assert all(r["significant"] for r in doc["results"])

    def test_bad_station_string(self, tmp_path, capsys):
        vpath = str(tmp_path / "v.raw")
        io.save_grid(grid_of([[1.0, 1.0]]), vpath)
        opath = tmp_path / "origins.json"
        opath.write_text(json.dumps([[0.0, 0.0]]))
        rc, _, err = self.run(
            ["aar", "--values", vpath, "--mask", vpath, "--origins", str(opath),
             "--station", "nope", "-o", str(tmp_path / "r.json")], capsys
        )
        assert rc == 1
        assert "[io-cli]" in err

    def test_origins_without_key(self, tmp_path, capsys):
        vpath = str(tmp_path / "v.raw")
        io.save_grid(grid_of([[1.0, 1.0]]), vpath)
        opath = tmp_path / "origins.json"
        opath.write_text(json.dumps({"wrong": []}))
        rc, _, err = self.run(
            ["aar", "--values", vpath, "--mask", vpath, "--origins", str(opath),
             "--station", "0,0", "-o", str(tmp_path / "r.json")], capsys
        )
        assert rc == 1
        assert "no 'origins' key" in err


class TestThreadResolution:
    def test_flag_wins(self, monkeypatch):
        monkeypatch.setenv(cli.ENV_THREADS, "6")
        assert cli._resolve_threads(2, 4) == 2

    def test_config_beats_env(self, monkeypatch):
        monkeypatch.setenv(cli.ENV_THREADS, "6")
        assert cli._resolve_threads(None, 4) == 4

    def test_env_fallback(self, monkeypatch):
        monkeypatch.setenv(cli.ENV_THREADS, "6")
        assert cli._resolve_threads(None, None) == 6

    def test_default_one(self, monkeypatch):
        monkeypatch.delenv(cli.ENV_THREADS, raising=False)
        assert cli._resolve_threads(None, None) == 1

    def test_bad_env_value(self, monkeypatch):
        monkeypatch.setenv(cli.ENV_THREADS, "lots")
        from spatial_link.errors import ConfigError

        with pytest.raises(ConfigError):
            cli._resolve_threads(None, None)
