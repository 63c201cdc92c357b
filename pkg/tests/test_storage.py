import json

import numpy as np
import pandas as pd
import pytest

from app.errors import ArgumentError
from app.graph import Hypergraph, from_ising, lattice2d
from app.mple import MpleFit
from app.mrf import Dataset
from app.storage import (
    TABLE_COLUMNS,
    graph_from_dict,
    load_dataset,
    load_fit,
    load_graph,
    read_table,
    save_dataset,
    save_fit,
    save_graph,
    save_report,
    write_table,
)


class TestGraphFile:
    def test_lattice_roundtrip(self, tmp_path):
        h = from_ising(lattice2d(4, 5), 0.2, 0.25)
        path = tmp_path / "g.json"
        save_graph(h, path)
        loaded = load_graph(path)
        assert loaded.n == 20
        assert loaded.edges == h.edges
        np.testing.assert_array_equal(loaded.weights, h.weights)

    def test_hyperedges_and_format(self, tmp_path):
        h = Hypergraph(5, [(0, 1), (4, 2, 3)], [0.1, 0.05])
        path = tmp_path / "g.json"
        save_graph(h, path)
        raw = json.loads(path.read_text(encoding="utf-8"))
        assert raw == {"n": 5, "edges": [{"v": [0, 1], "g": 0.1}, {"v": [2, 3, 4], "g": 0.05}]}

    def test_default_weight(self):
        h = graph_from_dict({"n": 3, "edges": [{"v": [0, 2]}]})
        assert h.weights.tolist() == [1.0]

    @pytest.mark.parametrize("raw", [
        {"edges": []},
        {"n": 3, "edges": [{"v": [0], "g": 1.0}]},
        {"n": 3, "edges": [{"v": [0, 1], "g": -1.0}]},
        {"n": 3, "edges": [{"v": [0, 5], "g": 1.0}]},
        {"n": 3, "edges": [{"v": [0, 1]}, {"v": [1, 0]}]},
    ])
    def test_invalid_documents(self, raw):
        with pytest.raises(ArgumentError):
            graph_from_dict(raw)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{\"n\": 3,", encoding="utf-8")
        with pytest.raises(ArgumentError):
            load_graph(path)

    def test_not_utf8(self, tmp_path):
        path = tmp_path / "latin1.json"
        path.write_bytes('{"n": 3, "note": "café"}'.encode("latin-1"))
        with pytest.raises(ArgumentError, match="UTF-8"):
            load_graph(path)


class TestDatasetFile:
    def test_roundtrip_is_exact(self, tmp_path, rng, signs):
        data = Dataset(rng.normal(size=(30, 4)), signs(30, rng))
        path = tmp_path / "data.csv"
        save_dataset(data, path)
        loaded = load_dataset(path)
        np.testing.assert_array_equal(loaded.x, data.x)
        np.testing.assert_array_equal(loaded.y, data.y)

    def test_header(self, tmp_path, rng, signs):
        path = tmp_path / "data.csv"
        save_dataset(Dataset(rng.normal(size=(3, 2)), signs(3, rng)), path)
        assert path.read_text(encoding="utf-8").splitlines()[0] == "y,x1,x2"

    def test_columns_taken_in_index_order(self, tmp_path):
        path = tmp_path / "data.csv"
        pd.DataFrame({"x2": [5.0, 6.0], "y": [1, -1], "x1": [1.0, 2.0]}).to_csv(path, index=False)
        loaded = load_dataset(path)
        np.testing.assert_array_equal(loaded.x, [[1.0, 5.0], [2.0, 6.0]])

    def test_missing_response(self, tmp_path):
        path = tmp_path / "data.csv"
        pd.DataFrame({"x1": [1.0]}).to_csv(path, index=False)
        with pytest.raises(ArgumentError):
            load_dataset(path)

    def test_not_utf8(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_bytes("y,x1\n1,0.5\n-1,\xe9\n".encode("latin-1"))
        with pytest.raises(ArgumentError, match="UTF-8"):
            load_dataset(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("", encoding="utf-8")
        with pytest.raises(ArgumentError):
            load_dataset(path)

    def test_unexpected_column(self, tmp_path):
        path = tmp_path / "data.csv"
        pd.DataFrame({"y": [1], "x1": [1.0], "z": [0.0]}).to_csv(path, index=False)
        with pytest.raises(ArgumentError):
            load_dataset(path)


class TestFitAndReports:
    def test_fit_roundtrip(self, tmp_path):
        fit = MpleFit(theta_tilde=np.array([0.5, 0.0, -0.25]), lambda_=0.03, iterations=41,
                      objective=0.61, kkt_residual=3e-8, converged=True, n_s1=3)
        path = tmp_path / "fit.json"
        save_fit(fit, np.array([0, 4, 8]), path)

        raw = json.loads(path.read_text(encoding="utf-8"))
        assert set(raw) == {"theta_tilde", "lambda", "kkt_residual", "iterations", "objective", "converged", "s1"}

        loaded, s1 = load_fit(path)
        np.testing.assert_array_equal(loaded.theta_tilde, fit.theta_tilde)
        assert loaded.lambda_ == fit.lambda_
        assert loaded.converged
        assert s1.tolist() == [0, 4, 8]

    def test_fit_missing_field(self, tmp_path):
        path = tmp_path / "fit.json"
        path.write_text(json.dumps({"theta_tilde": [0.0]}), encoding="utf-8")
        with pytest.raises(ArgumentError):
            load_fit(path)

    def test_report_with_numpy_values(self, tmp_path):
        path = tmp_path / "report.json"
        save_report({"estimate": np.float64(0.9), "ci": np.array([0.7, 1.1]), "inflations": np.int64(0)}, path)
        assert json.loads(path.read_text(encoding="utf-8")) == {"estimate": 0.9, "ci": [0.7, 1.1], "inflations": 0}


class TestTableFile:
    ROWS = [
        {"table": 1, "row_param": 0.2, "method": "baseline", "coverage": 0.24, "median_len": 0.45,
         "max_len": 0.6, "reps": 100, "failures": 0, "seed": 7},
        {"table": 1, "row_param": 0.2, "method": "proposed", "coverage": 0.98, "median_len": 0.47,
         "max_len": 0.59, "reps": 100, "failures": 1, "seed": 7},
    ]

    def test_schema(self, tmp_path):
        path = tmp_path / "t1.csv"
        write_table(self.ROWS, path)
        assert path.read_text(encoding="utf-8").splitlines()[0] == ",".join(TABLE_COLUMNS)
        frame = read_table(path)
        assert frame["coverage"].tolist() == [0.24, 0.98]

    def test_deterministic_bytes(self, tmp_path):
        write_table(self.ROWS, tmp_path / "a.csv")
        write_table(self.ROWS, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "t.csv"
        pd.DataFrame({"table": [1]}).to_csv(path, index=False)
        with pytest.raises(ArgumentError):
            read_table(path)
