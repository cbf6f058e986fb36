import json
import math
from pathlib import Path

import numpy as np
import pytest

from calimp import io as cio
from calimp.cli import main
from calimp.errors import DataFormatError
from calimp.pipeline import DataMatrix


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestDatasetIO:
    def test_missing_markers_and_mask(self, tmp_path):
        path = write(tmp_path, "d.csv", "a,b,c\n1,NA,3\n4,5,\n")
        data = cio.read_dataset(path)
        assert data.columns == ("a", "b", "c")
        assert data.mask.sum() == 2
        assert data.mask[0, 1] and data.mask[1, 2]
        assert data.values[1, 1] == 5.0

    def test_weight_column_loaded_and_excluded(self, tmp_path):
        path = write(tmp_path, "d.csv", "a,__weight,b\n1,2.5,3\n4,1.5,6\n")
        data = cio.read_dataset(path)
        assert data.columns == ("a", "b")
        assert np.allclose(data.weights, [2.5, 1.5])

    def test_no_records_is_an_error(self, tmp_path):
        path = write(tmp_path, "d.csv", "a,b\n")
        with pytest.raises(DataFormatError, match="no records"):
            cio.read_dataset(path)

    def test_duplicate_header_rejected(self, tmp_path):
        path = write(tmp_path, "d.csv", "a,a\n1,2\n")
        with pytest.raises(DataFormatError, match="duplicate"):
            cio.read_dataset(path)

    def test_bad_field_reports_line(self, tmp_path):
        path = write(tmp_path, "d.csv", "a\n1\nfoo\n")
        with pytest.raises(DataFormatError) as info:
            cio.read_dataset(path)
        assert info.value.line == 3

    def test_nonpositive_weight_rejected(self, tmp_path):
        path = write(tmp_path, "d.csv", "a,__weight\n1,0\n")
        with pytest.raises(DataFormatError, match="positive"):
            cio.read_dataset(path)

    def test_write_read_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.normal(size=(20, 3)) * rng.lognormal(size=(20, 3))
        values[3, 1] = math.pi * 1e17
        data = DataMatrix(values, np.zeros_like(values, dtype=bool), ("a", "b", "c"),
                          weights=rng.uniform(0.5, 2.0, size=20))
        path = tmp_path / "out.csv"
        cio.write_dataset(data, path)
        back = cio.read_dataset(path)
        assert back.values.tobytes() == data.values.tobytes()
        assert back.weights.tobytes() == data.weights.tobytes()

    def test_masked_write_reblanks_cells(self, tmp_path):
        values = np.array([[1.0, 2.0], [3.0, 4.0]])
        mask = np.array([[False, True], [False, False]])
        data = DataMatrix(values, mask, ("a", "b"))
        path = tmp_path / "m.csv"
        cio.write_dataset(data, path, missing_from_mask=True)
        assert "NA" in path.read_text()


class TestTotalsConfigMask:
    def test_totals_round_trip(self, tmp_path):
        path = tmp_path / "t.txt"
        cio.write_totals({"a": 1.5, "b": 2.0}, path)
        assert cio.read_totals(path) == {"a": 1.5, "b": 2.0}

    def test_totals_parse_errors(self, tmp_path):
        path = write(tmp_path, "t.txt", "a = 1\nnot a line\n")
        with pytest.raises(DataFormatError) as info:
            cio.read_totals(path)
        assert info.value.line == 2

    def test_config_parsing(self, tmp_path):
        path = write(tmp_path, "c.cfg", "# comment\nseed = 5\nmethods = bpma, bpmr\n")
        assert cio.read_config(path) == {"seed": "5", "methods": "bpma, bpmr"}

    def test_mask_round_trip(self, tmp_path):
        mask = np.array([[True, False], [False, True]])
        path = tmp_path / "mask.csv"
        cio.write_mask(mask, ("a", "b"), path)
        assert np.array_equal(cio.read_mask(path, ("a", "b")), mask)


EDITS = "x1 + x2 = x3\nx1 >= x2\nx3 >= 3*x2\nx1 >= 0\nx2 >= 0\nx3 >= 0\n"


def small_files(tmp_path, rng):
    x2 = rng.uniform(0, 40, size=60)
    x1 = 2 * x2 + rng.uniform(0, 60, size=60)
    truth = np.column_stack([x1, x2, x1 + x2])
    mask = np.zeros_like(truth, dtype=bool)
    rows = rng.choice(60, size=12, replace=False)
    mask[rows, 0] = True
    mask[rows[:6], 1] = True
    masked = truth.copy()
    masked[mask] = np.nan
    data = DataMatrix(masked, mask, ("x1", "x2", "x3"))
    truth_data = DataMatrix(truth, np.zeros_like(mask), ("x1", "x2", "x3"))
    cio.write_dataset(data, tmp_path / "data.csv", missing_from_mask=True)
    cio.write_dataset(truth_data, tmp_path / "truth.csv")
    cio.write_mask(mask, data.columns, tmp_path / "mask.csv")
    cio.write_totals({"x1": float(truth[:, 0].sum()), "x2": float(truth[:, 1].sum())},
                     tmp_path / "totals.txt")
    (tmp_path / "rules.edits").write_text(EDITS)


class TestCli:
    def test_impute_bpma_without_totals_is_usage_error(self, tmp_path, capsys):
        small_files(tmp_path, np.random.default_rng(0))
        code = main([
            "impute", "--data", str(tmp_path / "data.csv"),
            "--edits", str(tmp_path / "rules.edits"),
            "--method", "bpma", "--out", str(tmp_path / "out.csv"),
        ])
        assert code == 1
        assert "usage error" in capsys.readouterr().err

    def test_impute_on_complete_data_is_identity(self, tmp_path):
        small_files(tmp_path, np.random.default_rng(1))
        code = main([
            "impute", "--data", str(tmp_path / "truth.csv"),
            "--edits", str(tmp_path / "rules.edits"),
            "--method", "upma", "--out", str(tmp_path / "out.csv"),
        ])
        assert code == 0
        assert cio.read_dataset(tmp_path / "out.csv").values.tobytes() == \
            cio.read_dataset(tmp_path / "truth.csv").values.tobytes()

    def test_impute_evaluate_round_trip(self, tmp_path):
        small_files(tmp_path, np.random.default_rng(2))
        code = main([
            "impute", "--data", str(tmp_path / "data.csv"),
            "--edits", str(tmp_path / "rules.edits"),
            "--totals", str(tmp_path / "totals.txt"),
            "--method", "bpmr", "--seed", "3",
            "--out", str(tmp_path / "imp.csv"),
        ])
        assert code == 0
        assert (tmp_path / "imp.csv.diag.jsonl").exists()
        for line in (tmp_path / "imp.csv.diag.jsonl").read_text().splitlines():
            json.loads(line)
        code = main([
            "evaluate", "--truth", str(tmp_path / "truth.csv"),
            "--imputed", str(tmp_path / "imp.csv"),
            "--mask", str(tmp_path / "mask.csv"),
            "--out", str(tmp_path / "report.csv"),
        ])
        assert code == 0
        report = (tmp_path / "report.csv").read_text()
        assert "x1,d_l1," in report
        assert "correlation" in report

    def test_impute_mcmc_chains_bpma_on_missing_input(self, tmp_path, capsys):
        small_files(tmp_path, np.random.default_rng(3))
        code = main([
            "impute", "--data", str(tmp_path / "data.csv"),
            "--edits", str(tmp_path / "rules.edits"),
            "--totals", str(tmp_path / "totals.txt"),
            "--method", "mcmc", "--seed", "5", "--iterations", "100",
            "--out", str(tmp_path / "mc.csv"),
        ])
        assert code == 0
        assert "pre-imputation" in capsys.readouterr().err
        out = cio.read_dataset(tmp_path / "mc.csv")
        totals = cio.read_totals(tmp_path / "totals.txt")
        assert float(out.values[:, 0].sum()) == pytest.approx(totals["x1"], rel=1e-8)

    def test_data_error_exit_code(self, tmp_path):
        small_files(tmp_path, np.random.default_rng(4))
        bad = tmp_path / "bad.csv"
        bad.write_text("x1,x2\n1,zzz\n")
        code = main([
            "impute", "--data", str(bad),
            "--edits", str(tmp_path / "rules.edits"),
            "--method", "upma", "--out", str(tmp_path / "o.csv"),
        ])
        assert code == 2

    def test_infeasible_exit_code(self, tmp_path):
        # Observed record violating the edits: detected up front.
        (tmp_path / "rules.edits").write_text(EDITS)
        bad = tmp_path / "bad.csv"
        bad.write_text("x1,x2,x3\n1,5,6\n2,NA,6\n12,2,14\n9,1,10\n")
        code = main([
            "impute", "--data", str(bad),
            "--edits", str(tmp_path / "rules.edits"),
            "--method", "upma", "--out", str(tmp_path / "o.csv"),
        ])
        assert code == 3

    def test_simulate_writes_all_artifacts(self, tmp_path):
        cfg = write(
            tmp_path, "study.cfg",
            "population_size = 400\nsample_size = 80\nreplications = 1\nseed = 9\n",
        )
        out = tmp_path / "study"
        code = main(["simulate", "--config", cfg, "--out", str(out)])
        assert code == 0
        for name in ("population.csv", "sample.csv", "masked.csv", "mask.csv", "totals.txt"):
            assert (out / name).exists()
        sample = cio.read_dataset(out / "sample.csv")
        assert sample.n_records == 80

    def test_seeded_cli_runs_are_byte_identical(self, tmp_path):
        small_files(tmp_path, np.random.default_rng(6))
        outputs = []
        for tag in ("a", "b"):
            code = main([
                "impute", "--data", str(tmp_path / "data.csv"),
                "--edits", str(tmp_path / "rules.edits"),
                "--totals", str(tmp_path / "totals.txt"),
                "--method", "bpmr", "--seed", "11",
                "--out", str(tmp_path / f"{tag}.csv"),
            ])
            assert code == 0
            outputs.append((tmp_path / f"{tag}.csv").read_bytes())
        assert outputs[0] == outputs[1]

    def test_usage_error_on_unknown_method(self, tmp_path, capsys):
        code = main(["impute", "--data", "x", "--edits", "y", "--method", "zzz", "--out", "z"])
        assert code == 1

    def test_log_scale_with_stochastic_method_is_usage_error(self, tmp_path):
        small_files(tmp_path, np.random.default_rng(7))
        code = main([
            "impute", "--data", str(tmp_path / "data.csv"),
            "--edits", str(tmp_path / "rules.edits"),
            "--totals", str(tmp_path / "totals.txt"),
            "--method", "bpmr", "--log-scale",
            "--out", str(tmp_path / "o.csv"),
        ])
        assert code == 1

    def test_stray_totals_column_is_data_error(self, tmp_path):
        small_files(tmp_path, np.random.default_rng(8))
        (tmp_path / "totals.txt").write_text("x1 = 100\nnot_a_column = 5\n")
        code = main([
            "impute", "--data", str(tmp_path / "data.csv"),
            "--edits", str(tmp_path / "rules.edits"),
            "--totals", str(tmp_path / "totals.txt"),
            "--method", "bpma", "--out", str(tmp_path / "o.csv"),
        ])
        assert code == 2
