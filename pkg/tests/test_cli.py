"""Tests for the command-line interface."""

import json
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
import pandas as pd
import pytest
from pytest_mock import MockerFixture

from fgamtest import __version__
from fgamtest.cli import REPORT_SCHEMA, build_parser, main
from fgamtest.config import Settings
from fgamtest.sim import TABLE_COLUMNS, RejectionTable

SMALL_BASIS = ["--kx", "5", "--kt", "5"]


def run(args: List[str], out: Path) -> Dict[str, Any]:
    """Run the CLI with a report path and return the parsed report."""
    assert main([*args, "--out", str(out)]) == 0
    return json.loads(out.read_text())


@pytest.fixture
def data_dir(tmp_path: Path) -> Path:
    """Directory with a generated convex dataset of 40 curves."""
    target = tmp_path / "data"
    code = main(
        [
            "generate",
            "--n",
            "40",
            "--j",
            "12",
            "--phi",
            "0.5",
            "--seed",
            "5",
            "--out-dir",
            str(target),
            "--out",
            str(tmp_path / "generate.json"),
        ]
    )
    assert code == 0
    return target


class TestGenerate:
    """Test the generate command."""

    def test_files_and_report(self, data_dir: Path, tmp_path: Path) -> None:
        """Test the CSV files exist and the report follows the envelope."""
        assert {p.name for p in data_dir.iterdir()} == {"X.csv", "t.csv", "y.csv"}
        report = json.loads((tmp_path / "generate.json").read_text())
        assert report["schema"] == REPORT_SCHEMA
        assert report["tool_version"] == __version__
        assert report["command"] == "generate"
        assert report["config"]["seed"] == 5
        assert set(report["results"]["files"]) == {"X", "t", "y"}

    def test_reproducible(self, tmp_path: Path) -> None:
        """Test the same seed writes identical files."""
        for name in ("a", "b"):
            run(
                ["generate", "--n", "10", "--j", "8", "--seed", "3"]
                + ["--out-dir", str(tmp_path / name)],
                tmp_path / f"{name}.json",
            )
        for filename in ("X.csv", "t.csv", "y.csv"):
            first = (tmp_path / "a" / filename).read_text()
            assert first == (tmp_path / "b" / filename).read_text()

    def test_score_scale(self, tmp_path: Path) -> None:
        """Test the variance reading of the scores gives narrower curves."""
        spreads = {}
        for scale in ("sd", "variance"):
            report = run(
                ["generate", "--n", "200", "--j", "8", "--seed", "3"]
                + ["--score-scale", scale, "--out-dir", str(tmp_path / scale)],
                tmp_path / f"{scale}.json",
            )
            assert report["results"]["score_scale"] == scale
            x = pd.read_csv(tmp_path / scale / "X.csv", header=None).to_numpy()
            spreads[scale] = float(np.std(x))
        assert spreads["variance"] < spreads["sd"]

    def test_mixed(self, tmp_path: Path) -> None:
        """Test the mixed scenario reports the true b1."""
        report = run(
            ["generate", "--scenario", "mixed", "--n", "30", "--j", "10"]
            + ["--sigma2", "0.1", "0.2", *SMALL_BASIS]
            + ["--out-dir", str(tmp_path / "mixed")],
            tmp_path / "mixed.json",
        )
        assert report["results"]["sigma2"] == [0.1, 0.2]
        assert len(report["results"]["b1"]) == 3


class TestFit:
    """Test the fit command and fit verification."""

    def test_fit_and_verify(self, data_dir: Path, tmp_path: Path) -> None:
        """Test a stored fit reproduces its fitted values."""
        report = run(
            ["fit", "--data-dir", str(data_dir), *SMALL_BASIS]
            + ["--surface", str(tmp_path / "surface.csv")],
            tmp_path / "fit.json",
        )
        assert report["results"]["summary"]["model"] == "fgamm"
        assert len(report["results"]["fit"]["fitted_values"]) == 40
        assert not pd.read_csv(tmp_path / "surface.csv").empty
        verified = run(
            ["fit", "--data-dir", str(data_dir), *SMALL_BASIS]
            + ["--verify", str(tmp_path / "fit.json")],
            tmp_path / "verify.json",
        )
        assert verified["results"]["verified"] is True
        assert verified["results"]["max_abs_diff"] <= 1e-10

    @pytest.mark.parametrize("model", ["flm", "fgam-gcv", "fgam-reml"])
    def test_other_models(self, data_dir: Path, tmp_path: Path, model: str) -> None:
        """Test every model kind can be fitted."""
        report = run(
            ["fit", "--data-dir", str(data_dir), "--model", model, *SMALL_BASIS],
            tmp_path / "fit.json",
        )
        assert report["results"]["summary"]["model"] == model

    def test_iteration_cap(self, data_dir: Path, tmp_path: Path) -> None:
        """Test a capped variance search still reports a fit with a warning."""
        report = run(
            ["fit", "--data-dir", str(data_dir), "--max-iter", "1", *SMALL_BASIS],
            tmp_path / "fit.json",
        )
        warnings = report["results"]["fit"]["warnings"]
        assert any("unconverged REML fit" in w for w in warnings)

    def test_missing_data(self, tmp_path: Path) -> None:
        """Test a missing data file exits with the data error code."""
        code = main(["fit", "--x", str(tmp_path / "X.csv"), "--t", "t.csv"])
        assert code == 3

    def test_no_data_arguments(self) -> None:
        """Test omitting the data is a usage error."""
        assert main(["fit"]) == 2

    def test_bad_report(self, data_dir: Path, tmp_path: Path) -> None:
        """Test verifying against a file that holds no fit."""
        bogus = tmp_path / "bogus.json"
        bogus.write_text("{}")
        code = main(["fit", "--data-dir", str(data_dir), "--verify", str(bogus)])
        assert code == 2


class TestTestCommand:
    """Test the test command."""

    def test_equalvc(self, data_dir: Path, tmp_path: Path) -> None:
        """Test the report carries the test result."""
        report = run(
            ["test", "--data-dir", str(data_dir), "--nsim", "100", *SMALL_BASIS],
            tmp_path / "test.json",
        )
        results = report["results"]
        assert results["method"] == "equalvc"
        assert 0.0 < results["p_value"] <= 1.0
        assert report["config"]["nsim"] == 100

    def test_stdout(
        self, data_dir: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        """Test the report goes to stdout without --out."""
        code = main(
            ["test", "--data-dir", str(data_dir), "--method", "linear-in-t"]
            + ["--nsim", "50", *SMALL_BASIS]
        )
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["results"]["components"] == ["sigma2_1"]

    def test_invalid_alpha(self, data_dir: Path) -> None:
        """Test an invalid level exits with the usage code."""
        code = main(["test", "--data-dir", str(data_dir), "--alpha", "1.5"])
        assert code == 2

    def test_nonpositive_threads(self, data_dir: Path) -> None:
        """Test --threads 0 is rejected by the parser."""
        with pytest.raises(SystemExit) as exc_info:
            main(["test", "--data-dir", str(data_dir), "--threads", "0"])
        assert exc_info.value.code == 2


class TestOtherCommands:
    """Test nulldist, compare and simulate."""

    def test_nulldist(self, tmp_path: Path) -> None:
        """Test a null sample from generated curves."""
        report = run(
            ["nulldist", "--generate", "30", "--nsim", "200", *SMALL_BASIS]
            + ["--component", "z2", "--sample", str(tmp_path / "null.csv")],
            tmp_path / "null.json",
        )
        summary = report["results"]["summary"]
        assert summary["nsim"] == 200
        assert 0.0 <= summary["zero_mass"] <= 1.0
        assert len(pd.read_csv(tmp_path / "null.csv")) == 200

    def test_compare(self, data_dir: Path, tmp_path: Path) -> None:
        """Test the comparison reports both models."""
        report = run(
            ["compare", "--data-dir", str(data_dir), "--splits", "3", *SMALL_BASIS],
            tmp_path / "compare.json",
        )
        results = report["results"]
        assert set(results["mean_rmse"]) == {"flm", "fgamm"}
        assert set(results["beats_flm"]) == {"fgamm"}
        assert len(results["splits"]) == 3 * 2

    def test_simulate_overrides(self, tmp_path: Path, mocker: MockerFixture) -> None:
        """Test command-line values override the study config."""
        table = RejectionTable(
            frame=pd.DataFrame(columns=TABLE_COLUMNS), attempted=1
        )
        study = mocker.patch("fgamtest.cli.run_rejection_study", return_value=table)
        report = run(
            ["simulate", "--config", "smoke", "--reps", "1", "--seed", "99"],
            tmp_path / "sim.json",
        )
        config = study.call_args.args[0]
        assert (config.reps, config.seed, config.threads) == (1, 99, 1)
        assert report["results"]["study"]["n_curves"] == 60
        assert report["results"]["flagged"] is False

    def test_simulate_smoke(self, tmp_path: Path) -> None:
        """Test one replicate of the shipped smoke study."""
        report = run(
            ["simulate", "--config", "smoke", "--reps", "1"]
            + ["--table", str(tmp_path / "table.csv")],
            tmp_path / "sim.json",
        )
        assert len(report["results"]["table"]) == 2
        assert list(pd.read_csv(tmp_path / "table.csv").columns) == TABLE_COLUMNS

    def test_bad_config(self, tmp_path: Path) -> None:
        """Test an invalid study config exits with the usage code."""
        path = tmp_path / "study.toml"
        path.write_text('scenario = "convex"\nn_curves = 3\n')
        assert main(["simulate", "--config", str(path)]) == 2


class TestSettings:
    """Test defaults taken from the environment."""

    def test_env_defaults(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """Test FGAM_* variables set the parser defaults."""
        monkeypatch.setenv("FGAM_KX", "7")
        monkeypatch.setenv("FGAM_NSIM", "123")
        args = build_parser(Settings.from_env()).parse_args(["test", "--x", "X"])
        assert (args.kx, args.nsim) == (7, 123)

    def test_env_file(self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        """Test --env-file feeds the defaults recorded in the report."""
        pytest.importorskip("dotenv")
        # registers the variable for removal at teardown
        monkeypatch.setenv("FGAM_KT", "0")
        monkeypatch.delenv("FGAM_KT")
        env_file = tmp_path / ".env"
        env_file.write_text("FGAM_KT=7\n")
        report = run(
            ["--env-file", str(env_file), "generate", "--n", "10", "--j", "8"]
            + ["--out-dir", str(tmp_path / "data")],
            tmp_path / "gen.json",
        )
        assert report["config"]["kt"] == 7
