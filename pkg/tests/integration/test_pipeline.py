import numpy as np
import pandas as pd
import pytest
import ujson

from demandmix.api.operations import read_draws
from demandmix.api.tables import read_events
from demandmix.config import BinningConfig
from tests.integration.conftest import SPLIT_AT, cli, write_json


class TestPipeline:
    def test_simulate_splits_the_horizon(self, simulated):
        binning = BinningConfig(bin_width_hours=12.0)
        train = read_events(simulated["train"], binning)
        test = read_events(simulated["test"], binning)
        assert train.periods.max() <= SPLIT_AT
        assert test.periods.min() > SPLIT_AT
        truth = ujson.loads((simulated["root"] / "train.scenario.json").read_text())
        assert len(truth["pi"]) == 14

    def test_fit_writes_archive_and_parameters(self, fitted):
        archive = read_draws(fitted["archive"])
        assert len(archive) == 20
        assert archive.run["train"]["nEvents"] > 0
        assert archive.run["config"]["k"] == 2
        params = pd.read_csv(fitted["root"] / "params.csv")
        assert set(params["parameter"]) == {
            "beta_11",
            "beta_12",
            "beta_22",
            "c",
            "rho",
            "nu2",
        }
        assert params["config_hash"].nunique() == 1

    def test_score(self, fitted):
        out = fitted["root"] / "score.csv"
        assert (
            cli(
                "score",
                "--archive",
                fitted["archive"],
                "--test",
                fitted["test"],
                "--out",
                out,
            )
            == 0
        )
        scores = pd.read_csv(out)
        assert scores["method"].tolist() == ["mixture", "medic", "medic-kde"]
        kde = scores.set_index("method").loc["medic-kde"]
        assert kde["cv_folds"] == "leave-one-week-out"
        assert (kde["bandwidth_x"], kde["bandwidth_y"]) in [(0.5, 0.5), (1.0, 1.0)]
        assert np.all(np.isfinite(scores["pa"]))
        assert scores["config_hash"].nunique() == 1

    def test_predict(self, fitted):
        out = fitted["root"] / "grid.csv"
        assert (
            cli(
                "predict",
                "--archive",
                fitted["archive"],
                "--period",
                30,
                "--grid-out",
                out,
            )
            == 0
        )
        grid = pd.read_csv(out)
        assert (grid["density"] >= 0).all()
        # 0.5 km cells
        assert grid["density"].sum() * 0.25 == pytest.approx(1.0)

    def test_predict_beyond_the_fitted_horizon(self, fitted, capsys):
        out = fitted["root"] / "late.csv"
        assert (
            cli(
                "predict",
                "--archive",
                fitted["archive"],
                "--period",
                43,
                "--grid-out",
                out,
            )
            == 1
        )
        assert "outside the fitted horizon 1..42" in capsys.readouterr().err
        assert not out.exists()

    def test_coverage(self, fitted):
        out = fitted["root"] / "coverage.csv"
        assert (
            cli(
                "coverage",
                "--archive",
                fitted["archive"],
                "--test",
                fitted["test"],
                "--bases",
                fitted["bases"],
                "--out",
                out,
            )
            == 0
        )
        curves = pd.read_csv(out)
        assert len(curves) == 3 * 3
        assert curves["error"].between(0, 1).all()
        assert (curves["low"] <= curves["high"]).all()

    def test_validate(self, fitted):
        out = fitted["root"] / "qq.csv"
        assert (
            cli(
                "validate",
                "--archive",
                fitted["archive"],
                "--test",
                fitted["test"],
                "--qq-out",
                out,
            )
            == 0
        )
        qq = pd.read_csv(out)
        assert qq["theoretical"].is_monotonic_increasing
        assert qq["empirical"].between(0, 1).all()

    def test_baseline_command(self, fitted):
        out = fitted["root"] / "medic.csv"
        assert (
            cli(
                "baseline",
                "--method",
                "medic",
                "--config",
                fitted["config"],
                "--train",
                fitted["train"],
                "--test",
                fitted["test"],
                "--out",
                out,
            )
            == 0
        )
        assert pd.read_csv(out)["method"].tolist() == ["medic"]

    def test_fit_is_reproducible(self, fitted):
        again = fitted["root"] / "again.dmx"
        assert (
            cli(
                "fit",
                "--config",
                fitted["config"],
                "--events",
                fitted["train"],
                "--out",
                again,
            )
            == 0
        )
        assert again.read_bytes() == fitted["archive"].read_bytes()

        first, second = fitted["root"] / "s1.csv", fitted["root"] / "s2.csv"
        for archive, out in ((fitted["archive"], first), (again, second)):
            cli("score", "--archive", archive, "--test", fitted["test"], "--out", out)
        assert first.read_bytes() == second.read_bytes()

    def test_variable_k_with_two_chains(self, fitted):
        config = ujson.loads(fitted["config"].read_text())
        config.update(variableK=True, birthDeath={"tau": 2.0, "kMax": 6})
        path = write_json(fitted["root"] / "bd.json", config)
        out = fitted["root"] / "bd.dmx"
        assert (
            cli(
                "fit",
                "--config",
                path,
                "--events",
                fitted["train"],
                "--out",
                out,
                "--chains",
                2,
            )
            == 0
        )
        archive = read_draws(out)
        assert archive.chain_lengths == [20, 20]
        assert all(1 <= d.K <= 6 for d in archive.draws)
        assert "birth" in archive.acceptance
        assert len(archive.run["chainSeeds"]) == 2
