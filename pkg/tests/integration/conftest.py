from pathlib import Path
from typing import Dict

import pytest
import ujson

from demandmix.cli.runner import main

SEASON = {"T": 42, "B": 14, "d": 2}
SPLIT_AT = 28


def write_json(path: Path, data) -> Path:
    path.write_text(ujson.dumps(data, indent=2))
    return path


def cli(*args) -> int:
    return main([str(a) for a in args])


@pytest.fixture(scope="session")
def workspace(tmp_path_factory) -> Dict[str, Path]:
    """Scenario, region, bases and config files for a three-week toy city."""
    root = tmp_path_factory.mktemp("city")
    square = [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]
    (root / "region.csv").write_text(
        "x_km,y_km\n" + "\n".join(f"{x},{y}" for x, y in square) + "\n"
    )
    (root / "bases.csv").write_text("x_km,y_km\n3,3\n7,6\n")
    scenario = {
        "season": SEASON,
        "components": [
            {"mu": [3.0, 3.0], "sigma": [[1.0, 0.3], [0.3, 0.8]]},
            {"mu": [7.0, 6.5], "sigma": [[0.6, -0.1], [-0.1, 1.2]]},
        ],
        "c": [0.0],
        "rho": [0.2],
        "nu2": [0.5],
        "delta": 10.0,
        "region": square,
        "truncate": True,
        "seed": 17,
    }
    config = {
        "k": 2,
        "season": SEASON,
        "binning": {"binWidthHours": 12.0},
        "region": "region.csv",
        "gridResolution": 0.5,
        "kdeCandidates": [[0.5, 0.5], [1.0, 1.0]],
        "mcmc": {"nIter": 40, "burnIn": 20, "seed": 5, "logEvery": 0},
        "evaluation": {"thresholds": [60.0, 120.0, 300.0]},
    }
    return {
        "root": root,
        "scenario": write_json(root / "scenario.json", scenario),
        "config": write_json(root / "config.json", config),
        "bases": root / "bases.csv",
        "train": root / "train.csv",
        "test": root / "test.csv",
    }


@pytest.fixture(scope="session")
def simulated(workspace) -> Dict[str, Path]:
    code = cli(
        "simulate",
        "--scenario", workspace["scenario"],
        "--out", workspace["train"],
        "--split-at", SPLIT_AT,
        "--test-out", workspace["test"],
    )
    assert code == 0
    return workspace


@pytest.fixture(scope="session")
def fitted(simulated) -> Dict[str, Path]:
    archive = simulated["root"] / "draws.dmx"
    code = cli(
        "fit",
        "--config", simulated["config"],
        "--events", simulated["train"],
        "--out", archive,
        "--params-out", simulated["root"] / "params.csv",
    )
    assert code == 0
    return dict(simulated, archive=archive)
