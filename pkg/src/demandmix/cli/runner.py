"""Command line entry point.

Subcommands read a run configuration (directly or from a draw archive),
run one step of the pipeline and write CSV or archive artifacts.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import ujson

from demandmix.api.operations import (
    archive_from_runs,
    draws_frame,
    load_scenario,
    read_draws,
    write_draws,
    write_scenario,
)
from demandmix.api.tables import (
    read_bases,
    read_events,
    read_region,
    write_events,
    write_table,
)
from demandmix.baselines import (
    GRID_DENSITY_FLOOR,
    HistoryRule,
    MedicForecaster,
    MedicKdeForecaster,
    cv_bandwidth,
)
from demandmix.config import RunConfig, Settings, config_hash, load_config, parse_config
from demandmix.evaluation.coverage import operational_error
from demandmix.evaluation.diagnostics import summarize_chains
from demandmix.evaluation.scoring import (
    DensityEvaluator,
    PosteriorMeanDensity,
    batch_means_ci,
    event_log_scores,
    normal_ci,
    pa_per_draw,
    predictive_accuracy,
    predictive_density_grid,
)
from demandmix.logging.exceptions import (
    ConfigException,
    DemandMixException,
    DiagnosticException,
    InvalidInputException,
)
from demandmix.objects.events import EventTable
from demandmix.objects.geometry import GridSpec, StudyRegion
from demandmix.priors import hyperparams_from_data
from demandmix.sampling.fixed_k import PosteriorDraw
from demandmix.sampling.parallel import run_chains
from demandmix.serialization.draw_serializer import DrawArchive
from demandmix.synthesis import build_scenario, simulate
from demandmix.validation import qq_summary, uniform_residuals, uniformity_test

LOG = logging.getLogger(__name__)

BASELINES = ("medic", "medic-kde")
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _configure_logging(verbose: bool, level: str) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else level.upper(),
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )


def _region_for(cfg: RunConfig, config_path: Path) -> StudyRegion:
    path = cfg.region_path(config_path.parent)
    if path is None:
        raise ConfigException("The run configuration names no region file.")
    return read_region(path, cfg.grid_resolution)


def _archive_context(archive: DrawArchive) -> Tuple[RunConfig, StudyRegion]:
    try:
        cfg = parse_config(ujson.dumps(archive.run["config"]))
        region = StudyRegion(
            polygon=archive.run["region"]["polygon"],
            grid_resolution=archive.run["region"]["gridResolution"],
        )
    except KeyError as ex:
        raise InvalidInputException(
            f"Draw archive metadata lacks {ex}; was it written by `fit`?", ex
        ) from ex
    if config_hash(cfg) != archive.config_hash:
        raise ConfigException("Draw archive config hash does not match its config.")
    return cfg, region


def _thinned(draws: Sequence[PosteriorDraw], max_draws: int) -> List[PosteriorDraw]:
    if max_draws <= 0 or len(draws) <= max_draws:
        return list(draws)
    index = np.unique(np.linspace(0, len(draws) - 1, max_draws).round().astype(int))
    return [draws[i] for i in index]


def _training_events(
    args: argparse.Namespace, archive: DrawArchive, cfg: RunConfig
) -> Optional[EventTable]:
    path = getattr(args, "train", None) or archive.run.get("train", {}).get("path")
    if not path or not Path(path).is_file():
        LOG.warning("Training events unavailable; baselines are skipped")
        return None
    return read_events(path, cfg.binning, horizon=cfg.season.T)


def _baseline(
    method: str, train: EventTable, cfg: RunConfig, region: StudyRegion
) -> DensityEvaluator:
    rule = HistoryRule.preset(cfg.history_rule, cfg.season)
    if method == "medic":
        grid = GridSpec.covering(region, cfg.medic_cell_size)
        return MedicForecaster(train, grid, rule, region)
    bandwidths, _ = cv_bandwidth(train, cfg.kde_candidates, cfg.season)
    return MedicKdeForecaster(train, bandwidths, rule, region)


def _write_rows(rows: List[Dict[str, Any]], path: str, digest: str) -> None:
    frame = pd.DataFrame(rows)
    frame["config_hash"] = digest
    write_table(frame, path)
    LOG.info("Wrote %d rows to %s", len(frame), path)


def _pa_row(
    label: str, test: EventTable, density: DensityEvaluator, floor=None
) -> Dict[str, Any]:
    result = predictive_accuracy(test, density, floor=floor)
    try:
        _, half = normal_ci(event_log_scores(test, density, floor=floor))
    except DiagnosticException:
        half = float("nan")
    row = {
        "method": label,
        "pa": result.value,
        "ci_half_width": half,
        "n_events": result.n_events,
        "floored": result.floored,
        "zero_density": len(result.zero_density),
    }
    kdes = getattr(density, "kdes", None)
    if kdes is not None:
        row["bandwidth_x"], row["bandwidth_y"] = kdes.bandwidths
        row["cv_folds"] = "leave-one-week-out"
    return row


def cmd_fit(args: argparse.Namespace, settings: Settings) -> None:
    config_path = Path(args.config)
    cfg = load_config(config_path)
    if args.seed is not None:
        mcmc = cfg.mcmc.model_copy(update={"seed": args.seed})
        cfg = cfg.model_copy(update={"mcmc": mcmc})
    if args.chains is not None:
        cfg = cfg.model_copy(update={"n_chains": args.chains})
    region = _region_for(cfg, config_path)
    events = read_events(args.events, cfg.binning, horizon=cfg.season.T)
    hp = hyperparams_from_data(events)

    runs = run_chains(
        events,
        region,
        hp,
        cfg.season,
        cfg.mcmc,
        k=cfg.k,
        n_chains=cfg.n_chains,
        workers=settings.threads,
        bd_cfg=cfg.birth_death if cfg.variable_k else None,
    )
    run = {
        "config": cfg.model_dump(mode="json"),
        "region": {
            "polygon": region.polygon.tolist(),
            "gridResolution": region.grid_resolution,
        },
        "train": {
            "path": str(Path(args.events).resolve()),
            "nEvents": len(events),
        },
    }
    archive = archive_from_runs(runs, cfg.season, config_hash(cfg), run)
    try:
        summarize_chains(archive.chains())
    except DiagnosticException as ex:
        LOG.warning("Chain summary unavailable: %s", ex.message)
    write_draws(archive, args.out)
    if args.params_out:
        params = draws_frame(archive).to_dict("records")
        _write_rows(params, args.params_out, archive.config_hash)


def cmd_predict(args: argparse.Namespace, settings: Settings) -> None:
    archive = read_draws(args.archive)
    cfg, region = _archive_context(archive)
    if not 1 <= args.period <= cfg.season.T:
        raise InvalidInputException(
            f"--period {args.period} is outside the fitted horizon 1..{cfg.season.T};"
            " refit with a larger season T to forecast further ahead."
        )
    grid = region.integration_grid()
    density = predictive_density_grid(archive.draws, region, args.period)
    _write_rows(
        [
            {"period": args.period, "x_km": x, "y_km": y, "density": f}
            for (x, y), f in zip(grid.centers, density)
        ],
        args.grid_out,
        archive.config_hash,
    )


def cmd_score(args: argparse.Namespace, settings: Settings) -> None:
    archive = read_draws(args.archive)
    cfg, region = _archive_context(archive)
    test = read_events(args.test, cfg.binning, horizon=cfg.season.T)
    per_draw = pa_per_draw(test, archive.draws, region)
    try:
        pa, half = batch_means_ci(per_draw)
    except DiagnosticException as ex:
        LOG.warning("No batch-means interval: %s", ex.message)
        pa, half = float(per_draw.mean()), float("nan")
    rows = [
        {
            "method": "mixture",
            "pa": pa,
            "ci_half_width": half,
            "n_events": len(test),
            "floored": 0,
            "zero_density": int(np.isneginf(per_draw).sum()),
        }
    ]
    train = _training_events(args, archive, cfg)
    if train is not None:
        for method in BASELINES:
            floor = GRID_DENSITY_FLOOR if method == "medic" else None
            rows.append(
                _pa_row(method, test, _baseline(method, train, cfg, region), floor)
            )
    for row in rows:
        LOG.info("PA %s: %.6f ± %.6f", row["method"], row["pa"], row["ci_half_width"])
    _write_rows(rows, args.out, archive.config_hash)


def cmd_coverage(args: argparse.Namespace, settings: Settings) -> None:
    archive = read_draws(args.archive)
    cfg, region = _archive_context(archive)
    test = read_events(args.test, cfg.binning, horizon=cfg.season.T)
    rt = cfg.evaluation.model_copy(update={"bases": read_bases(args.bases)})
    draws = _thinned(archive.draws, args.max_draws)
    methods: List[Tuple[str, DensityEvaluator]] = [
        ("mixture", PosteriorMeanDensity(draws, region))
    ]
    train = _training_events(args, archive, cfg)
    if train is not None:
        methods += [(m, _baseline(m, train, cfg, region)) for m in BASELINES]
    rows = []
    for label, density in methods:
        curve = operational_error(density, test, rt, region)
        bands = zip(curve.thresholds, curve.mean, curve.low, curve.high)
        for r, error, low, high in bands:
            rows.append(
                {
                    "method": label,
                    "threshold_s": r,
                    "error": error,
                    "low": low,
                    "high": high,
                    "n_periods": curve.n_periods,
                }
            )
    _write_rows(rows, args.out, archive.config_hash)


def cmd_validate(args: argparse.Namespace, settings: Settings) -> None:
    archive = read_draws(args.archive)
    cfg, region = _archive_context(archive)
    test = read_events(args.test, cfg.binning, horizon=cfg.season.T)
    residuals = uniform_residuals(test, _thinned(archive.draws, args.max_draws), region)
    qq = qq_summary(residuals)
    ks = uniformity_test(residuals)
    LOG.info(
        "KS rejections at 1%%: %d of %d draws",
        int((ks["pvalue"] < 0.01).sum()),
        len(ks["pvalue"]),
    )
    _write_rows(
        [
            {"theoretical": t, "empirical": m, "low": lo, "high": hi}
            for t, m, lo, hi in zip(qq.theoretical, qq.mean, qq.low, qq.high)
        ],
        args.qq_out,
        archive.config_hash,
    )


def cmd_simulate(args: argparse.Namespace, settings: Settings) -> None:
    spec = load_scenario(args.scenario)
    scenario = build_scenario(spec)
    events = simulate(scenario)
    out = Path(args.out)
    if args.split_at is None:
        write_events(events, out)
    else:
        if not args.test_out:
            raise InvalidInputException("--split-at needs --test-out.")
        write_events(events.between(1, args.split_at), out)
        write_events(events.between(args.split_at + 1, spec.season.T), args.test_out)
    truth = spec.model_copy(update={"pi": scenario.car.pi.tolist()})
    write_scenario(truth, out.with_suffix(".scenario.json"))


def cmd_baseline(args: argparse.Namespace, settings: Settings) -> None:
    config_path = Path(args.config)
    cfg = load_config(config_path)
    region = _region_for(cfg, config_path)
    train = read_events(args.train, cfg.binning, horizon=cfg.season.T)
    test = read_events(args.test, cfg.binning, horizon=cfg.season.T)
    density = _baseline(args.method, train, cfg, region)
    floor = GRID_DENSITY_FLOOR if args.method == "medic" else None
    row = _pa_row(args.method, test, density, floor)
    _write_rows([row], args.out, config_hash(cfg))


COMMANDS: Dict[str, Callable[[argparse.Namespace, Settings], None]] = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "score": cmd_score,
    "coverage": cmd_coverage,
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "baseline": cmd_baseline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="demandmix",
        description="Spatio-temporal mixture models for ambulance demand.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="sample the posterior and write a draw archive")
    fit.add_argument("--config", required=True)
    fit.add_argument("--events", required=True)
    fit.add_argument("--out", required=True)
    fit.add_argument("--seed", type=int)
    fit.add_argument("--chains", type=int)
    fit.add_argument("--params-out", help="CSV export of scalar parameters")

    predict = sub.add_parser("predict", help="posterior mean density on the grid")
    predict.add_argument("--archive", required=True)
    predict.add_argument(
        "--period",
        type=int,
        required=True,
        help="period to forecast, within 1..T of the fitted season",
    )
    predict.add_argument("--grid-out", required=True)

    score = sub.add_parser("score", help="predictive accuracy against baselines")
    score.add_argument("--archive", required=True)
    score.add_argument("--test", required=True)
    score.add_argument("--out", required=True)
    score.add_argument("--train", help="training events (default: as fitted)")

    coverage = sub.add_parser("coverage", help="operational coverage error curves")
    coverage.add_argument("--archive", required=True)
    coverage.add_argument("--test", required=True)
    coverage.add_argument("--bases", required=True)
    coverage.add_argument("--out", required=True)
    coverage.add_argument("--train")
    coverage.add_argument("--max-draws", type=int, default=200)

    validate = sub.add_parser("validate", help="uniform residual Q-Q summary")
    validate.add_argument("--archive", required=True)
    validate.add_argument("--test", required=True)
    validate.add_argument("--qq-out", required=True)
    validate.add_argument("--max-draws", type=int, default=100)

    simulate_ = sub.add_parser("simulate", help="generate events from a scenario")
    simulate_.add_argument("--scenario", required=True)
    simulate_.add_argument("--out", required=True)
    simulate_.add_argument("--split-at", type=int, help="last training period")
    simulate_.add_argument("--test-out")

    baseline = sub.add_parser("baseline", help="score a MEDIC-style baseline")
    baseline.add_argument("--method", choices=BASELINES, required=True)
    baseline.add_argument("--config", required=True)
    baseline.add_argument("--train", required=True)
    baseline.add_argument("--test", required=True)
    baseline.add_argument("--out", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = Settings()
    except ValueError as ex:
        sys.stderr.write(f"Invalid DEMANDMIX_* environment settings: {ex}\n")
        return 1
    _configure_logging(args.verbose, settings.log_level)
    try:
        COMMANDS[args.command](args, settings)
    except DemandMixException as ex:
        LOG.debug("Command %s failed", args.command, exc_info=True)
        sys.stderr.write(f"{ex}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
