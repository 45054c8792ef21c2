"""Command-line interface: ``fgamtest <command> [options]``.

Commands:

* ``fit``: fit a model to CSV data, optionally write the surface grid, or
  verify a stored fit report against the data (``--verify``);
* ``test``: run a linearity, no-effect or linear-in-t test;
* ``simulate``: run a rejection-rate study from a TOML/JSON config;
* ``nulldist``: simulate the RLRT null distribution of a design;
* ``compare``: held-out RMSE of several models over random splits;
* ``generate``: write synthetic X.csv/t.csv/y.csv files.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical or convergence error.
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from . import __version__
from .config import Settings
from .design import build_psanova_design
from .enums import ModelKind, QuadratureRule, Scenario, ScoreScale, TestMethod
from .exceptions import FgamError, NumericalError, ParameterError
from .fgam import (
    FgamFit,
    build_t_basis,
    compare_prediction,
    data_quadrature,
    evaluate_surface,
    fit_model,
    flm_blocks,
    predict,
)
from .hypothesis import DEFAULT_ALPHA, run_test
from .io import DataBundle, load_bundle, load_study_config, write_bundle
from .lmm import FitOptions
from .models import FunctionalDataset
from .rlrt import simulate_rlrt_null
from .sim import (
    DEFAULT_SCORE_SCALE,
    StudyConfig,
    gen_predictors,
    gen_response_convex,
    gen_response_mixed,
    run_rejection_study,
)
from .streams import derive_seed

logger = logging.getLogger(__name__)

REPORT_SCHEMA = "report-v1"
VERIFY_TOLERANCE = 1e-10
CSV_FLOAT_FORMAT = "%.17g"
NULL_COMPONENTS = ("z1", "z2", "z3", "z23")


class ReportEnvelope(BaseModel):
    """Versioned JSON document written by every command."""

    schema_version: str = Field(REPORT_SCHEMA, alias="schema")
    tool_version: str = __version__
    command: str
    config: Dict[str, Any] = Field(default_factory=dict)
    results: Dict[str, Any] = Field(default_factory=dict)
    warnings: List[str] = Field(default_factory=list)
    wall_clock_seconds: float = 0.0

    model_config = {"populate_by_name": True}

    def to_json(self) -> str:
        """Stable serialization with sorted keys."""
        payload = self.model_dump(mode="json", by_alias=True)
        return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"


class _WarningCollector(logging.Handler):
    """Collects WARNING records emitted while a command runs."""

    def __init__(self) -> None:
        super().__init__(level=logging.WARNING)
        self.messages: List[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.messages.append(record.getMessage())


def _jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats to JSON types."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        number = float(value)
        return number if np.isfinite(number) else None
    return value


def _add_common(
    parser: argparse.ArgumentParser, settings: Settings, study: bool = False
) -> None:
    parser.add_argument(
        "--out", type=Path, default=None, help="Report path (default: stdout)"
    )
    # a study config carries its own seed and thread count
    parser.add_argument("--seed", type=int, default=None if study else settings.seed)
    parser.add_argument(
        "--threads", type=int, default=None if study else settings.threads
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v info, -vv debug"
    )
    parser.add_argument("-q", "--quiet", action="store_true", help="Errors only")


def _add_data(parser: argparse.ArgumentParser, needs_response: bool = True) -> None:
    group = parser.add_argument_group("data")
    group.add_argument(
        "--data-dir", type=Path, default=None, help="Directory with X.csv, t.csv, y.csv"
    )
    group.add_argument("--x", type=Path, default=None, help="N x J predictor matrix")
    group.add_argument("--t", type=Path, default=None, help="J x 1 grid")
    group.add_argument(
        "--y",
        type=Path,
        default=None,
        help="N x 1 responses" + ("" if needs_response else " (unused)"),
    )
    group.add_argument(
        "--header", action="store_true", help="CSV files start with a header row"
    )


def _add_basis(parser: argparse.ArgumentParser, settings: Settings) -> None:
    parser.add_argument("--kx", type=int, default=settings.kx)
    parser.add_argument("--kt", type=int, default=settings.kt)
    parser.add_argument(
        "--quadrature",
        choices=[r.value for r in QuadratureRule],
        default=settings.quadrature.value,
    )


def build_parser(settings: Optional[Settings] = None) -> argparse.ArgumentParser:
    """Build the argument parser with defaults taken from ``settings``."""
    settings = settings or Settings()
    parser = argparse.ArgumentParser(
        prog="fgamtest",
        description="Fit functional GAMs and test the functional linear model.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument(
        "--env-file", type=Path, default=None, help="Load FGAM_* defaults from a .env"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    fit = commands.add_parser("fit", help="Fit a model to CSV data")
    _add_data(fit)
    _add_basis(fit, settings)
    _add_common(fit, settings)
    fit.add_argument(
        "--model", choices=[m.value for m in ModelKind], default=ModelKind.FGAMM.value
    )
    fit.add_argument("--surface", type=Path, default=None, help="Surface grid CSV")
    fit.add_argument(
        "--max-iter",
        type=int,
        default=settings.max_iter,
        help="Nelder-Mead iteration cap per start for variance fits",
    )
    fit.add_argument(
        "--verify",
        type=Path,
        default=None,
        help="Recompute fitted values from a stored fit report instead of fitting",
    )

    test = commands.add_parser("test", help="Run a hypothesis test")
    _add_data(test)
    _add_basis(test, settings)
    _add_common(test, settings)
    test.add_argument(
        "--method",
        choices=[m.value for m in TestMethod if m is not TestMethod.KNOWNSIG1],
        default=TestMethod.EQUALVC.value,
    )
    test.add_argument("--nsim", type=int, default=settings.nsim)
    test.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)

    simulate = commands.add_parser("simulate", help="Run a rejection-rate study")
    simulate.add_argument(
        "--config", required=True, help="Study config file or shipped config name"
    )
    simulate.add_argument(
        "--table", type=Path, default=None, help="Rejection table CSV path"
    )
    simulate.add_argument("--reps", type=int, default=None, help="Override reps")
    _add_common(simulate, settings, study=True)

    nulldist = commands.add_parser("nulldist", help="Simulate an RLRT null sample")
    _add_data(nulldist, needs_response=False)
    _add_basis(nulldist, settings)
    _add_common(nulldist, settings)
    nulldist.add_argument("--nsim", type=int, default=settings.nsim)
    nulldist.add_argument("--component", choices=NULL_COMPONENTS, default="z23")
    nulldist.add_argument(
        "--generate",
        type=int,
        default=None,
        metavar="N",
        help="Use N generated curves instead of a data bundle",
    )
    nulldist.add_argument(
        "--sample", type=Path, default=None, help="Null sample CSV path"
    )

    compare = commands.add_parser("compare", help="Held-out RMSE comparison")
    _add_data(compare)
    _add_basis(compare, settings)
    _add_common(compare, settings)
    compare.add_argument(
        "--models",
        nargs="+",
        choices=[m.value for m in ModelKind],
        default=[ModelKind.FLM.value, ModelKind.FGAMM.value],
    )
    compare.add_argument("--splits", type=int, default=25)
    compare.add_argument("--train-fraction", type=float, default=2.0 / 3.0)

    generate = commands.add_parser("generate", help="Write synthetic CSV data")
    generate.add_argument(
        "--scenario", choices=[s.value for s in Scenario], default="convex"
    )
    generate.add_argument("--n", type=int, default=100, help="Number of curves")
    generate.add_argument("--j", type=int, default=30, help="Number of times")
    generate.add_argument("--phi", type=float, default=1.0)
    generate.add_argument(
        "--score-scale",
        choices=[s.value for s in ScoreScale],
        default=DEFAULT_SCORE_SCALE.value,
        help="Read 8/j^2 as the score standard deviation or variance",
    )
    generate.add_argument(
        "--sigma2", type=float, nargs=2, default=[0.0, 0.0], metavar=("S2", "S3")
    )
    generate.add_argument("--out-dir", type=Path, required=True)
    _add_basis(generate, settings)
    _add_common(generate, settings)
    return parser


def _configure_logging(verbose: int, quiet: bool) -> None:
    if quiet:
        level = logging.ERROR
    elif verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = logging.WARNING
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s", force=True
    )


def _bundle(args: argparse.Namespace, needs_response: bool = True) -> DataBundle:
    x, t, y = args.x, args.t, args.y
    if args.data_dir is not None:
        x = x or args.data_dir / "X.csv"
        t = t or args.data_dir / "t.csv"
        if y is None and (args.data_dir / "y.csv").exists():
            y = args.data_dir / "y.csv"
    if x is None or t is None:
        raise ParameterError("Give --data-dir or both --x and --t")
    if needs_response and y is None:
        raise ParameterError("This command needs responses: give --y or --data-dir")
    return load_bundle(x, t, y if needs_response else None, header=args.header)


def _basis_config(args: argparse.Namespace) -> Dict[str, Any]:
    return {"kx": args.kx, "kt": args.kt, "quadrature": args.quadrature}


def _cmd_fit(args: argparse.Namespace) -> Dict[str, Any]:
    bundle = _bundle(args)
    if args.verify is not None:
        return _verify_fit(args.verify, bundle.dataset)
    fit = fit_model(
        ModelKind(args.model),
        bundle.dataset,
        args.kx,
        args.kt,
        QuadratureRule(args.quadrature),
        FitOptions(max_iter=args.max_iter),
    )
    results: Dict[str, Any] = {"summary": fit.summary(), "fit": fit.to_dict()}
    if args.surface is not None:
        evaluate_surface(fit).to_frame().to_csv(
            args.surface, index=False, float_format=CSV_FLOAT_FORMAT
        )
        results["surface_path"] = str(args.surface)
    return results


def _verify_fit(report_path: Path, data: FunctionalDataset) -> Dict[str, Any]:
    """Recompute fitted values from a stored fit and compare."""
    try:
        report = json.loads(report_path.read_text())
        payload = report["results"]["fit"]
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ParameterError(f"Cannot read a fit from {report_path}: {e}") from e
    fit = FgamFit.from_dict(payload)
    recomputed = predict(fit, data).values
    if recomputed.size != fit.fitted_values.size:
        raise ParameterError(
            f"Report has {fit.fitted_values.size} fitted values, the data "
            f"{recomputed.size} curves"
        )
    difference = float(np.max(np.abs(recomputed - fit.fitted_values)))
    if difference > VERIFY_TOLERANCE:
        raise NumericalError(
            f"Recomputed fitted values differ by {difference:.3e}",
            details={"max_abs_diff": difference},
        )
    return {"verified": True, "max_abs_diff": difference}


def _cmd_test(args: argparse.Namespace) -> Dict[str, Any]:
    bundle = _bundle(args)
    result = run_test(
        TestMethod(args.method),
        bundle.dataset,
        kx=args.kx,
        kt=args.kt,
        nsim=args.nsim,
        seed=args.seed,
        quad=QuadratureRule(args.quadrature),
        alpha=args.alpha,
        threads=args.threads,
    )
    return result.to_dict()


def _cmd_simulate(args: argparse.Namespace) -> Dict[str, Any]:
    config = load_study_config(args.config)
    overrides = {"seed": args.seed, "threads": args.threads, "reps": args.reps}
    updates = {k: v for k, v in overrides.items() if v is not None}
    if updates:
        config = StudyConfig.from_mapping({**config.model_dump(), **updates})
    table = run_rejection_study(config)
    if args.table is not None:
        table.to_csv(args.table)
    return {
        "study": config.model_dump(mode="json"),
        "table": table.to_records(),
        "flagged": table.flagged,
    }


def _null_design(args: argparse.Namespace) -> FunctionalDataset:
    if args.generate is not None:
        predictors, grid = gen_predictors(args.generate, seed=args.seed)
        return FunctionalDataset(predictors=predictors, grid=grid)
    return _bundle(args, needs_response=False).dataset


def _cmd_nulldist(args: argparse.Namespace) -> Dict[str, Any]:
    data = _null_design(args)
    quad = data_quadrature(data, QuadratureRule(args.quadrature))
    if args.component == "z1":
        fixed, random = flm_blocks(data, build_t_basis(data, args.kt), quad)
    else:
        design = build_psanova_design(data, args.kx, args.kt, quad)
        random = {
            "z2": design.z2,
            "z3": design.z3,
            "z23": design.z_nonlinear,
        }[args.component]
        fixed = design.fixed
    null = simulate_rlrt_null(fixed, random, args.nsim, args.seed, args.threads)
    if args.sample is not None:
        pd.DataFrame({"statistic": null.statistics}).to_csv(
            args.sample, index=False, float_format=CSV_FLOAT_FORMAT
        )
    return {
        "component": args.component,
        "summary": null.summary(),
        "mu": null.mu.tolist(),
        "sample_path": None if args.sample is None else str(args.sample),
    }


def _cmd_compare(args: argparse.Namespace) -> Dict[str, Any]:
    bundle = _bundle(args)
    comparison = compare_prediction(
        bundle.dataset,
        models=[ModelKind(m) for m in args.models],
        n_splits=args.splits,
        train_fraction=args.train_fraction,
        seed=args.seed,
        kx=args.kx,
        kt=args.kt,
        quad=QuadratureRule(args.quadrature),
        threads=args.threads,
    )
    return {
        "mean_rmse": comparison.mean_rmse(),
        "beats_flm": comparison.beats_flm(),
        "failures": comparison.failures(),
        "splits": comparison.to_frame().to_dict(orient="records"),
    }


def _cmd_generate(args: argparse.Namespace) -> Dict[str, Any]:
    predictors, grid = gen_predictors(
        args.n, args.j, derive_seed(args.seed, 0), ScoreScale(args.score_scale)
    )
    results: Dict[str, Any] = {
        "scenario": args.scenario,
        "score_scale": args.score_scale,
    }
    if Scenario(args.scenario) is Scenario.CONVEX:
        response = gen_response_convex(
            predictors, grid, args.phi, derive_seed(args.seed, 1)
        )
        results["phi"] = args.phi
    else:
        truth = gen_response_mixed(
            predictors,
            grid,
            args.sigma2[0],
            args.sigma2[1],
            args.kx,
            args.kt,
            derive_seed(args.seed, 1),
            QuadratureRule(args.quadrature),
        )
        response = truth.response
        results["sigma2"] = list(args.sigma2)
        results["b1"] = truth.b1.tolist()
    dataset = FunctionalDataset(predictors=predictors, grid=grid, response=response)
    paths = write_bundle(args.out_dir, dataset)
    results["files"] = {k: str(v) for k, v in paths.items()}
    return results


_COMMANDS = {
    "fit": _cmd_fit,
    "test": _cmd_test,
    "simulate": _cmd_simulate,
    "nulldist": _cmd_nulldist,
    "compare": _cmd_compare,
    "generate": _cmd_generate,
}


def _resolved_config(args: argparse.Namespace) -> Dict[str, Any]:
    skip = {"command", "verbose", "quiet", "out", "env_file"}
    return {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in sorted(vars(args).items())
        if k not in skip
    }


def _settings_from_argv(argv: Sequence[str]) -> Settings:
    """Read ``--env-file`` ahead of the full parse so it can set defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--env-file", type=Path, default=None)
    known, _ = pre.parse_known_args(argv)
    if known.env_file is not None:
        return Settings.from_env(load_dotenv=True, dotenv_path=str(known.env_file))
    return Settings.from_env()


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line and return the process exit code."""
    arguments = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser(_settings_from_argv(arguments))
    args = parser.parse_args(arguments)
    _configure_logging(args.verbose, args.quiet)
    threads = getattr(args, "threads", None)
    if threads is not None and threads < 1:
        parser.error("--threads must be positive")

    collector = _WarningCollector()
    root = logging.getLogger("fgamtest")
    root.addHandler(collector)
    started = time.perf_counter()
    try:
        results = _COMMANDS[args.command](args)
    except FgamError as e:
        logger.error("%s: %s", type(e).__name__, e.message)
        return e.exit_code
    finally:
        root.removeHandler(collector)

    envelope = ReportEnvelope(
        command=args.command,
        config=_resolved_config(args),
        results=_jsonable(results),
        warnings=collector.messages,
        wall_clock_seconds=round(time.perf_counter() - started, 3),
    )
    text = envelope.to_json()
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
