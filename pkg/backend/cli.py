"""
Command-line entry point
Human-readable summaries go to stdout, machine artifacts only to --out paths,
diagnostics to stderr. Exit codes: 0 success, 2 invalid input, 3 no convergence.
"""

import sys
import json
import logging
import argparse
from dataclasses import replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence

from backend.baselines import BaselineConfig, Method, price
from backend.config import Settings, configure_logging, load_settings
from backend.errors import MarketError
from backend.experiments import (
    ALL_METHODS,
    ENVELOPE_PANELS as EXPERIMENT_PANELS,
    envelope_experiment,
    fairness_experiment,
    mean_spearman,
    propagation_experiment,
    propagation_summary,
    stress_curve,
    stress_experiment,
    stress_summary,
)
from backend.feasibility import Axis, analytic_envelope, max_uniform_fee, numerical_frontier, verify_max_fee
from backend.generator import GeneratorConfig, generate
from backend.integrations import csv_export
from backend.integrations.instance_store import load_instance, load_subset_utilities, save_instance
from backend.market import MarketInstance, acceptance_check, validate
from backend.quotation import QuotationParams
from backend.reporting import (
    render_baseline,
    render_envelope,
    render_experiment,
    render_fee,
    render_shapley,
    render_solve,
    render_validation,
)
from backend.shapley import shapley_table
from backend.solver import Schedule, SolverConfig, solve

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NOT_CONVERGED = 3

ENVELOPE_PANELS = {**EXPERIMENT_PANELS, "km_kd": (Axis.ALPHA_KM, Axis.ALPHA_KD)}

EXPERIMENT_FILES = {
    "fairness": "fairness.csv",
    "stress": "stress.csv",
    "propagation": "propagation.csv",
    "envelope": "envelope_experiment.csv",
}


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"{text!r} must be positive")
    return value


def _nonnegative_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"{text!r} must be nonnegative")
    return value


def _unit_interval(text: str) -> float:
    value = _nonnegative_float(text)
    if value > 1:
        raise argparse.ArgumentTypeError(f"{text!r} must lie in [0, 1]")
    return value


def _rho(text: str) -> float:
    value = _nonnegative_float(text)
    if value >= 1:
        raise argparse.ArgumentTypeError(f"{text!r} must lie in [0, 1)")
    return value


def _fee(text: str) -> float:
    value = _nonnegative_float(text)
    if value >= 1:
        raise argparse.ArgumentTypeError(f"{text!r} must lie in [0, 1)")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text!r} must be >= 1")
    return value


def _grid(text: str) -> List[float]:
    values = [_positive_float(part) for part in text.split(",") if part.strip()]
    if not values:
        raise argparse.ArgumentTypeError("grid needs at least one value")
    return values


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--instance", type=Path, help="instance document (JSON)")
    common.add_argument("--out", type=Path, help="artifact path")
    common.add_argument("--seed", type=int, help="RNG seed")
    common.add_argument("--epsilon", type=_positive_float, help="solver tolerance (default 1e-10)")
    common.add_argument("--max-iter", type=_positive_int, help="solver iteration cap (default 100000)")
    common.add_argument("--schedule", choices=["sync", "block", "async"], help="update schedule")
    common.add_argument("--rho", type=_rho, help="total buyer weight per generated model")
    common.add_argument("--alpha-kd", type=_positive_float, default=1.0)
    common.add_argument("--alpha-km", type=_positive_float, default=1.0)
    common.add_argument("--alpha-delta", type=_nonnegative_float, default=1.0)
    common.add_argument("--tau", type=_fee, default=0.0, help="uniform platform fee in [0, 1)")
    common.add_argument("--log-level", help="logging level (default from MARKET_LOG_LEVEL)")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="run_market", description="Coupled data-model market engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="draw a synthetic instance")
    p.add_argument("--single-buyer", action="store_true", help="one buyer per model")
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("solve", parents=[common], help="iterate to the equilibrium")
    p.add_argument("--trace", type=Path, help="residual trace CSV")
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("shapley", parents=[common], help="subset utilities to Shapley shares")
    p.add_argument("--utilities", type=Path, required=True, help="subset-utility document (JSON)")
    p.set_defaults(handler=cmd_shapley)

    p = sub.add_parser("envelope", parents=[common], help="feasibility envelope CSV")
    p.add_argument("--panel", choices=sorted(ENVELOPE_PANELS), default="kd_delta")
    p.add_argument("--grid", type=_grid, default=[0.5, 1.0, 2.0], help="comma-separated x values")
    p.add_argument("--analytic-only", action="store_true", help="skip numerical bisection")
    p.set_defaults(handler=cmd_envelope)

    p = sub.add_parser("fee", parents=[common], help="maximal uniform platform fee")
    p.add_argument("--verify", action="store_true", help="cross-check by solving at tau_star")
    p.set_defaults(handler=cmd_fee)

    p = sub.add_parser("baseline", parents=[common], help="price with a baseline method")
    p.add_argument("--method", choices=[m.value for m in Method], default="triplewin")
    p.add_argument("--quantile", type=_unit_interval, default=0.5, help="broker-centric reserve quantile")
    p.set_defaults(handler=cmd_baseline)

    p = sub.add_parser("experiment", parents=[common], help="run a harness experiment")
    p.add_argument("name", choices=["fairness", "stress", "propagation", "envelope"])
    p.add_argument("--seeds", type=_positive_int, help="number of seeds (default MARKET_N_SEEDS)")
    p.add_argument("--method", action="append", choices=[m.value for m in Method],
                   help="restrict to a method (repeatable; default all)")
    p.add_argument("--quantile", type=_unit_interval, default=0.5, help="broker-centric reserve quantile")
    p.add_argument("--rounds", type=_positive_int, default=5, help="deepest propagation stage")
    p.set_defaults(handler=cmd_experiment)

    p = sub.add_parser("validate", parents=[common], help="check instance invariants")
    p.set_defaults(handler=cmd_validate)
    return parser


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_INVALID


def _load_valid(args: argparse.Namespace) -> MarketInstance:
    if args.instance is None:
        raise MarketError("--instance is required for this command")
    instance = load_instance(args.instance)
    report = validate(instance)
    if not report.passed:
        extra = f" (+{len(report.violations) - 1} more)" if len(report.violations) > 1 else ""
        raise MarketError(f"invalid instance: {report.violations[0]}{extra}")
    return instance


def _params(args: argparse.Namespace) -> QuotationParams:
    return QuotationParams.from_fee(
        args.tau, alpha_kd=args.alpha_kd, alpha_km=args.alpha_km, alpha_delta=args.alpha_delta,
    )


def _solver_config(args: argparse.Namespace, settings: Settings) -> SolverConfig:
    return SolverConfig.from_settings(
        settings,
        epsilon=args.epsilon,
        max_iterations=args.max_iter,
        schedule=Schedule.parse(args.schedule) if args.schedule else None,
        seed=args.seed,
    )


def _write_json(payload: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote {path}")


def cmd_generate(args: argparse.Namespace, settings: Settings) -> int:
    config = GeneratorConfig(rho=args.rho if args.rho is not None else 0.6)
    if args.single_buyer:
        config = replace(config, buyers_per_model=(1, 1))
    seed = args.seed if args.seed is not None else settings.seed
    instance = generate(config, seed)
    if args.out:
        save_instance(instance, args.out)
    print(f"generated {instance.instance_id}: {len(instance.datasets)} datasets, "
          f"{len(instance.models)} models, d = {instance.dimension}")
    return EXIT_OK


def cmd_solve(args: argparse.Namespace, settings: Settings) -> int:
    instance = _load_valid(args)
    report = solve(instance, _params(args), _solver_config(args, settings))
    print(render_solve(report), end="")
    if args.out:
        _write_json(report.to_dict(), args.out)
    if args.trace:
        csv_export.write_trace([report], args.trace)
    if not report.converged:
        print(f"error: no convergence within {report.iterations} iterations "
              f"(residual {report.final_residual:.3e})", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_shapley(args: argparse.Namespace, settings: Settings) -> int:
    instance = _load_valid(args) if args.instance else None
    table = shapley_table(load_subset_utilities(args.utilities, instance))
    print(render_shapley(table), end="")
    if args.out:
        _write_json({"shapley": [{"model": m, "shares": s} for m, s in table.to_dict().items()]}, args.out)
    return EXIT_OK


def cmd_envelope(args: argparse.Namespace, settings: Settings) -> int:
    instance = _load_valid(args)
    x_axis, y_axis = ENVELOPE_PANELS[args.panel]
    third = next(a for a in Axis if a not in (x_axis, y_axis))
    fixed = {Axis.ALPHA_KD: args.alpha_kd, Axis.ALPHA_KM: args.alpha_km, Axis.ALPHA_DELTA: args.alpha_delta}[third]
    if args.analytic_only:
        envelope = analytic_envelope(instance, x_axis, y_axis, args.grid, fixed)
    else:
        envelope = numerical_frontier(instance, x_axis, y_axis, args.grid, fixed, _solver_config(args, settings))
    print(render_envelope(envelope), end="")
    if args.out:
        csv_export.write_envelope(envelope, args.out)
    return EXIT_OK


def cmd_fee(args: argparse.Namespace, settings: Settings) -> int:
    instance = _load_valid(args)
    fee = max_uniform_fee(instance)
    verification = verify_max_fee(instance, fee) if args.verify else None
    print(render_fee(fee, verification), end="")
    if args.out:
        payload = fee.to_dict()
        if verification:
            payload["verification"] = {
                "binding_price": verification.binding_price,
                "binding_min_reserve": verification.binding_min_reserve,
                "infeasible_above": verification.infeasible_above,
                "passed": verification.passed,
            }
        _write_json(payload, args.out)
    return EXIT_OK


def cmd_baseline(args: argparse.Namespace, settings: Settings) -> int:
    instance = _load_valid(args)
    method = Method.parse(args.method)
    params = _params(args)
    prices = price(instance, method, params, BaselineConfig(quantile=args.quantile), _solver_config(args, settings))
    acceptance = acceptance_check(instance, prices, params.alpha_kd)
    print(render_baseline(method.value, prices, acceptance), end="")
    if args.out:
        _write_json({"method": method.value, "prices": prices.to_dict(),
                     "acceptance": acceptance.to_dict()}, args.out)
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace, settings: Settings) -> int:
    first = args.seed if args.seed is not None else settings.seed
    seeds = range(first, first + (args.seeds or settings.n_seeds))
    generator = GeneratorConfig(rho=args.rho) if args.rho is not None else GeneratorConfig()
    config = _solver_config(args, settings)
    baseline = BaselineConfig(quantile=args.quantile, propagation_rounds=args.rounds)
    methods = [Method.parse(m) for m in dict.fromkeys(args.method)] if args.method else list(ALL_METHODS)

    if args.name == "fairness":
        frame = fairness_experiment(seeds, methods=methods, generator_config=generator,
                                    config=config, baseline=baseline)
        summary = mean_spearman(frame)
        writer: Callable = csv_export.write_fairness
    elif args.name == "stress":
        frame = stress_curve(stress_experiment(seeds, methods=methods, generator_config=generator,
                                               config=config, baseline=baseline))
        summary = stress_summary(frame)
        writer = csv_export.write_stress
    elif args.name == "propagation":
        frame = propagation_experiment(seeds, methods=methods, generator_config=generator,
                                       config=config, baseline=baseline)
        summary = propagation_summary(frame)
        writer = csv_export.write_propagation
    else:
        if args.method:
            raise MarketError("--method does not apply to the envelope experiment")
        frame = envelope_experiment(seeds, generator_config=generator, config=config)
        summary = frame.drop(columns=["instance"])
        writer = csv_export.write_envelope_experiment

    out = args.out or settings.export_dir / EXPERIMENT_FILES[args.name]
    writer(frame, out)
    print(render_experiment(args.name, summary, str(out)), end="")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace, settings: Settings) -> int:
    if args.instance is None:
        return _fail("--instance is required for this command")
    report = validate(load_instance(args.instance))
    print(render_validation(report), end="")
    return EXIT_OK if report.passed else EXIT_INVALID


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse argv, dispatch the subcommand and return the exit status"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse has already printed its usage line
        return EXIT_OK if e.code in (0, None) else EXIT_INVALID

    try:
        settings = load_settings()
        configure_logging(args.log_level or settings.log_level)
        return args.handler(args, settings)
    except MarketError as e:
        return _fail(str(e))
    except OSError as e:
        return _fail(f"{e.filename}: {e.strerror}" if e.filename else str(e))


def main() -> None:
    sys.exit(run())
