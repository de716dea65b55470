"""Command-line entry point: ``pwexp {fit,simulate,study,summarize}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import analysis
from .data import ValidationError, gap_times, read_csv, write_csv
from .likelihood import DEFAULT_BETA, PriorConfig
from .sampler import SamplerRefusal, load_traces, run_chains, save_traces
from .simulation import load_scenario, run_simulation_study, simulate_dataset

log = logging.getLogger("pwexp")

EXIT_OK, EXIT_VALIDATION, EXIT_REFUSAL = 0, 2, 3


def _version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def _hyperprior(text: str) -> tuple[float, float]:
    try:
        shape, rate = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected SHAPE,RATE") from None
    return shape, rate


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pwexp", description="Piecewise exponential change-point models")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="default 0, or the scenario seed for study")
        sp.add_argument("--iterations", type=int, default=20_750)
        sp.add_argument("--burnin", type=int, default=750)
        sp.add_argument("--alpha", type=float, default=1.0)
        sp.add_argument("--beta", type=float, default=None, help="Gamma rate; default set by --timescale")
        sp.add_argument("--xi", type=float, default=1.0, help="Poisson mean for the number of change-points")
        sp.add_argument("--max-k", type=int, default=10)
        sp.add_argument("--hyperprior", type=_hyperprior, default=None, metavar="SHAPE,RATE")
        sp.add_argument("--timescale", choices=tuple(DEFAULT_BETA), default="years")
        sp.add_argument("--workers", type=int, default=1)

    fit = sub.add_parser("fit", help="fit a dataset")
    common(fit)
    fit.add_argument("--input", type=Path, required=True)
    fit.add_argument("--chains", type=int, default=4)
    fit.add_argument("--horizon", type=float, default=None)
    fit.add_argument("--censor-at", type=float, default=None, help="administratively censor the input at this time")
    fit.add_argument("--grid-points", type=int, default=200)
    fit.add_argument("--uncollapse", action=argparse.BooleanOptionalAction, default=True,
                     help="sample segment hazards (needed for curves and fit statistics)")

    sim = sub.add_parser("simulate", help="simulate one dataset from a scenario file")
    sim.add_argument("--scenario", type=Path, required=True)
    sim.add_argument("--out", type=Path, required=True)
    sim.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")

    study = sub.add_parser("study", help="replicated simulate-and-fit study")
    common(study)
    study.add_argument("--scenario", type=Path, required=True)

    summ = sub.add_parser("summarize", help="recompute summaries from saved chains")
    summ.add_argument("--traces", type=Path, required=True)
    summ.add_argument("--out", type=Path, required=True)
    summ.add_argument("--input", type=Path, default=None, help="dataset for fit statistics")
    summ.add_argument("--timescale", choices=tuple(DEFAULT_BETA), default="years")
    summ.add_argument("--horizon", type=float, default=None)
    summ.add_argument("--grid-points", type=int, default=200)
    return p


def _prior(args) -> PriorConfig:
    return PriorConfig(alpha=args.alpha, beta=args.beta if args.beta is not None else DEFAULT_BETA[args.timescale],
                       poisson_rate=args.xi, max_changepoints=args.max_k, hyperprior=args.hyperprior)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _config(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())}


def _manifest(args, out: Path, seed: int | None) -> None:
    _write_json(out / "manifest.json", {"config": _config(args), "seed": seed, "version": _version()})


def _summaries(traces, ds) -> tuple[dict, dict | None]:
    probs = analysis.model_posterior_probs(traces)
    summary = {"model_probabilities": {str(k): p for k, p in probs.items()},
               "modal_k": analysis.modal_k(traces),
               "n_draws": sum(len(t) for t in traces),
               "changepoints": {}, "hazards": {}}
    for k in probs:
        cp = analysis.changepoint_summaries(traces, k)
        summary["changepoints"][str(k)] = {"mean": cp.mean.tolist(), "sd": cp.sd.tolist(), "n_states": cp.n_states}
        if traces[0].has_hazards:
            hz = analysis.hazard_summaries(traces, k)
            summary["hazards"][str(k)] = {"mean": hz.mean.tolist(), "sd": hz.sd.tolist()}
    if len(traces) > 1:
        summary["psrf"] = {f: analysis.psrf(traces, f) for f in ("k", "log_posterior")}
    stats = None
    if traces[0].has_hazards and ds is not None:
        fs = analysis.fit_statistics(traces, ds)
        stats = {"waic": fs.waic, "neg2_log_pml": fs.neg2_log_pml, "pointwise_dims": list(fs.pointwise_dims)}
    return summary, stats


def _write_curves(traces, out: Path, horizon: float, grid_points: int, summary: dict) -> None:
    grid = analysis.default_grid(horizon, grid_points)
    for kind, fn in (("hazard", analysis.hazard_curve), ("survival", analysis.survival_curve),
                     ("cumulative_hazard", analysis.cumulative_hazard_curve)):
        curve = fn(traces, grid)
        curve.to_csv(out / f"{kind}_curve.csv")
        if kind == "survival":
            summary["auc"] = {"horizon": horizon, "value": analysis.auc(curve, horizon)}


def cmd_fit(args) -> int:
    ds = read_csv(args.input, args.timescale)
    if args.censor_at is not None:
        ds = ds.censor_at(args.censor_at)
    if args.iterations <= args.burnin or args.chains < 1:
        raise ValidationError("need iterations > burnin and chains >= 1")
    seed = 0 if args.seed is None else args.seed
    traces = run_chains(gap_times(ds), _prior(args), args.chains, args.iterations, args.burnin, seed,
                        uncollapse=args.uncollapse, hyper=args.hyperprior is not None, workers=args.workers)
    args.out.mkdir(parents=True, exist_ok=True)
    horizon = args.horizon if args.horizon is not None else float(ds.times.max())
    summary, stats = _summaries(traces, ds)
    if traces[0].has_hazards:
        _write_curves(traces, args.out, horizon, args.grid_points, summary)
        _write_json(args.out / "fit_statistics.json", stats)
    _write_json(args.out / "summary.json", summary)
    save_traces(args.out / "traces.npz", traces)
    _manifest(args, args.out, seed)
    log.info("modal k = %d", summary["modal_k"])
    return EXIT_OK


def cmd_summarize(args) -> int:
    if not args.traces.exists():
        raise ValidationError(f"no such file: {args.traces}")
    traces = load_traces(args.traces)
    ds = read_csv(args.input, args.timescale) if args.input else None
    args.out.mkdir(parents=True, exist_ok=True)
    horizon = args.horizon if args.horizon is not None else float(traces[0].gaps.event_times[-1])
    summary, stats = _summaries(traces, ds)
    if traces[0].has_hazards:
        _write_curves(traces, args.out, horizon, args.grid_points, summary)
    if stats is not None:
        _write_json(args.out / "fit_statistics.json", stats)
    _write_json(args.out / "summary.json", summary)
    _manifest(args, args.out, traces[0].seed)
    return EXIT_OK


def _scenario(path: Path):
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    try:
        return load_scenario(path)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def cmd_simulate(args) -> int:
    scenario = _scenario(args.scenario)
    seed = scenario.seed if args.seed is None else args.seed
    ds = simulate_dataset(scenario, np.random.default_rng(seed))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(ds, args.out)
    _write_json(args.out.with_suffix(".manifest.json"),
                {"config": _config(args), "scenario": dataclasses.asdict(scenario), "seed": seed, "version": _version()})
    return EXIT_OK


def cmd_study(args) -> int:
    scenario = _scenario(args.scenario)
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    if args.iterations <= args.burnin:
        raise ValidationError("need iterations > burnin")
    report = run_simulation_study(scenario, _prior(args), args.iterations, args.burnin, workers=args.workers)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "report.json").write_text(report.to_json() + "\n")
    _manifest(args, args.out, scenario.seed)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "study": cmd_study, "summarize": cmd_summarize}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except SamplerRefusal as exc:
        print(f"pwexp: sampler refused: {exc}", file=sys.stderr)
        return EXIT_REFUSAL
    except FileNotFoundError as exc:
        print(f"pwexp: no such file: {exc.filename}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValidationError, ValueError, OSError) as exc:
        print(f"pwexp: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
