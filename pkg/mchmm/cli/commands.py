"""
Subcommands. Each one is a generator of tagged progress lines; the
launcher prints them and maps raised errors to exit codes.
"""

import argparse
import logging
from pathlib import Path
from typing import Any, Iterator, Optional

from pydantic import ValidationError

from mchmm.config import (
    CHAIN_STEPS,
    DEFAULT_DT,
    DEFAULT_HORIZON,
    DEFAULT_N_STATE,
    DEFAULT_SEED,
    FIT_MAX_ITER,
    FIT_STARTS,
    FIT_TOL,
    INIT_PATHS,
    INIT_STEPS,
    MIN_M_OBS,
    OUTPUT_DIR,
    REFERENCE_PARAMS,
)
from mchmm.cli import files, report
from mchmm.core.errors import ConfigError
from mchmm.core.master_eq import solve_moment_odes
from mchmm.core.model import EIState, ModelParams, RateParams, TruncationConfig
from mchmm.core.moments import LimitMoments, plugin_estimate
from mchmm.core.simulation import ObservationSeries, mc_moments, simulate, skeleton_sample
from mchmm.experiments.batch import run_replications
from mchmm.experiments.selection import compare
from mchmm.hmm.baum_welch import FitConfig, estimate_parameters, fit
from mchmm.hmm.model import build_hmm
from mchmm.hmm.skeleton import estimate_skeleton, oracle_skeleton, sample_endpoints, simulate_skeleton, stationary_distribution
from mchmm.models import ModelRegistry
from mchmm.models.base import CompartmentModel

logger = logging.getLogger(__name__)


def add_model_args(parser: argparse.ArgumentParser) -> None:
    """Model selector, params file and per-rate overrides."""
    parser.add_argument("--model", default="ei", help="Model id: ei (2) or lbdi (1)")
    parser.add_argument("--params", help="JSON file with rate parameters")
    parser.add_argument("--lambda", dest="lam", type=float, help="Contact (birth) rate lambda")
    parser.add_argument("--mu", type=float, help="Isolation rate mu")
    parser.add_argument("--alpha", type=float, help="Incubation rate alpha")
    parser.add_argument("--nu", type=float, help="Exogenous rate nu")


def add_fit_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--starts", type=int, default=FIT_STARTS, help="Number of random starts")
    parser.add_argument("--max-iter", type=int, default=FIT_MAX_ITER, help="Baum-Welch iterations per start")
    parser.add_argument("--tol", type=float, default=FIT_TOL, help="Relative log-likelihood tolerance")
    parser.add_argument("--trunc-n", type=int, default=DEFAULT_N_STATE, help="State truncation N")
    parser.add_argument("--trunc-m", type=int, help="Emission bound M (default: max observed, at least 2)")
    parser.add_argument("--init-method", choices=["monte_carlo", "oracle"], default="monte_carlo")
    parser.add_argument("--init-paths", type=int, default=INIT_PATHS, help="Paths per start initialisation")
    parser.add_argument("--init-steps", type=int, default=INIT_STEPS, help="Windows per initialisation path")
    parser.add_argument("--chain-steps", type=int, default=CHAIN_STEPS, help="Chain length for moment recovery")


def resolve_params(args: argparse.Namespace, model: CompartmentModel) -> RateParams:
    """Flags override the params file, which overrides the reference values."""
    values = {k: v for k, v in REFERENCE_PARAMS.items() if k in model.param_names}
    if getattr(args, "params", None):
        document = files.read_json(args.params)
        values.update({k: v for k, v in document.items() if k in model.param_names})
    flags = {"lambda": args.lam, "mu": args.mu, "alpha": args.alpha, "nu": args.nu}
    for name, value in flags.items():
        if value is None:
            continue
        if name not in model.param_names:
            raise ConfigError(f"Model {model.id} has no parameter '{name}'")
        values[name] = value
    return model.make_params(values)


def fit_config(args: argparse.Namespace, model: CompartmentModel, obs: Optional[ObservationSeries]) -> FitConfig:
    m_obs = args.trunc_m
    if m_obs is None:
        m_obs = max(obs.max, MIN_M_OBS) if obs is not None else MIN_M_OBS
    try:
        return FitConfig(
            model=model.id,
            max_iter=args.max_iter,
            tol=args.tol,
            starts=args.starts,
            dt=args.dt,
            trunc=TruncationConfig(n_state=args.trunc_n, m_obs=m_obs),
            seed=args.seed,
            init_method=args.init_method,
            init_paths=args.init_paths,
            init_steps=args.init_steps,
        )
    except ValidationError as exc:
        raise ConfigError(f"Invalid fit configuration: {exc}") from exc


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out) if args.out else OUTPUT_DIR / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args: argparse.Namespace, **extra: Any) -> files.RunManifest:
    config = {k: v for k, v in vars(args).items() if k != "handler"}
    config.update(extra)
    return files.RunManifest(subcommand=args.command, config=config, seed=getattr(args, "seed", None))


def _moment_table(summary: dict[str, tuple[float, float]]) -> dict[str, dict[str, float]]:
    return {name: {"mean": mean, "half_width": half} for name, (mean, half) in summary.items()}


def _initial(args: argparse.Namespace, model: CompartmentModel) -> EIState:
    return model.initial_state(args.e0, args.i0)


def cmd_simulate(args: argparse.Namespace) -> Iterator[str]:
    """Simulate one path and write its trajectory and observation series."""
    model = ModelRegistry.require(args.model)
    params = resolve_params(args, model)
    out = _out_dir(args)
    manifest = _manifest(args, rates=params.as_dict())

    yield f"[STEP 1/2] Simulating model {model.id} up to t={args.horizon}..."
    traj = simulate(params, _initial(args, model), args.horizon, args.seed)
    _, obs = skeleton_sample(traj, args.dt)
    yield f"  [OK] {len(traj)} events, {traj.cumulative_isolations} isolations"

    yield "[STEP 2/2] Writing files..."
    manifest.outputs.append(str(files.write_trajectory(out / "trajectory.csv", traj)))
    manifest.outputs.append(str(files.write_observations(out / "observations.csv", obs)))
    yield f"  [OK] {len(obs)} observation windows written to {out}"
    manifest.finish(out)


def cmd_observe(args: argparse.Namespace) -> Iterator[str]:
    """Cut a stored trajectory into observation windows."""
    traj = files.read_trajectory(args.trajectory)
    out = _out_dir(args)
    manifest = _manifest(args)
    _, obs = skeleton_sample(traj, args.dt)
    manifest.outputs.append(str(files.write_observations(out / "observations.csv", obs)))
    yield f"[OK] {len(obs)} windows, {obs.total} isolations written to {out}"
    manifest.finish(out)


def cmd_moments(args: argparse.Namespace) -> Iterator[str]:
    """Closed-form limit moments, optionally with Monte Carlo moments and plug-in estimates."""
    model = ModelRegistry.require(args.model)
    params = resolve_params(args, model)
    out = _out_dir(args)
    manifest = _manifest(args, rates=params.as_dict())
    document: dict[str, Any] = {"model": model.id, "params": params.as_dict()}

    yield "[STEP] Closed-form limit moments..."
    limits = model.limit_moments(params).as_dict()
    document["limit"] = limits
    for name, value in limits.items():
        yield f"  {name:<8} {value:.6g}"

    if args.curve:
        curve = solve_moment_odes(params, _initial(args, model), args.horizon)
        manifest.outputs.append(str(files.write_frame(out / "moment_curve.csv", curve.to_frame())))
        yield f"  [OK] Moment curve to t={args.horizon} written"

    if args.mc:
        yield f"[STEP] Monte Carlo moments ({args.n_mc} replicas, H={args.horizon})..."
        mc = mc_moments(params, _initial(args, model), args.horizon, args.n_mc, args.seed, args.workers)
        estimates = mc.estimates()
        document["monte_carlo"] = _moment_table(estimates)
        for name, (mean, half) in estimates.items():
            yield f"  {name:<8} {mean:.6g} +/- {half:.2g}"
        if args.plugin:
            if not isinstance(params, ModelParams):
                raise ConfigError("Plug-in estimates are only defined for the exposed-infected model")
            point = LimitMoments(
                e_star=estimates["E"][0],
                i_star=estimates["I"][0],
                r_star=estimates["EI"][0],
                n_star=estimates["N"][0],
            )
            estimate = plugin_estimate(point, mc.n_star_samples)
            document["plugin"] = estimate.to_document()
            yield "[STEP] Plug-in parameter estimates..."
            for name, value in estimate.params.items():
                lo, hi = estimate.ci.get(name, (float("nan"), float("nan")))
                yield f"  {name:<8} {value:.6g}  [{lo:.6g}, {hi:.6g}]"

    manifest.outputs.append(str(files.write_json(out / "moments.json", document)))
    yield f"[OK] Report written to {out}"
    manifest.finish(out)


def cmd_skeleton(args: argparse.Namespace) -> Iterator[str]:
    """Estimate (or solve for) the truncated skeleton and emissions, optionally sampling the chain."""
    model = ModelRegistry.require(args.model)
    params = resolve_params(args, model)
    trunc = TruncationConfig(n_state=args.trunc_n, m_obs=args.trunc_m or MIN_M_OBS)
    out = _out_dir(args)
    manifest = _manifest(args, rates=params.as_dict())

    if args.oracle:
        yield "[STEP 1/3] Solving the master equations..."
        skeleton, psi = oracle_skeleton(params, trunc, args.dt)
    else:
        yield f"[STEP 1/3] Estimating from {args.n_mc} paths of {args.steps} windows..."
        skeleton, psi = estimate_skeleton(
            params, trunc, args.dt, args.n_mc, args.seed, steps=args.steps, workers=args.workers
        )
    yield f"  [OK] {skeleton.size} states, emissions up to M={psi.m_obs}"

    yield "[STEP 2/3] Writing tables..."
    h = build_hmm(skeleton, psi, stationary_distribution(skeleton))
    manifest.outputs.append(str(files.write_frame(out / "skeleton.csv", skeleton.to_frame())))
    manifest.outputs.append(str(files.write_frame(out / "emission.csv", psi.to_frame())))
    manifest.outputs.append(str(files.write_json(out / "hmm.json", files.hmm_container(h))))

    document: dict[str, Any] = {}
    if args.sample_steps:
        yield f"[STEP 3/3] Sampling the chain for {args.sample_steps} steps..."
        sample = simulate_skeleton(skeleton, psi, steps=args.sample_steps, seed=args.seed)
        summary = sample.summary()
        document["chain"] = _moment_table(summary)
        for name, (mean, half) in summary.items():
            yield f"  {name:<4} {mean:.6g} +/- {half:.2g}"
    if args.endpoint_samples:
        yield f"[STEP 3/3] Drawing {args.endpoint_samples} endpoints after {args.endpoint_steps} steps..."
        ends = sample_endpoints(skeleton, args.endpoint_steps, args.endpoint_samples, seed=args.seed)
        summary = ends.summary()
        document["endpoints"] = _moment_table(summary)
        for name, (mean, half) in summary.items():
            yield f"  {name:<4} {mean:.6g} +/- {half:.2g}"
    if document:
        manifest.outputs.append(str(files.write_json(out / "skeleton_report.json", document)))
    yield f"[OK] Skeleton written to {out}"
    manifest.finish(out)


def _load_obs(args: argparse.Namespace) -> ObservationSeries:
    obs = files.read_observations(args.obs, args.dt)
    if len(obs) == 0:
        raise ConfigError(f"No observations in {args.obs}")
    return obs


def cmd_fit(args: argparse.Namespace) -> Iterator[str]:
    """Multi-start Baum-Welch on an observation file."""
    model = ModelRegistry.require(args.model)
    obs = _load_obs(args)
    cfg = fit_config(args, model, obs)
    out = _out_dir(args)
    manifest = _manifest(args, model_info=model.to_dict(cfg.init_ranges), fit_config=cfg.model_dump())

    yield f"[STEP 1/2] Fitting {cfg.starts} starts on {len(obs)} windows..."
    result = fit(obs, cfg, args.workers)
    for start in result.starts:
        if start.error:
            yield f"  [WARNING] start {start.index}: {start.error}"
        else:
            state = "converged" if start.converged else "stopped"
            yield f"  start {start.index}: {start.final_log_likelihood:.6f} ({state} after {start.iterations})"

    yield "[STEP 2/2] Writing the fitted model..."
    manifest.outputs.append(str(files.write_json(out / "fit.json", result.to_report())))
    manifest.outputs.append(str(files.write_json(out / "hmm.json", files.hmm_container(result.best))))
    yield f"[OK] Best start {result.best_index}, log-likelihood {result.log_likelihood:.6f}"
    manifest.finish(out)


def _truth(args: argparse.Namespace) -> tuple[RateParams, EIState]:
    truth_model = ModelRegistry.require(args.truth_model)
    return resolve_params(args, truth_model), _initial(args, truth_model)


def _batch(args: argparse.Namespace, mode: str) -> Iterator[str]:
    model = ModelRegistry.require(args.model)
    truth, initial = _truth(args)
    cfg = fit_config(args, model, None)
    out = _out_dir(args)
    extra = {"model_info": model.to_dict(cfg.init_ranges)} if mode == "estimate" else {}
    manifest = _manifest(args, truth=truth.as_dict(), fit_config=cfg.model_dump(), **extra)

    yield f"[STEP 1/2] {args.replications} replications of H={args.horizon} from model {args.truth_model}..."
    batch = run_replications(
        truth, initial, args.horizon, cfg, args.replications, args.seed,
        mode=mode, chain_steps=args.chain_steps, workers=args.workers,
    )
    failed = batch.rows["error"].notna().sum()
    if failed:
        yield f"  [WARNING] {failed} fits failed"

    yield "[STEP 2/2] Writing replication tables..."
    summary = batch.summary()
    manifest.outputs.append(str(files.write_frame(out / "replications.csv", batch.rows)))
    manifest.outputs.append(str(files.write_frame(out / "summary.csv", summary)))
    text = report.batch_summary(summary, batch.win_counts(), args.replications)
    (out / "summary.txt").write_text(text)
    manifest.outputs.append(str(out / "summary.txt"))
    for line in text.splitlines():
        yield f"  {line}"
    yield f"[OK] Results written to {out}"
    manifest.finish(out)


def cmd_estimate(args: argparse.Namespace) -> Iterator[str]:
    """Full pipeline: fit, simulate the fitted chain, invert its moments."""
    if args.replications:
        yield from _batch(args, "estimate")
        return
    model = ModelRegistry.require(args.model)
    obs = _load_obs(args)
    cfg = fit_config(args, model, obs)
    out = _out_dir(args)
    manifest = _manifest(args, model_info=model.to_dict(cfg.init_ranges), fit_config=cfg.model_dump())

    yield f"[STEP 1/2] Estimating {model.id} parameters from {len(obs)} windows..."
    result = estimate_parameters(obs, cfg, chain_steps=args.chain_steps, workers=args.workers)
    document = result.to_report()
    failures = [f"start {s.index}: {s.error}" for s in result.fit.failures]
    for line in failures:
        yield f"  [WARNING] {line}"

    yield "[STEP 2/2] Writing the estimate..."
    manifest.outputs.append(str(files.write_json(out / "estimate.json", document)))
    text = report.estimate_summary(document, failures)
    (out / "summary.txt").write_text(text)
    manifest.outputs.append(str(out / "summary.txt"))
    for name, value in document.params.items():
        yield f"  {name:<8} {value:.6g}"
    yield f"[OK] Estimate written to {out}"
    manifest.finish(out)


def cmd_select(args: argparse.Namespace) -> Iterator[str]:
    """BIC comparison of both models on one observation file, or over replications."""
    if args.replications:
        yield from _batch(args, "select")
        return
    model = ModelRegistry.require("ei")
    obs = _load_obs(args)
    cfg = fit_config(args, model, obs)
    out = _out_dir(args)
    manifest = _manifest(args, fit_config=cfg.model_dump())

    yield f"[STEP 1/2] Fitting both models to {len(obs)} windows..."
    selection = compare(obs, cfg, chain_steps=args.chain_steps, workers=args.workers)
    for f in selection.fits:
        if f.error:
            yield f"  [ERROR] model {f.model}: {f.error}"

    yield "[STEP 2/2] Writing the report..."
    manifest.outputs.append(str(files.write_json(out / "selection.json", selection)))
    text = report.selection_summary(selection)
    (out / "summary.txt").write_text(text)
    manifest.outputs.append(str(out / "summary.txt"))
    for line in text.splitlines():
        yield f"  {line}"
    yield f"[OK] Report written to {out}"
    manifest.finish(out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mchmm",
        description="Exposed-infected epidemic chains: simulation, HMM estimation and model selection",
    )
    parser.add_argument("--workers", type=int, help="Worker processes (default: MCHMM_THREADS or CPU count)")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        p.add_argument("--out", help="Output directory (default: $MCHMM_OUTPUT_DIR/<command>)")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        p.add_argument("--dt", type=float, default=DEFAULT_DT, help="Observation window")
        return p

    p = command("simulate", cmd_simulate, "Simulate a path and its observation windows")
    add_model_args(p)
    p.add_argument("--e0", type=int, default=0)
    p.add_argument("--i0", type=int, default=0)
    p.add_argument("--horizon", type=float, default=DEFAULT_HORIZON)

    p = command("observe", cmd_observe, "Turn a trajectory file into observation windows")
    p.add_argument("--trajectory", required=True)

    p = command("moments", cmd_moments, "Limit moments, Monte Carlo moments and plug-in estimates")
    add_model_args(p)
    p.add_argument("--e0", type=int, default=0)
    p.add_argument("--i0", type=int, default=0)
    p.add_argument("--horizon", type=float, default=DEFAULT_HORIZON)
    p.add_argument("--mc", action="store_true", help="Also estimate moments by simulation")
    p.add_argument("--n-mc", type=int, default=10_000)
    p.add_argument("--plugin", action="store_true", help="Invert the Monte Carlo moments")
    p.add_argument("--curve", action="store_true", help="Write the moment ODE solution")

    p = command("skeleton", cmd_skeleton, "Truncated skeleton and emission tables")
    add_model_args(p)
    p.add_argument("--trunc-n", type=int, default=DEFAULT_N_STATE)
    p.add_argument("--trunc-m", type=int)
    p.add_argument("--n-mc", type=int, default=INIT_PATHS)
    p.add_argument("--steps", type=int, default=INIT_STEPS)
    p.add_argument("--oracle", action="store_true", help="Solve the master equations instead of sampling")
    p.add_argument("--sample-steps", type=int, default=0, help="Simulate the chain and report its moments")
    p.add_argument("--endpoint-samples", type=int, default=0)
    p.add_argument("--endpoint-steps", type=int, default=100_000)

    p = command("fit", cmd_fit, "Multi-start Baum-Welch on an observation file")
    p.add_argument("--obs", required=True)
    p.add_argument("--model", default="ei")
    add_fit_args(p)

    for name, handler, help_text in (
        ("estimate", cmd_estimate, "Estimate rates from observations"),
        ("select", cmd_select, "Compare models by BIC"),
    ):
        p = command(name, handler, help_text)
        p.add_argument("--obs", help="Observation file (omit with --replications)")
        add_model_args(p)
        p.add_argument("--truth-model", default="ei", help="Model simulated by --replications")
        p.add_argument("--e0", type=int, default=0)
        p.add_argument("--i0", type=int, default=0)
        p.add_argument("--horizon", type=float, default=DEFAULT_HORIZON)
        p.add_argument("--replications", type=int, default=0, help="Simulate and fit this many datasets")
        add_fit_args(p)

    return parser


def check_args(args: argparse.Namespace) -> None:
    if args.command in ("estimate", "select") and not args.replications and not args.obs:
        raise ConfigError(f"{args.command} needs --obs or --replications")
