import argparse
import json
import logging
import os
import sys
import traceback
from typing import List, Optional

import numpy as np

from hint.config import RunConfig, load_run_config, problem_preset, settings
from hint.errors import EXIT_NUMERIC, EXIT_OK, ConfigError, HintError, exit_code_for
from hint.models.checkpoint import CheckpointModel, read_checkpoint
from hint.models.experiment import ExperimentModel
from hint.models.metrics import MetricsModel, epoch_rows
from hint.models.sample_set import SampleSetModel
from hint.services.benchmark_service import BenchmarkService
from hint.services.convergence_service import convergence_study
from hint.services.coupling_service import build_inn_map
from hint.services.dynamics_service import linear_gaussian_problem, make_experiment
from hint.services.hint_service import build_hint_map
from hint.services.posterior_service import sample_posterior_case1, sample_posterior_case2, sample_posterior_hint
from hint.services.transport_service import TrainingService, sample_joint
from hint.services.verification_service import run_verification

logger = logging.getLogger(__name__)


def _parse_floats(text: Optional[str]) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"Could not parse observation {text!r}: {e}") from e


def _parse_ints(text: str, option: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"Could not parse {option} {text!r}: {e}") from e


def _observation(args, config: RunConfig, meta) -> Optional[np.ndarray]:
    """Observation from --observation, then problem.observation, then the checkpoint metadata"""
    y = _parse_floats(args.observation) or config.problem.observation or meta.get("observation")
    if y is None:
        return None
    y = np.asarray(y, dtype=np.float64)
    expected = meta.get("dim_y")
    if expected is not None and y.shape != (expected,):
        raise ConfigError(f"Observation has {y.size} entries, the checkpoint expects {expected}")
    return y


def _write_json(directory: str, name: str, document) -> str:
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, f"{name}.json")
    with open(path, "w") as f:
        json.dump(document, f, indent=2, default=float)
    return path


def _problem(config: RunConfig, rng: np.random.Generator):
    if config.problem.kind == "linear-gaussian":
        return linear_gaussian_problem(config.problem)
    return make_experiment(config.problem, rng).first_step_problem()


def cmd_train(args, config: RunConfig, rng: np.random.Generator) -> int:
    problem = _problem(config, rng)
    case = "case3" if config.training.case == "sequential" else config.training.case
    arch = config.architecture
    observed_y = None
    if case == "case3" and arch.kind == "hint":
        tmap = build_hint_map(problem.dim_y, problem.dim_x, arch, rng)
    elif case == "case3":
        tmap = build_inn_map(problem.dim_y + problem.dim_x, arch, rng)
    else:
        tmap = build_inn_map(problem.dim_x, arch, rng)
    if case == "case2":
        observed_y = np.asarray(config.problem.observation if config.problem.observation is not None else sample_joint(problem, rng)[: problem.dim_y])

    report = TrainingService(config.training).fit(tmap, problem, rng, observed_y=observed_y, case=case, seed=args.seed)
    metadata = {
        "case": case,
        "seed": args.seed,
        "epochs": len(report.losses),
        "final_loss": report.final_loss,
        "dim_y": problem.dim_y,
        "dim_x": problem.dim_x,
        "problem": config.problem.kind,
        "observation": None if observed_y is None else observed_y.tolist(),
        "hidden_layers": arch.hidden_layers,
        "width_factor": arch.width_factor,
        "mixing": arch.mixing,
        "f_evaluations": report.f_evaluations,
    }
    meta = CheckpointModel(os.path.join(args.out, "checkpoints")).save(tmap, args.name, metadata)
    MetricsModel(os.path.join(args.out, "metrics")).write(f"{args.name}_training", epoch_rows(report.losses))
    logger.info(f"Saved checkpoint {meta['id']} as {args.name} ({report.wall_time:.1f}s)")
    return EXIT_OK


def cmd_sample(args, config: RunConfig, rng: np.random.Generator) -> int:
    checkpoint = read_checkpoint(args.checkpoint)
    meta = checkpoint.metadata
    case = meta.get("case", "case3")
    y = _observation(args, config, meta)
    n = args.n or config.output.n_out
    if case == "case2":
        sample_set = sample_posterior_case2(checkpoint.map, n, rng, y, meta.get("id"))
    elif y is None:
        raise ConfigError("An observation is required: pass --observation or set problem.observation")
    elif case == "case1":
        sample_set = sample_posterior_case1(checkpoint.map, y, n, rng, meta.get("id"))
    else:
        sample_set = sample_posterior_hint(checkpoint.map, y, n, rng, meta.get("id"))
    path = SampleSetModel(os.path.join(args.out, "samples")).save(sample_set, args.name)
    logger.info(f"Wrote {len(sample_set)} samples to {path}")
    return EXIT_OK


def cmd_filter(args, config: RunConfig, rng: np.random.Generator) -> int:
    result = BenchmarkService(config).run_filter(rng)
    MetricsModel(os.path.join(args.out, "metrics")).write(f"{args.name}_steps", result["rows"])
    ExperimentModel(os.path.join(args.out, "experiments")).save(result["bundle"], args.name, args.seed)
    final = result["states"][-1]
    CheckpointModel(os.path.join(args.out, "checkpoints")).save(
        final.map, f"{args.name}_final", {"case": "case1" if config.filter.case == "case1" else "case3", "seed": args.seed, "step": final.t}
    )
    return EXIT_OK


def cmd_benchmark(args, config: RunConfig, rng: np.random.Generator) -> int:
    if config.problem.kind != args.kind:
        config.problem = problem_preset(args.kind)
    service = BenchmarkService(config)
    metrics = MetricsModel(os.path.join(args.out, "metrics"))
    name = f"benchmark_{args.kind}"
    if args.kind == "linear-gaussian":
        result = service.linear_gaussian(rng)
        metrics.write(f"{name}_cases", result["rows"])
        _write_json(args.out, name, result)
        return EXIT_OK
    result = service.clv(rng) if args.kind == "clv" else service.lorenz96(rng)
    metrics.write(f"{name}_epochs", result["epoch_rows"])
    if "rows" in result:
        metrics.write(f"{name}_steps", result["rows"])
    if args.kind == "clv" and args.sizes:
        comparison = service.clv_comparison(rng, _parse_ints(args.sizes, "--sizes"))
        metrics.write(f"{name}_mse_vs_n", comparison["mse_vs_n"])
        metrics.write(f"{name}_mse_vs_epoch", comparison["mse_vs_epoch"])
    ExperimentModel(os.path.join(args.out, "experiments")).save(result["bundle"], name, args.seed)
    _write_json(args.out, name, result["summary"])
    return EXIT_OK


def cmd_verify(args, config: RunConfig, rng: np.random.Generator) -> int:
    report = run_verification(rng)
    MetricsModel(os.path.join(args.out, "metrics")).write("verify", report.rows())
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_convergence(args, config: RunConfig, rng: np.random.Generator) -> int:
    problem = linear_gaussian_problem(config.problem)
    probes = rng.standard_normal((args.probes, problem.dim_y + problem.dim_x))
    n_list = _parse_ints(args.n_list, "--n-list")
    table = convergence_study(problem, config.architecture, config.training, n_list, args.replicates, probes, rng)
    MetricsModel(os.path.join(args.out, "metrics")).write("convergence", table.rows, ["N", "std", "max_std", "replicates", "epochs"])
    _write_json(args.out, "convergence", {"slope": table.slope, "within_band": table.within_band, "failures": table.failures})
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "filter": cmd_filter,
    "benchmark": cmd_benchmark,
    "verify": cmd_verify,
    "convergence": cmd_convergence,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hint", description="Hierarchical invertible neural transport for Bayesian inference")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=settings.SEED)
        p.add_argument("--out", default=settings.OUTPUT_DIR, help="output directory")
        return p

    p = common(sub.add_parser("train", help="train a transport map and save a checkpoint"))
    p.add_argument("--name", default="model")
    p = common(sub.add_parser("sample", help="draw posterior samples from a checkpoint"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--observation", default=None, help="comma-separated observation y")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--name", default="samples")
    p = common(sub.add_parser("filter", help="run sequential filtering on the configured experiment"))
    p.add_argument("--name", default="filter")
    p = common(sub.add_parser("benchmark", help="run a benchmark experiment"))
    p.add_argument("kind", choices=["clv", "lorenz96", "linear-gaussian"])
    p.add_argument("--sizes", default=None, help="comma-separated training set sizes for the CLV case1/case3 comparison")
    common(sub.add_parser("verify", help="run the invariant suite"))
    p = common(sub.add_parser("convergence", help="empirical convergence in the training-set size"))
    p.add_argument("--n-list", default="500,2000,8000")
    p.add_argument("--replicates", type=int, default=8)
    p.add_argument("--probes", type=int, default=16)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=settings.LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = load_run_config(args.config)
        rng = np.random.default_rng(args.seed)
        logger.info(f"Running {args.command} (seed={args.seed}, out={args.out})")
        return COMMANDS[args.command](args, config, rng)
    except (HintError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return exit_code_for(e)
    except Exception as e:
        traceback.print_exc()
        logger.error(f"{args.command} failed: {e}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
