"""Benchmark drivers: linear-Gaussian case comparison, filtering against references, CLV and Lorenz96."""
import copy
import dataclasses
import logging
import time
from typing import Dict, List, Optional

import numpy as np

from hint.config import FilterConfig, RunConfig, TrainingConfig, settings
from hint.errors import FilterStepError, ProblemError
from hint.services.coupling_service import build_inn_map
from hint.services.dynamics_service import (
    ExperimentBundle,
    linear_gaussian_problem,
    linear_gaussian_setup,
    make_clv_experiment,
    make_experiment,
    make_lorenz96_experiment,
)
from hint.services.hint_service import build_hint_map
from hint.services.oracle_service import (
    GaussianPosterior,
    bootstrap_filter,
    empirical_moments,
    kalman_filter,
    linear_gaussian_posterior,
    mse_trace_cov,
    relative_frobenius,
)
from hint.services.posterior_service import (
    sample_posterior_case1,
    sample_posterior_case2,
    sample_posterior_hint,
)
from hint.services.sequential_service import FilterState, assimilate, filter_run
from hint.services.transport_service import TrainingService, sample_joint

logger = logging.getLogger(__name__)

EVAL_SAMPLES = 2000


def smoothed(values, window: int = 5) -> np.ndarray:
    """Trailing moving average; the first window-1 entries average what is available"""
    values = np.asarray(values, dtype=np.float64)
    cumsum = np.cumsum(np.insert(values, 0, 0.0))
    out = np.empty_like(values)
    for i in range(len(values)):
        lo = max(0, i + 1 - window)
        out[i] = (cumsum[i + 1] - cumsum[lo]) / (i + 1 - lo)
    return out


class BenchmarkService:
    def __init__(self, config: RunConfig, progress: Optional[bool] = None):
        self.config = config
        self.progress = settings.PROGRESS if progress is None else progress
        self.training = TrainingService(config.training, self.progress)

    def _arch(self, kind: str):
        arch = copy.deepcopy(self.config.architecture)
        arch.kind = kind
        return arch

    def linear_gaussian(self, rng: np.random.Generator) -> Dict:
        """Train every applicable case on one linear-Gaussian problem and compare with the conjugate posterior"""
        pcfg = self.config.problem
        m, d = pcfg.dim_y, pcfg.dim_x
        A, mu0, cov0, _ = linear_gaussian_setup(pcfg)
        problem = linear_gaussian_problem(pcfg)
        if pcfg.observation is not None:
            y = np.asarray(pcfg.observation, dtype=np.float64)
        else:
            y = sample_joint(problem, rng)[:m]
        oracle = linear_gaussian_posterior(A, pcfg.sigma_y, mu0, cov0, y)
        n_out = self.config.output.n_out

        rows = []
        cases = ["case3", "case2"] + (["case1"] if m < d else [])
        for case in cases:
            start = time.time()
            f_before = problem.f_evaluations
            if case == "case3":
                tmap = build_hint_map(m, d, self._arch("hint"), rng)
                report = self.training.fit(tmap, problem, rng, case="case3")
                samples = sample_posterior_hint(tmap, y, n_out, rng)
            elif case == "case2":
                tmap = build_inn_map(d, self._arch("inn"), rng)
                report = self.training.fit(tmap, problem, rng, observed_y=y, case="case2")
                samples = sample_posterior_case2(tmap, n_out, rng, y)
            else:
                tmap = build_inn_map(d, self._arch("inn"), rng)
                report = self.training.fit(tmap, problem, rng, case="case1")
                samples = sample_posterior_case1(tmap, y, n_out, rng)
            mean, cov = empirical_moments(samples.samples)
            rows.append(
                {
                    "case": case,
                    "f_evaluations": problem.f_evaluations - f_before,
                    "f_offline": case != "case2",
                    "model_gradient": case == "case2",
                    "prior_density": case == "case2",
                    "observation_specific": case == "case2",
                    "final_loss": report.final_loss,
                    "mean_error": float(np.max(np.abs(mean - oracle.mean))),
                    "cov_rel_error": relative_frobenius(cov, oracle.covariance),
                    "wall_time": time.time() - start,
                }
            )
            logger.info(f"Linear-Gaussian {case}: mean error={rows[-1]['mean_error']:.4f}, cov error={rows[-1]['cov_rel_error']:.3f}")
        return {"observation": y.tolist(), "oracle_mean": oracle.mean.tolist(), "oracle_cov": oracle.covariance.tolist(), "rows": rows}

    def _reference(self, bundle: ExperimentBundle, rng: np.random.Generator) -> List[GaussianPosterior]:
        tp = bundle.problem
        if bundle.kind == "linear-gaussian":
            A, _, _, dyn = linear_gaussian_setup(self.config.problem)
            prior = GaussianPosterior(bundle.prior_mean, bundle.prior_cov)
            return kalman_filter(dyn, tp.sigma_x, A, tp.sigma_y, prior, bundle.observations)
        estimates = bootstrap_filter(tp, bundle.observations, bundle.init_prior_sampler, self.config.filter.reference_particles, rng, self.progress)
        return [GaussianPosterior(e.mean, e.covariance + 1e-12 * np.eye(tp.dim_x)) for e in estimates]

    def _step_rows(self, states: List[FilterState], reference: List[GaussianPosterior], bundle: ExperimentBundle) -> List[Dict]:
        rows = []
        for state, ref in zip(states, reference):
            row = dict(state.metrics[-1])
            row["ref_cov_trace"] = ref.trace()
            row["mean_error"] = float(np.max(np.abs(state.posterior_samples.mean(axis=0) - ref.mean)))
            row["trace_rel_error"] = abs(row["cov_trace"] - ref.trace()) / ref.trace()
            for i, value in enumerate(ref.mean):
                row[f"ref_mean_{i}"] = float(value)
            for i, value in enumerate(bundle.truth[state.t]):
                row[f"truth_{i}"] = float(value)
            rows.append(row)
        return rows

    def run_filter(self, rng: np.random.Generator) -> Dict:
        """Full filter run on the configured experiment, compared step by step with a reference filter"""
        bundle = make_experiment(self.config.problem, rng)
        states = filter_run(
            bundle.problem,
            bundle.observations,
            bundle.init_prior_sampler,
            self.config.training,
            rng,
            self.config.architecture,
            self.config.filter,
            self.progress,
        )
        reference = self._reference(bundle, rng)
        return {"bundle": bundle, "states": states, "rows": self._step_rows(states, reference, bundle)}

    def _first_step_with_curve(
        self,
        bundle: ExperimentBundle,
        rng: np.random.Generator,
        ref_trace: Optional[float],
        fcfg: Optional[FilterConfig] = None,
        train_cfg: Optional[TrainingConfig] = None,
    ):
        """Assimilate the first observation, recording loss and posterior trace after every epoch"""
        fcfg = fcfg or self.config.filter
        train_cfg = train_cfg or self.config.training
        y1 = bundle.observations[0]
        eval_rng = np.random.default_rng(int(rng.integers(2 ** 32)))
        curve = []

        def record(epoch, loss, tmap):
            if fcfg.case == "case1":
                samples = sample_posterior_case1(tmap, y1, EVAL_SAMPLES, eval_rng).samples
            else:
                samples = sample_posterior_hint(tmap, y1, EVAL_SAMPLES, eval_rng).samples
            trace = float(np.trace(np.atleast_2d(np.cov(samples, rowvar=False))))
            row = {"epoch": epoch + 1, "loss": loss, "cov_trace": trace}
            if ref_trace is not None:
                row["mse_trace"] = mse_trace_cov([trace], ref_trace)
            curve.append(row)

        state = FilterState(0, bundle.init_prior_sampler(rng, fcfg.n_particles))
        try:
            state = assimilate(state, bundle.problem, y1, train_cfg, rng, self.config.architecture, fcfg, callback=record, progress=self.progress)
        except Exception as e:
            raise FilterStepError(1, e) from e
        return state, curve

    def clv(self, rng: np.random.Generator) -> Dict:
        bundle = make_clv_experiment(self.config.problem, rng)
        reference = self._reference(bundle, rng)
        state, curve = self._first_step_with_curve(bundle, rng, reference[0].trace())
        states = [state]
        for step, y_t in enumerate(bundle.observations[1:], start=2):
            try:
                state = assimilate(state, bundle.problem, y_t, self.config.training, rng, self.config.architecture, self.config.filter, progress=False)
            except Exception as e:
                raise FilterStepError(step, e) from e
            states.append(state)
        losses = [row["loss"] for row in curve]
        summary = {
            "loss_smoothed_decreasing": bool(np.all(np.diff(smoothed(losses)) < 0)) if len(losses) > 1 else None,
            "mse_first": curve[0]["mse_trace"] if curve else None,
            "mse_last": curve[-1]["mse_trace"] if curve else None,
        }
        if curve and curve[0]["mse_trace"] > 0:
            summary["mse_reduction"] = 1.0 - curve[-1]["mse_trace"] / curve[0]["mse_trace"]
        logger.info(f"CLV benchmark finished: {summary}")
        return {"bundle": bundle, "epoch_rows": curve, "rows": self._step_rows(states, reference, bundle), "summary": summary}

    def clv_comparison(self, rng: np.random.Generator, sizes: Optional[List[int]] = None) -> Dict:
        """First CLV assimilation with the flat INN (case1) and HINT (case3) over a sweep of training set sizes.

        Every run conditions on the same observation and is scored against the same
        particle-filter reference; the last state component is tracked unless
        filter.track_index says otherwise.
        """
        bundle = make_clv_experiment(self.config.problem, rng)
        reference = self._reference(bundle, rng)
        ref = reference[0]
        sizes = sizes or [self.config.training.train_set_size]
        if any(n < 1 for n in sizes):
            raise ProblemError(f"Training set sizes must be >= 1, got {sizes}")
        track = self.config.filter.track_index
        track = bundle.problem.dim_x - 1 if track is None else track

        by_n, by_epoch = [], []
        for case in ("case1", "case3"):
            fcfg = dataclasses.replace(self.config.filter, case=case, track_index=track)
            for n in sizes:
                train_cfg = dataclasses.replace(self.config.training, train_set_size=int(n))
                state, curve = self._first_step_with_curve(bundle, rng, ref.trace(), fcfg, train_cfg)
                record = state.metrics[-1]
                by_n.append(
                    {
                        "case": case,
                        "N": int(n),
                        "epochs": record["epochs"],
                        "final_loss": record["final_loss"],
                        "cov_trace": record["cov_trace"],
                        "mse_trace": mse_trace_cov([record["cov_trace"]], ref.trace()),
                        "tracked_mean": record["tracked_mean"],
                        "tracked_std": record["tracked_std"],
                        "ref_tracked_mean": float(ref.mean[track]),
                        "ref_tracked_std": float(np.sqrt(ref.covariance[track, track])),
                        "truth_tracked": float(bundle.truth[1][track]),
                    }
                )
                by_epoch.extend({"case": case, "N": int(n), **row} for row in curve)
                logger.info(f"CLV {case} N={n}: cov_trace={record['cov_trace']:.4g}, x{track + 1}={record['tracked_mean']:.4f}")
        return {"bundle": bundle, "mse_vs_n": by_n, "mse_vs_epoch": by_epoch}

    def lorenz96(self, rng: np.random.Generator) -> Dict:
        bundle = make_lorenz96_experiment(self.config.problem, rng)
        state, curve = self._first_step_with_curve(bundle, rng, None)
        # identity-map loss on the training set the first assimilation used
        baseline = state.metrics[-1]["identity_loss"]
        final = curve[-1]["loss"] if curve else None
        summary = {
            "baseline_loss": baseline,
            "final_loss": final,
            "finite": bool(all(np.isfinite(row["loss"]) for row in curve)),
            "improvement": None if final is None else 1.0 - final / baseline,
            "posterior_mean": state.posterior_samples.mean(axis=0).tolist(),
            "truth": bundle.truth[1].tolist(),
        }
        logger.info(f"Lorenz96 benchmark finished: baseline={baseline:.4f}, final={final}")
        return {"bundle": bundle, "epoch_rows": curve, "summary": summary}
