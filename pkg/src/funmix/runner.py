"""Run orchestration: configuration to design, engine dispatch and persisted output.

A run directory holds

* ``trace.csv`` plus ``responsibilities.csv``/``probabilities.csv`` (sampler),
  or ``variational.csv``, ``beta_cov*.csv`` and ``elbo.csv`` (variational),
* ``summary.csv``, ``membership.csv``, ``deciles.csv`` and ``ppc.csv``,
* ``config.txt`` (canonical config echo) and ``manifest.json`` (config,
  seed, data digest, engine metadata and wall-clock seconds).
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gibbs_normal, gibbs_zimp, io, vb_normal, vb_zimp
from .config import RunConfig
from .design import CovariateSpec, Dataset, DesignMatrix, build_design, from_simulated
from .errors import FunmixError
from .gibbs_normal import ChainConfig, NormalPrior
from .gibbs_zimp import ZimpPrior
from .simulate import ScenarioConfig, SimulatedDataset, generate
from .summary import FitSummary, Trace
from .vb_normal import VBConfig

log = logging.getLogger(__name__)

__version__ = "0.1.0"


@dataclass
class FitResult:
    summary: FitSummary
    design: DesignMatrix
    trace: Trace | None = None
    state: object = None


def covariate_specs(cfg: RunConfig, dataset: Dataset) -> dict:
    specs = {}
    for j in dataset.covariate_ids():
        if cfg.functional_model == "linear":
            specs[j] = CovariateSpec(K=cfg.basis_size("K", j), model="linear",
                                     placement=cfg.placement)
        else:
            specs[j] = CovariateSpec(K=cfg.basis_size("K2", j), model="nonlinear",
                                     K_value=cfg.basis_size("K1", j),
                                     placement=cfg.placement, clip=cfg.clip)
    return specs


def design_from_config(cfg: RunConfig, dataset: Dataset) -> DesignMatrix:
    return build_design(dataset, covariate_specs(cfg, dataset), cfg.standardize_curves)


def priors_from_config(cfg: RunConfig):
    common = dict(coef_df=cfg.coef_df, coef_scale=cfg.coef_scale,
                  intercept_scale=cfg.intercept_scale, autoscale=cfg.autoscale)
    if cfg.model == "normal":
        return NormalPrior(tau0_sq=cfg.tau0_sq, tau1_sq=cfg.tau1_sq, a0=cfg.a0, b0=cfg.b0,
                           link=cfg.link, **common)
    return ZimpPrior(a1=cfg.a1, b1=cfg.b1, a2=cfg.a2, b2=cfg.b2, **common)


def chain_config(cfg: RunConfig, seed=None) -> ChainConfig:
    return ChainConfig(cfg.iters, cfg.burnin, cfg.thin, cfg.seed if seed is None else seed,
                       cfg.linearize_at, cfg.metropolis)


def vb_config(cfg: RunConfig, seed=None) -> VBConfig:
    return VBConfig(cfg.max_sweeps, cfg.tol, cfg.seed if seed is None else seed,
                    cfg.refresh_scales, cfg.backtrack_steps)


def fit(cfg: RunConfig, dataset: Dataset, design: DesignMatrix | None = None) -> FitResult:
    """Fit one model with one engine; errors are re-raised with the run context."""
    design = design if design is not None else design_from_config(cfg, dataset)
    prior = priors_from_config(cfg)
    names = design.layout.names
    y = dataset.y
    try:
        if cfg.engine == "gibbs":
            if cfg.model == "normal":
                trace = gibbs_normal.run_chain(y, design.x, prior, chain_config(cfg), names)
                summary = gibbs_normal.summarize_chain(trace, y, cfg.level)
            else:
                trace = gibbs_zimp.run_chain_zimp(y, design.x, prior, chain_config(cfg), names)
                summary = gibbs_zimp.summarize_chain_zimp(trace, y, cfg.level)
            return FitResult(summary, design, trace=trace)
        if cfg.model == "normal":
            state, summary = vb_normal.run_cavi(y, design.x, prior, vb_config(cfg), names)
            summary = vb_normal.variational_summary(state, design.x, prior, names,
                                                    summary.elapsed, cfg.level)
        else:
            state, summary = vb_zimp.run_cavi_zimp(y, design.x, prior, vb_config(cfg), names)
            summary = vb_zimp.variational_summary_zimp(state, design.x, names,
                                                       summary.elapsed, cfg.level)
        return FitResult(summary, design, state=state)
    except FunmixError as exc:
        raise type(exc)(f"{cfg.model}/{cfg.engine} fit failed: {exc}") from exc


def summarize_trace(trace: Trace, y, level: float = 0.95) -> FitSummary:
    if trace.meta.get("model") == "zimp":
        return gibbs_zimp.summarize_chain_zimp(trace, y, level)
    return gibbs_normal.summarize_chain(trace, y, level)


def _save_variational(state, directory: Path) -> list:
    rows = []
    if isinstance(state, vb_normal.VBNormalState):
        rows = [("m0", state.m0), ("s0_sq", state.s0_sq), ("m1", state.m1),
                ("s1_sq", state.s1_sq), ("A0", state.A0), ("B0", state.B0)]
        blocks = [("", state.beta_mean, state.beta_cov)]
    else:
        rows = [("psi1", state.psi1), ("zeta1", state.zeta1), ("psi2", state.psi2),
                ("zeta2", state.zeta2)]
        blocks = [("1", state.mean1, state.cov1), ("2", state.mean2, state.cov2)]
    for tag, mean, _ in blocks:
        rows += [(f"beta{tag}_mean[{d}]", v) for d, v in enumerate(mean)]
    with open(directory / "variational.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "value"])
        for nm, v in rows:
            w.writerow([nm, io._fmt(v)])
    files = ["variational.csv"]
    for tag, _, cov in blocks:
        io._write_matrix(directory / f"beta_cov{tag}.csv",
                         [f"c{d}" for d in range(cov.shape[1])], cov)
        files.append(f"beta_cov{tag}.csv")
    io._write_matrix(directory / "elbo.csv", ["elbo"], [[v] for v in state.elbo_history])
    return files + ["elbo.csv"]


def save_run(result: FitResult, cfg: RunConfig, dataset: Dataset, out, data_path=None) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    if result.trace is not None:
        files += io.save_trace(result.trace, out, dataset.subject_ids)
        meta = dict(result.trace.meta)
    else:
        files += _save_variational(result.state, out)
        meta = dict(model=cfg.model, engine="vb", sweeps=len(result.state.elbo_history) - 1,
                    converged=bool(result.state.converged), elapsed=result.summary.elapsed)
    files += io.save_summary(result.summary, out, dataset.subject_ids)
    (out / "config.txt").write_text(cfg.to_text())
    files.append("config.txt")
    manifest = dict(version=__version__, config=cfg.as_dict(), seed=cfg.seed,
                    wall_clock_seconds=result.summary.elapsed, meta=meta,
                    layout=result.design.layout.names, files=sorted(files))
    if data_path is not None:
        manifest["data"] = str(Path(data_path).resolve())
        manifest["data_sha256"] = io.file_digest(data_path)
    io.write_manifest(out, manifest)
    return out


def run(cfg: RunConfig, data_path=None, out=None) -> FitResult:
    """Load the data named by ``data_path`` (or ``cfg.data``), fit and persist."""
    data_path = data_path or cfg.data
    if not data_path:
        raise FunmixError("no dataset given (use --data or the 'data' config key)")
    dataset = io.load_dataset(data_path)
    result = fit(cfg, dataset)
    save_run(result, cfg, dataset, out or cfg.output, data_path)
    return result


def simulate(cfg: RunConfig, seed=None) -> SimulatedDataset:
    scen = ScenarioConfig(cfg.scenario, cfg.model, cfg.n, cfg.base_n, cfg.mu0, cfg.mu1,
                          cfg.sigma2, cfg.lam1, cfg.lam2, cfg.zero_weights)
    return generate(scen, np.random.default_rng(cfg.seed if seed is None else seed))


def save_simulation(sim: SimulatedDataset, out) -> Path:
    """Dataset file for the simulated subjects plus their true labels and probabilities."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    io.save_dataset(from_simulated(sim), out / "data.csv")
    L = sim.probs.shape[1]
    with open(out / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "label"] + [f"p_{c}" for c in range(L)])
        for sid, g, p in zip(sim.subject_ids, sim.gamma, sim.probs):
            w.writerow([sid, int(g)] + [io._fmt(v) for v in p])
    return out / "data.csv"


# ---------------------------------------------------------------- benchmark

@dataclass
class BenchCell:
    model: str
    engine: str
    n: int
    elapsed: list
    extras: dict

    @property
    def mean_minutes(self) -> float:
        return float(np.mean(self.elapsed)) / 60.0

    @property
    def sd_minutes(self) -> float:
        if len(self.elapsed) < 2:
            return 0.0
        return float(np.std(self.elapsed, ddof=1)) / 60.0


def _default_engine(cfg: RunConfig, sim: SimulatedDataset, seed: int) -> tuple:
    """Fit one simulated replicate; returns wall-clock seconds and metrics."""
    from .simulate import metric_mse, metric_mr_normal, metric_mr_zimp
    dataset = from_simulated(sim)
    cfg = cfg.updated(seed=seed)
    start = time.perf_counter()
    result = fit(cfg, dataset)
    elapsed = time.perf_counter() - start
    m = result.summary.membership
    if cfg.model == "normal":
        extras = dict(mr=metric_mr_normal(sim.gamma, m), mse=metric_mse(sim.probs[:, 1], m),
                      mse_fitted=metric_mse(sim.probs[:, 1], result.summary.fitted))
    else:
        extras = dict(mr=metric_mr_zimp(sim.gamma, m), mse=metric_mse(sim.probs, m),
                      mse_fitted=metric_mse(sim.probs, result.summary.fitted))
    return elapsed, extras


def _bench_task(args):
    cfg, model, engine, n, rep, engine_fn = args
    sim_cfg = cfg.updated(model=model, engine=engine, n=n,
                          link="logit" if model == "zimp" else cfg.link)
    sim = simulate(sim_cfg, seed=cfg.seed + rep)
    fn = engine_fn or _default_engine
    return (model, engine, n), fn(sim_cfg, sim, cfg.seed + rep)


def bench(cfg: RunConfig, engine_fn=None) -> list:
    """Timing grid over ``bench_models x bench_engines x bench_sizes``.

    Each cell fits ``bench_reps`` replicates (replicate ``r`` uses seed
    ``seed + r`` for both data and engine, so engines see the same data).
    ``engine_fn(cfg, sim, seed) -> (seconds, extras)`` replaces the real
    fit, which tests use for stub engines.  Cells run in a process pool of
    ``threads`` workers (serially for ``threads = 1``).
    """
    tasks = [(cfg, m, e, n, r, engine_fn)
             for m in cfg.bench_models for n in cfg.bench_sizes
             for e in cfg.bench_engines for r in range(cfg.bench_reps)]
    if cfg.threads > 1 and engine_fn is None:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_bench_task, tasks))
    else:
        results = [_bench_task(t) for t in tasks]
    cells = {}
    for key, (elapsed, extras) in results:
        cell = cells.setdefault(key, BenchCell(*key, [], {}))
        cell.elapsed.append(float(elapsed))
        for k, v in extras.items():
            cell.extras.setdefault(k, []).append(v)
    out = [cells[(m, e, n)] for m in cfg.bench_models for n in cfg.bench_sizes
           for e in cfg.bench_engines]
    _check_ordering(out)
    return out


def _check_ordering(cells):
    by = {(c.model, c.n, c.engine): c for c in cells}
    for (model, n, engine), c in by.items():
        other = by.get((model, n, "gibbs"))
        if engine == "vb" and other is not None and not c.mean_minutes < other.mean_minutes:
            log.warning("VB is not faster than MCMC for %s, n=%d (%.3g vs %.3g min)",
                        model, n, c.mean_minutes, other.mean_minutes)


def format_bench(cells) -> str:
    """Plain-text table: one row per cell with mean and sd of minutes."""
    extra_keys = sorted({k for c in cells for k in c.extras})
    head = ["model", "engine", "n", "reps", "mean_min", "sd_min"] + extra_keys
    rows = [head]
    for c in cells:
        rows.append([c.model, c.engine, str(c.n), str(len(c.elapsed)),
                     f"{c.mean_minutes:.4f}", f"{c.sd_minutes:.4f}"]
                    + [f"{np.mean(c.extras[k]):.4f}" if k in c.extras else "" for k in extra_keys])
    widths = [max(len(r[k]) for r in rows) for k in range(len(head))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows) + "\n"


def save_bench(cells, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bench.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "engine", "n", "reps", "mean_minutes", "sd_minutes"])
        for c in cells:
            w.writerow([c.model, c.engine, c.n, len(c.elapsed), io._fmt(c.mean_minutes),
                        io._fmt(c.sd_minutes)])
    (out / "bench.txt").write_text(format_bench(cells))
    return out / "bench.csv"
