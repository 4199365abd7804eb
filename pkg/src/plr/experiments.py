"""Repeated split-corrupt-train-evaluate runs behind ``plr bench`` and ``plr scaling``."""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import datagen, report, trainer
from .numeric import derive_seed, make_rng

log_prefix = "[plr]"


@dataclass(frozen=True)
class DataSource:
    name: str
    csv: str
    schema: str

    @classmethod
    def bundled(cls, name: str) -> DataSource:
        csv, schema = datagen.bundled_paths(name)
        return cls(name, str(csv), str(schema))

    @classmethod
    def from_paths(cls, csv, schema, name: str | None = None) -> DataSource:
        return cls(name or Path(csv).stem, str(csv), str(schema))


@lru_cache(maxsize=8)
def load_table(source: DataSource) -> datagen.Table:
    return datagen.load_csv(source.csv, datagen.DatasetSchema.load(source.schema))


@dataclass(frozen=True)
class Grid:
    learning_rates: tuple[float, ...] = trainer.LEARNING_RATES
    huber_deltas: tuple[float, ...] = trainer.HUBER_DELTAS
    beta2s: tuple[float, ...] = trainer.PIDENT_BETA2S
    beta1: float = 0.5
    epochs: int = 1000
    batch_size: int = 256
    model_kind: str = "mlp"
    validation_metric: str = "partial_min"

    def configs(self, method: str, base_seed: int, repeat: int) -> list[trainer.TrainConfig]:
        grid = trainer.method_grid(
            method, self.learning_rates, self.huber_deltas, self.beta2s,
            model_kind=self.model_kind, epochs=self.epochs, batch_size=self.batch_size,
            beta1=self.beta1, validation_metric=self.validation_metric,
        )  # fmt: skip
        return [
            replace(cfg, seed=derive_seed(base_seed, i, repeat)) for i, cfg in enumerate(grid)
        ]


def data_seed(base_seed: int, repeat: int) -> int:
    return derive_seed(base_seed, 1_000_000 + repeat)


def prepare(source: DataSource, num_false: int, base_seed: int, repeat: int, corrupt_validation: bool = True):
    return datagen.make_splits(load_table(source), num_false, data_seed(base_seed, repeat), corrupt_validation)


def fit_and_score(method, grid: Grid, train, validation, test, base_seed, repeat):
    cfg, out = trainer.select(grid.configs(method, base_seed, repeat), train, validation)
    return cfg, out, trainer.evaluate(out.model, test, "true_labels")


# -- bench ------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialJob:
    source: DataSource
    method: str
    num_false: int
    repeat: int
    base_seed: int
    grid: Grid
    corrupt_validation: bool = True

    @property
    def trial_id(self):
        return (self.source.name, self.method, self.num_false, self.repeat)


def run_trial(job: TrialJob) -> report.TrialResult | dict:
    """One (dataset, method, |S_bar|, repeat) cell entry; a dict describes a failure."""
    t0 = time.perf_counter()
    try:
        tr, va, te = prepare(job.source, job.num_false, job.base_seed, job.repeat, job.corrupt_validation)
        cfg, out, mse = fit_and_score(job.method, job.grid, tr, va, te, job.base_seed, job.repeat)
    except (trainer.SelectionError, trainer.DivergenceError, ValueError) as e:
        return {"trial": list(job.trial_id), "error": f"{type(e).__name__}: {e}"}
    return report.TrialResult(
        dataset=job.source.name,
        method=job.method,
        num_false=job.num_false,
        seed=job.repeat,
        test_mse=mse,
        validation_metric=out.final_validation,
        runtime_seconds=time.perf_counter() - t0,
        selected={"learning_rate": cfg.learning_rate, "beta2": cfg.beta2, "huber_delta": cfg.huber_delta},
    )


def _pool_map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        yield from map(fn, items)
        return
    pool = ProcessPoolExecutor(max_workers=workers)
    try:
        # ordered map: the results store is written in job order whatever the worker count
        yield from pool.map(fn, items)
    finally:
        pool.shutdown(cancel_futures=True)


@dataclass
class BenchOutcome:
    run_dir: Path
    report: report.BenchReport
    new_trials: int
    failures: list = field(default_factory=list)
    empty_cells: list = field(default_factory=list)


def bench_jobs(sources, methods, num_falses, repeats, base_seed, grid, corrupt_validation=True) -> list[TrialJob]:
    return [
        TrialJob(src, m, int(k), r, base_seed, grid, corrupt_validation)
        for src in sources
        for k in num_falses
        for r in range(repeats)
        for m in methods
    ]


def run_bench(jobs: list[TrialJob], run_dir, workers: int = 1, metadata: dict | None = None, echo=None) -> BenchOutcome:
    """Run every job missing from ``run_dir/results.jsonl`` and refresh the report files."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    store = run_dir / "results.jsonl"
    done = {(t.dataset, t.method, t.num_false, t.seed) for t in report.read_results(store)}
    todo = [j for j in jobs if j.trial_id not in done]
    failures = []
    for res in _pool_map(run_trial, todo, workers):
        if isinstance(res, dict):
            failures.append(res)
            with open(run_dir / "failures.jsonl", "a") as fh:
                fh.write(json.dumps(res, sort_keys=True) + "\n")
            if echo:
                echo(f"{log_prefix} FAILED {res['trial']}: {res['error']}")
            continue
        report.append_results(store, [res])
        with open(run_dir / "timings.jsonl", "a") as fh:
            fh.write(json.dumps({"trial": list(res.trial_id), "seconds": res.runtime_seconds}) + "\n")
        if echo:
            echo(f"{log_prefix} {res.dataset} {res.method} |S_bar|={res.num_false} repeat={res.seed}: test MSE {res.test_mse:.4f}")

    wanted = {j.trial_id for j in jobs}
    trials = [t for t in report.read_results(store) if (t.dataset, t.method, t.num_false, t.seed) in wanted]
    cells = {(j.source.name, j.method, j.num_false) for j in jobs}
    have = {t.key for t in trials}
    empty = sorted(cells - have)
    rep = report.aggregate(trials, metadata) if trials else report.BenchReport({}, dict(metadata or {}))
    if trials:
        (run_dir / "report.md").write_text(report.render_table(rep, "markdown"))
        (run_dir / "report.csv").write_text(report.render_table(rep, "csv"))
        for name in sorted({d for d, _, _ in rep.cells}):
            (run_dir / f"{name}.svg").write_text(report.bench_chart(rep, name))
    return BenchOutcome(run_dir, rep, len(todo), failures, empty)


# -- scaling ----------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingJob:
    source: DataSource
    method: str
    num_false: int
    repeat: int
    fraction: float
    base_seed: int
    grid: Grid


def subsample(train: datagen.PartialDataset, fraction: float, seed: int) -> datagen.PartialDataset:
    """The first ``ceil(fraction * n)`` rows of a fixed permutation, so smaller fractions are nested in larger ones."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = len(train)
    perm = make_rng(seed, 3).permutation(n)
    return train.subset(np.sort(perm[: max(1, math.ceil(fraction * n - 1e-9))]))


def run_scaling_job(job: ScalingJob) -> float:
    tr, va, te = prepare(job.source, job.num_false, job.base_seed, job.repeat)
    sub = subsample(tr, job.fraction, data_seed(job.base_seed, job.repeat))
    _, _, mse = fit_and_score(job.method, job.grid, sub, va, te, job.base_seed, job.repeat)
    return mse


def run_scaling(source, method, num_false, fractions, repeats, base_seed, grid, workers=1):
    """Mean and std of test MSE per training fraction; returns ``(points, per_fraction_values)``."""
    fractions = [float(f) for f in fractions]
    for f in fractions:
        if not 0 < f <= 1:
            raise ValueError(f"fraction must lie in (0, 1], got {f}")
    jobs = [ScalingJob(source, method, int(num_false), r, f, base_seed, grid) for f in fractions for r in range(repeats)]
    values = list(_pool_map(run_scaling_job, jobs, workers))
    per = {}
    for job, v in zip(jobs, values):
        per.setdefault(job.fraction, []).append(v)
    points = []
    for f in fractions:
        vals = np.array(per[f])
        points.append((f, float(vals.mean()), float(vals.std(ddof=1)) if vals.size > 1 else 0.0))
    return points, per
