"""Experiment runner: forward/inverse comparison tables, dimension scaling,
feature-layer ablations, per-iteration timing and field dumps.

Every experiment writes CSV files (one header line) under its output
directory as ``<experiment>/<problem>_<mapping>_<seed>.csv`` plus a
``summary.csv`` and a plain-text ``manifest.txt`` that records the config
hash and seeds. Columns named ``wall_s`` carry wall-clock time and are the
only non-reproducible values.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import jax
import jax.numpy as jnp
import numpy as np

from . import featmap as fm
from . import net as N
from . import pde as P
from . import train as T

__all__ = [
    "EvalReport",
    "MetricError",
    "DESK",
    "FAMILIES",
    "mapping_spec",
    "network_for",
    "train_config",
    "eval_points",
    "rel_l2",
    "residual_mse",
    "run_cell",
    "run_table1",
    "run_inverse",
    "run_scaling",
    "run_ablations",
    "run_timing",
    "dump_field",
    "summarize",
]

FAMILIES = ("identity", "be", "pe", "ff", "sf", "ct", "cg", "rbf", "rbf-p")
TABLE1_PROBLEMS = ("wave", "diffusion", "heat", "poisson", "burgers", "ns")
FOURIER_SIGMAS = (1.0, 5.0, 10.0)
SIGMA_DEFAULT = {"ff": 1.0, "pe": 10.0, "cg": 0.1}
POLY_DEFAULT = {"burgers": 10, "i-burgers": 10, "heat": 10}

# Collocation / boundary / observation counts for desk-scale runs: single-core
# budgets rule out the 10k-point library default for multi-seed sweeps.
DESK = {
    "wave": (128, 32, 0),
    "diffusion": (128, 32, 0),
    "heat": (256, 32, 0),
    "poisson": (256, 32, 0),
    "burgers": (256, 64, 0),
    "ns": (256, 32, 0),
    "poisson-nd": (128, 32, 0),
    "i-burgers": (256, 64, 1000),
    "i-lorenz": (128, 1, 100),
}


class MetricError(ValueError):
    """The requested metric needs a reference solution the problem lacks."""


@dataclass
class EvalReport:
    problem: str
    mapping: str
    seed: int
    rel_l2: float | None
    residual_mse: float
    bc_mse: float
    coeffs: dict = field(default_factory=dict)
    true_coeffs: dict = field(default_factory=dict)
    params_trainable: int = 0
    params_frozen: int = 0
    wall_s: float = 0.0
    status: str = "ok"
    note: str = ""

    ROW = ("problem", "mapping", "seed", "status", "rel_l2", "residual_mse", "bc_mse",
           "coeffs", "params_trainable", "params_frozen", "note", "wall_s")

    def row(self) -> list:
        num = lambda v: "" if v is None else repr(float(v))
        co = ";".join(f"{k}={v!r}" for k, v in sorted(self.coeffs.items()))
        return [self.problem, self.mapping, self.seed, self.status, num(self.rel_l2), num(self.residual_mse),
                num(self.bc_mse), co, self.params_trainable, self.params_frozen, self.note, f"{self.wall_s:.3f}"]

    def coeff_errors(self) -> dict:
        return {k: abs(self.coeffs[k] - v) / abs(v) for k, v in self.true_coeffs.items() if k in self.coeffs}


# ---------------------------------------------------------------------------
# configuration helpers


def _base_name(problem: str) -> str:
    return "poisson-nd" if problem.startswith("poisson-nd") else problem


def mapping_spec(family: str, problem: P.PdeProblem, width: int = 128, sigma: float | None = None,
                 k_poly: int | None = None, rbf_kind: str = "gaussian", m: int | None = None,
                 seed: int = 0) -> fm.FeatureMapSpec:
    """Default feature layer of a family for a problem (128 output features where possible)."""
    family = fm.Family(family).value
    kw = {"seed": seed}
    if family in SIGMA_DEFAULT or sigma is not None:
        kw["sigma"] = SIGMA_DEFAULT.get(family, 1.0) if sigma is None else float(sigma)
    if family in ("rbf", "rbf-p"):
        kw["rbf_kind"] = rbf_kind
    if family == "rbf-p":
        kw["k_poly"] = POLY_DEFAULT.get(problem.name, 20) if k_poly is None else int(k_poly)
    if family == "cg":
        # p^n grid of frequencies: pick p so the width stays near 128
        p = max(2, int(round(width ** (1.0 / problem.input_dim))))
        return fm.FeatureMapSpec(family="cg", m=p ** problem.input_dim if m is None else m, **kw)
    spec = fm.for_width(family, problem.input_dim, width, **kw)
    return spec if m is None else replace(spec, m=int(m))


def network_for(problem: P.PdeProblem, feature: fm.FeatureMapSpec, hidden=(50, 50, 50, 50)) -> N.NetworkSpec:
    return N.NetworkSpec(problem.input_dim, feature, tuple(hidden), problem.output_dim)


def train_config(problem: P.PdeProblem, seed: int = 0, **over) -> T.TrainConfig:
    n_r, n_bc, n_data = DESK[_base_name(problem.name)]
    base = dict(n_r=n_r, n_bc=n_bc, n_data=n_data, seed=seed)
    base.update({k: v for k, v in over.items() if v is not None})
    return T.TrainConfig(**base)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("PINN_FEATLAB_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# metrics


def eval_points(problem: P.PdeProblem, resolution: int | None = None) -> np.ndarray:
    """Fixed evaluation set: uniform grid for D <= 2, seeded Monte Carlo otherwise."""
    D = problem.input_dim
    lo, hi = problem.lo, problem.hi
    if D == 1:
        return np.linspace(lo[0], hi[0], resolution or 1024)[:, None]
    if D == 2:
        r = resolution or 256
        A, B = np.meshgrid(np.linspace(lo[0], hi[0], r), np.linspace(lo[1], hi[1], r), indexing="ij")
        X = np.stack([A.ravel(), B.ravel()], axis=1)
        return X[problem.inside(X)]
    n = resolution or min(50 ** D, 100_000)
    rng = np.random.default_rng([D, 7919])
    X = lo + (hi - lo) * rng.random((n, D))
    return X[problem.inside(X)]


def _rel(pred, ref) -> float:
    return float(np.linalg.norm(np.ravel(pred - ref)) / np.linalg.norm(np.ravel(ref)))


def rel_l2(spec: N.NetworkSpec, store: N.ParamStore, problem: P.PdeProblem, grid=None) -> float:
    """||u_theta - u_ref|| / ||u_ref|| over ``grid`` (default: :func:`eval_points`)."""
    if problem.reference is None:
        raise MetricError(f"{problem.name} has no reference solution; use residual_mse")
    X = eval_points(problem) if grid is None else np.asarray(grid, dtype=np.float64)
    ref = problem.reference(X)
    pred = N.predict(spec, store, X)
    return _rel(pred, ref)


def residual_mse(problem: P.PdeProblem, spec: N.NetworkSpec, store: N.ParamStore,
                 samples: P.SampleSet) -> tuple[float, float]:
    """(residual MSE, pooled boundary MSE) of a trained network on ``samples``."""
    batch = T.make_batch(problem, samples)
    X_r, bc, data, keys = batch.tree()
    dev = lambda a: jax.tree_util.tree_map(jnp.asarray, a)
    frozen = {k: jnp.asarray(v) for k, v in store.frozen.items()}
    r, b, _ = T.loss_parts(problem, spec, dict(store.slices), jnp.asarray(store.values), frozen,
                           dev(X_r), dev(bc), None, keys, problem.is_inverse)
    return float(r), float(b)


# ---------------------------------------------------------------------------
# single training cell


@dataclass(frozen=True)
class Cell:
    problem: str
    mapping: str
    seed: int
    iterations: int
    sigma: float | None = None
    k_poly: int | None = None
    rbf_kind: str = "gaussian"
    m: int | None = None
    noise_pct: float = 0.0
    mode: str = "even"
    lr: float | None = None
    lambda_r: float | None = None
    lambda_bc: float | None = None
    lambda_data: float | None = None
    n_r: int | None = None
    n_bc: int | None = None
    n_data: int | None = None
    resample_every: int | None = None
    tag: str = ""

    @property
    def label(self) -> str:
        return self.tag or self.mapping


def run_cell(cell: Cell, out_dir: str | Path | None = None, experiment: str = "cells") -> EvalReport:
    """Train one (problem, mapping, seed) combination and evaluate it."""
    problem = P.make_problem(cell.problem)
    feat = mapping_spec(cell.mapping, problem, sigma=cell.sigma, k_poly=cell.k_poly,
                        rbf_kind=cell.rbf_kind, m=cell.m)
    spec = network_for(problem, feat)
    cfg = train_config(problem, cell.seed, iterations=cell.iterations, noise_pct=cell.noise_pct, mode=cell.mode,
                       learning_rate=cell.lr, lambda_r=cell.lambda_r, lambda_bc=cell.lambda_bc,
                       lambda_data=cell.lambda_data, n_r=cell.n_r, n_bc=cell.n_bc, n_data=cell.n_data,
                       resample_every=cell.resample_every, log_every=min(500, max(cell.iterations, 1)))
    trainable, frozen = N.param_count(spec, len(problem.inverse_coeffs) if problem.is_inverse else 0)
    rep = EvalReport(cell.problem, cell.label, cell.seed, None, float("nan"), float("nan"),
                     true_coeffs=dict(problem.inverse_coeffs), params_trainable=trainable, params_frozen=frozen)
    t0 = time.perf_counter()
    try:
        store, trace = T.fit(problem, spec, cfg)
    except T.NumericalAbort as exc:
        rep.status, rep.note = "abort", str(exc)
        rep.wall_s = time.perf_counter() - t0
        return rep
    rep.wall_s = time.perf_counter() - t0
    eval_samples = P.sample(problem, 2048, 256, seed=10_000 + cell.seed)
    rep.residual_mse, rep.bc_mse = residual_mse(problem, spec, store, eval_samples)
    if problem.reference is not None:
        rep.rel_l2 = rel_l2(spec, store, problem)
    else:
        rep.note = "no reference solution: residual/BC MSE only, not comparable to field L2"
    rep.coeffs = trace.final_coeffs
    if out_dir is not None:
        d = Path(out_dir) / experiment
        d.mkdir(parents=True, exist_ok=True)
        trace.write_csv(d / f"{cell.problem}_{cell.label}_{cell.seed}.csv")
    return rep


def _run_cells(cells: list[Cell], out_dir, experiment: str, workers: int | None = None) -> list[EvalReport]:
    workers = _threads() if workers is None else workers
    if workers <= 1 or len(cells) <= 1:
        reps = [run_cell(c, out_dir, experiment) for c in cells]
    else:
        import multiprocessing as mp
        with ProcessPoolExecutor(max_workers=workers, mp_context=mp.get_context("spawn")) as ex:
            reps = list(ex.map(run_cell, cells, [out_dir] * len(cells), [experiment] * len(cells)))
    return sorted(reps, key=lambda r: (r.problem, r.mapping, r.seed))


# ---------------------------------------------------------------------------
# output helpers


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_manifest(d: Path, experiment: str, config: dict, seeds) -> None:
    d.mkdir(parents=True, exist_ok=True)
    files = sorted(p.name for p in d.glob("*.csv"))
    lines = [f"experiment {experiment}", f"config_hash {config_hash(config)}",
             f"seeds {' '.join(str(s) for s in seeds)}", f"config {json.dumps(config, sort_keys=True, default=str)}"]
    lines += [f"file {f}" for f in files]
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")


def summarize(reports: list[EvalReport], metric: str = "rel_l2") -> list[dict]:
    """Mean and standard deviation over seeds per (problem, mapping)."""
    groups: dict = {}
    for r in reports:
        groups.setdefault((r.problem, r.mapping), []).append(r)
    rows = []
    for (prob, mapping), reps in sorted(groups.items()):
        vals = [getattr(r, metric) for r in reps if r.status == "ok" and getattr(r, metric) is not None]
        rows.append({"problem": prob, "mapping": mapping, "n": len(vals), "failed": len(reps) - len(vals),
                     "mean": float(np.mean(vals)) if vals else float("nan"),
                     "std": float(np.std(vals)) if vals else float("nan"),
                     "seeds": [r.seed for r in reps]})
    return rows


def _write_reports(d: Path, reports: list[EvalReport]) -> None:
    """reports.csv (one row per cell) and summary.csv (mean/std over seeds).

    Problems without a reference solution are summarized by residual MSE.
    """
    _write_csv(d / "reports.csv", EvalReport.ROW, [r.row() for r in reports])
    has_ref = {r.problem for r in reports if r.rel_l2 is not None}
    rows = []
    for metric in ("rel_l2", "residual_mse"):
        for s in summarize(reports, metric):
            if (s["problem"] in has_ref) == (metric == "rel_l2"):
                rows.append([s["problem"], s["mapping"], metric, repr(s["mean"]), repr(s["std"]), s["n"], s["failed"]])
    rows.sort(key=lambda r: (r[0], r[1]))
    _write_csv(d / "summary.csv", ("problem", "mapping", "metric", "mean", "std", "n", "failed"), rows)


# ---------------------------------------------------------------------------
# experiments


def run_table1(problems=("diffusion", "burgers", "wave"), mappings=("pe", "ff", "rbf-p"), seeds=(0, 1, 2),
               iterations: int = 20000, out_dir=None, sigma_grid: bool = False, workers: int | None = None,
               **cell_kw) -> list[EvalReport]:
    """Forward comparison table: every (problem, mapping) trained for each seed.

    With ``sigma_grid`` the scale-parameterized Fourier maps (PE, FF) are run
    for each sigma in {1, 5, 10} and only the best mean cell is kept.
    """
    cells = []
    for prob in problems:
        for mp_ in mappings:
            sig = FOURIER_SIGMAS if sigma_grid and mp_ in ("pe", "ff") else (cell_kw.get("sigma"),)
            for s in sig:
                tag = f"{mp_}-s{s:g}" if sigma_grid and mp_ in ("pe", "ff") else ""
                kw = {**cell_kw, "sigma": s}
                cells += [Cell(prob, mp_, seed, iterations, tag=tag, **kw) for seed in seeds]
    reps = _run_cells(cells, out_dir, "table1", workers)
    if sigma_grid:
        reps = _best_sigma(reps)
    if out_dir is not None:
        d = Path(out_dir) / "table1"
        _write_reports(d, reps)
        _write_manifest(d, "table1", {"problems": problems, "mappings": mappings, "iterations": iterations,
                                      "sigma_grid": sigma_grid, **cell_kw}, seeds)
    return reps


def _best_sigma(reps: list[EvalReport]) -> list[EvalReport]:
    out, tuned = [], {}
    for s in summarize(reps):
        if "-s" in s["mapping"]:
            base = s["mapping"].split("-s")[0]
            key = (s["problem"], base)
            if key not in tuned or (np.nan_to_num(s["mean"], nan=np.inf) < tuned[key][1]):
                tuned[key] = (s["mapping"], np.nan_to_num(s["mean"], nan=np.inf))
    keep = {v[0] for v in tuned.values()}
    for r in reps:
        if "-s" not in r.mapping or r.mapping in keep:
            out.append(r)
    return out


def run_inverse(problems=("i-burgers", "i-lorenz"), mappings=("rbf-p",), seeds=(0,), iterations: int = 20000,
                noise: dict | None = None, out_dir=None, workers: int | None = None, **cell_kw) -> list[EvalReport]:
    """Coefficient recovery, clean and (if ``noise`` maps problem -> fraction) noisy."""
    noise = noise or {}
    cells = []
    for prob in problems:
        for mp_ in mappings:
            for seed in seeds:
                cells.append(Cell(prob, mp_, seed, iterations, **cell_kw))
                if noise.get(prob):
                    cells.append(Cell(prob, mp_, seed, iterations, noise_pct=noise[prob], tag=f"{mp_}-noisy",
                                      **cell_kw))
    reps = _run_cells(cells, out_dir, "inverse", workers)
    if out_dir is not None:
        d = Path(out_dir) / "inverse"
        _write_reports(d, reps)
        _write_manifest(d, "inverse", {"problems": problems, "mappings": mappings, "iterations": iterations,
                                       "noise": noise, **cell_kw}, seeds)
    return reps


def run_scaling(dims=range(1, 11), mode: str = "uneven", mappings=("ff", "rbf"), seeds=(0, 1, 2),
                iterations: int = 5000, out_dir=None, workers: int | None = None, **cell_kw) -> list[dict]:
    """nD Poisson error per dimension; returns curve rows (mapping, D, mean, std)."""
    cells = [Cell(f"poisson-nd{D}", mp_, seed, iterations, mode=mode, **cell_kw)
             for mp_ in mappings for D in dims for seed in seeds]
    reps = _run_cells(cells, out_dir, f"scaling-{mode}", workers)
    curve = []
    for s in summarize(reps):
        curve.append({"mapping": s["mapping"], "D": int(s["problem"][len("poisson-nd"):]),
                      "mean": s["mean"], "std": s["std"], "n": s["n"]})
    curve.sort(key=lambda c: (c["mapping"], c["D"]))
    if out_dir is not None:
        d = Path(out_dir) / f"scaling-{mode}"
        _write_reports(d, reps)
        _write_csv(d / "curve.csv", ("mapping", "D", "mean", "std", "n"),
                   [[c["mapping"], c["D"], repr(c["mean"]), repr(c["std"]), c["n"]] for c in curve])
        _write_manifest(d, f"scaling-{mode}", {"dims": list(dims), "mode": mode, "mappings": mappings,
                                                "iterations": iterations, **cell_kw}, seeds)
    return curve


ABLATIONS = {
    "rbf_count": ("m", (64, 128, 256)),
    "poly_count": ("k_poly", (5, 10, 15, 20)),
    "rbf_type": ("rbf_kind", ("cubic", "tps", "gaussian", "mq", "imq")),
}


def run_ablations(kind: str, problems=("diffusion",), seeds=(0,), iterations: int = 20000, out_dir=None,
                  workers: int | None = None, **cell_kw) -> list[EvalReport]:
    """Sweep one RBF-P setting: RBF count, polynomial count or radial kind."""
    if kind not in ABLATIONS:
        raise ValueError(f"unknown ablation {kind!r}; choose from {', '.join(ABLATIONS)}")
    attr, values = ABLATIONS[kind]
    cells = [Cell(prob, "rbf-p", seed, iterations, tag=f"rbf-p-{attr}{v}", **{**cell_kw, attr: v})
             for prob in problems for v in values for seed in seeds]
    reps = _run_cells(cells, out_dir, f"ablate-{kind}", workers)
    if out_dir is not None:
        d = Path(out_dir) / f"ablate-{kind}"
        _write_reports(d, reps)
        _write_manifest(d, f"ablate-{kind}", {"kind": kind, "problems": problems, "iterations": iterations,
                                               **cell_kw}, seeds)
    return reps


def run_timing(counts=(1000, 10000, 100000), mappings=("pe", "ff", "rbf", "rbf-p"), problem: str = "burgers",
               warmup: int = 5, repeats: int = 5, out_dir=None) -> list[dict]:
    """Median seconds per Adam iteration for each (mapping, interior sample count)."""
    prob = P.make_problem(problem)
    rows = []
    for mp_ in mappings:
        kw = {"k_poly": 20} if mp_ == "rbf-p" else {}
        spec = network_for(prob, mapping_spec(mp_, prob, **kw))
        for n in counts:
            cfg = T.TrainConfig(iterations=1, n_r=n, n_bc=max(1, n // 25), log_every=1)
            store = N.init_params(spec, 0)
            batch = T.make_batch(prob, P.sample(prob, cfg.n_r, cfg.n_bc, 0))
            X_r, bc, data, keys = batch.tree()
            run, _ = T._compiled(prob, spec, store, cfg, keys, False, 1)
            dev = lambda a: jax.tree_util.tree_map(jnp.asarray, a)
            frozen = {k: jnp.asarray(v) for k, v in store.frozen.items()}
            state = [jnp.asarray(store.values), jnp.zeros(store.size), jnp.zeros(store.size), jnp.asarray(0),
                     jnp.asarray(-1)]
            X_r, bc = dev(X_r), dev(bc)
            times = []
            for i in range(warmup + repeats):
                t0 = time.perf_counter()
                state = list(run(*state, frozen, X_r, bc, None))
                jax.block_until_ready(state[0])
                if i >= warmup:
                    times.append(time.perf_counter() - t0)
            rows.append({"mapping": mp_, "count": n, "seconds": float(np.median(times))})
    if out_dir is not None:
        d = Path(out_dir) / "timing"
        _write_csv(d / f"{problem}_timing.csv", ("mapping", "count", "wall_s"),
                   [[r["mapping"], r["count"], f"{r['seconds']:.6f}"] for r in rows])
        _write_manifest(d, "timing", {"counts": list(counts), "mappings": mappings, "problem": problem,
                                      "warmup": warmup, "repeats": repeats}, [0])
    return rows


def dump_field(spec: N.NetworkSpec, store: N.ParamStore, problem: P.PdeProblem, resolution: int = 101,
               path=None, t_slices=(0.0, 0.25, 0.5, 0.75, 1.0)) -> tuple[list[str], np.ndarray]:
    """Prediction on a regular grid (time slices for a third axis) with reference and error columns.

    Points outside the domain (holes, the back-step) are dropped. Returns
    ``(header, rows)`` and writes a CSV when ``path`` is given.
    """
    D = problem.input_dim
    if D > 3:
        raise ValueError("field dumps support at most three input axes")
    lo, hi = problem.lo, problem.hi
    axes = [np.linspace(lo[k], hi[k], resolution) for k in range(min(D, 2))]
    if D == 3:
        axes.append(lo[2] + (hi[2] - lo[2]) * np.asarray(t_slices, dtype=np.float64))
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([g.ravel() for g in mesh], axis=1)
    X = X[problem.inside(X)]
    U = N.predict(spec, store, X)
    names = list(problem.axis_names)
    outs = ["u"] if problem.output_dim == 1 else [f"u{c}" for c in range(problem.output_dim)]
    cols = [X, U]
    header = names + [f"{o}_pred" for o in outs]
    if problem.reference is not None:
        R = problem.reference(X)
        cols += [R, np.abs(U - R)]
        header += [f"{o}_ref" for o in outs] + [f"{o}_abs_err" for o in outs]
    rows = np.concatenate(cols, axis=1)
    if path is not None:
        _write_csv(Path(path), header, [[repr(float(v)) for v in r] for r in rows])
    return header, rows
