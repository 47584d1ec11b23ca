"""Composite PINN loss, a hand-written Adam, and the training loop.

Two evaluation routes for the loss exist. :func:`loss` builds a scalar
expression graph (slow, used to cross-check), while :func:`loss_parts`
evaluates the same quantity in batched jet arithmetic and is what
:func:`fit` differentiates with :func:`jax.grad`.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field, fields

import jax
import jax.numpy as jnp
import numpy as np

from . import autodiff as ad
from . import jet as J
from . import net as N
from . import pde as P

__all__ = [
    "TrainConfig",
    "TrainTrace",
    "AdamState",
    "NumericalAbort",
    "Batch",
    "make_batch",
    "loss",
    "loss_parts",
    "adam_step",
    "fit",
]


class NumericalAbort(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


@dataclass
class TrainConfig:
    iterations: int = 20000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_r: float = 1.0
    lambda_bc: float = 1.0
    lambda_data: float = 1.0
    resample_every: int = 0
    seed: int = 0
    n_r: int = 10000
    n_bc: int = 400
    n_data: int = 0
    noise_pct: float = 0.0
    mode: str = "even"
    log_every: int = 500

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        for name in ("lambda_r", "lambda_bc", "lambda_data", "learning_rate", "noise_pct"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.n_r < 1 or self.n_bc < 1 or self.log_every < 1 or self.resample_every < 0:
            raise ValueError("sample counts and log period must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown train keys: {sorted(bad)}")
        return cls(**d)


@dataclass
class TrainTrace:
    coeff_names: tuple[str, ...] = ()
    rows: list[tuple] = field(default_factory=list)

    COLUMNS = ("iteration", "loss", "loss_r", "loss_bc", "loss_data")

    def record(self, it, parts, coeffs, wall):
        if self.rows and it <= self.rows[-1][0]:
            raise ValueError("trace iterations must increase")
        self.rows.append((int(it), *map(float, parts), *map(float, coeffs), float(wall)))

    @property
    def header(self) -> list[str]:
        return [*self.COLUMNS, *self.coeff_names, "wall_s"]

    def column(self, name) -> np.ndarray:
        return np.array([r[self.header.index(name)] for r in self.rows])

    @property
    def final_coeffs(self) -> dict[str, float]:
        if not self.rows:
            return {}
        k = len(self.COLUMNS)
        return dict(zip(self.coeff_names, self.rows[-1][k:k + len(self.coeff_names)]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header)
            for r in self.rows:
                w.writerow([r[0], *(repr(v) for v in r[1:])])


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, cfg: TrainConfig, state: AdamState):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    g = np.asarray(grads, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        bad = int(np.flatnonzero(~np.isfinite(g))[0])
        raise NumericalAbort(f"non-finite gradient at step {state.t + 1} (parameter index {bad})")
    t = state.t + 1
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * g * g
    mhat = m / (1 - cfg.beta1 ** t)
    vhat = v / (1 - cfg.beta2 ** t)
    new = np.asarray(params, dtype=np.float64) - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
    return new, AdamState(m, v, t)


# ---------------------------------------------------------------------------
# sample batches


@dataclass
class Batch:
    """Device-ready training arrays.

    Boundary points of all sets are pooled into one block per derivative
    order: ``bc_X[a]`` with targets ``bc_T[a]`` and component masks
    ``bc_M[a]`` of shape (n, output_dim), where ``a`` is ``None`` (values) or
    the input axis of a prescribed first derivative.
    """

    X_r: np.ndarray
    bc_X: dict
    bc_T: dict
    bc_M: dict
    n_bc: int
    data_X: np.ndarray | None = None
    data_U: np.ndarray | None = None

    def tree(self):
        keys = sorted(self.bc_X, key=lambda a: -1 if a is None else a)
        bc = tuple((self.bc_X[k], self.bc_T[k], self.bc_M[k]) for k in keys)
        data = None if self.data_X is None else (self.data_X, self.data_U)
        return self.X_r, bc, data, tuple(keys)


def make_batch(problem: P.PdeProblem, samples: P.SampleSet) -> Batch:
    if len(samples.interior) == 0:
        raise ValueError("empty interior sample set")
    groups: dict = {}
    n_bc = 0
    for bc in problem.bc_sets:
        Xb = samples.boundary.get(bc.name)
        if Xb is None or len(Xb) == 0:
            raise ValueError(f"no samples for boundary set {bc.name!r}")
        T = np.zeros((len(Xb), problem.output_dim))
        M = np.zeros_like(T)
        T[:, list(bc.components)] = bc.target(Xb)
        M[:, list(bc.components)] = 1.0
        groups.setdefault(bc.deriv_axis, []).append((Xb, T, M))
        n_bc += len(Xb)
    cat = lambda parts, i: np.concatenate([p[i] for p in parts])
    data = samples.data
    return Batch(
        X_r=np.asarray(samples.interior, dtype=np.float64),
        bc_X={a: cat(g, 0) for a, g in groups.items()},
        bc_T={a: cat(g, 1) for a, g in groups.items()},
        bc_M={a: cat(g, 2) for a, g in groups.items()},
        n_bc=n_bc,
        data_X=None if data is None else np.asarray(data[0], dtype=np.float64),
        data_U=None if data is None else np.asarray(data[1], dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# graph route


def loss(problem: P.PdeProblem, spec: N.NetworkSpec, store: N.ParamStore, samples: P.SampleSet,
         cfg: TrainConfig, graph: ad.ExprGraph, inverse: bool | None = None) -> ad.Node:
    """Composite loss as a single scalar node of ``graph``."""
    inverse = problem.is_inverse if inverse is None else inverse
    batch = make_batch(problem, samples)
    leaves = N.graph_params(store, graph)
    zero = graph.constant(0.0)

    res_sums = [zero] * problem.n_equations
    for i, x in enumerate(batch.X_r):
        for e, r in enumerate(P.residual(problem, spec, store, x, graph, leaves, inverse, tag=f"@r{i}")):
            res_sums[e] = res_sums[e] + r * r
    loss_r = zero
    for s in res_sums:
        loss_r = loss_r + s / float(len(batch.X_r))

    bc_sum = zero
    for axis, Xb in batch.bc_X.items():
        T, M = batch.bc_T[axis], batch.bc_M[axis]
        for i, x in enumerate(Xb):
            xs = [graph.input(f"{name}@b{axis}.{i}", float(v)) for name, v in zip(problem.axis_names, x)]
            outs = N.forward(spec, store, xs, graph, leaves)
            for c in range(problem.output_dim):
                if M[i, c] == 0:
                    continue
                pred = outs[c] if axis is None else ad.derive(graph, outs[c], xs[axis])
                diff = pred - float(T[i, c])
                bc_sum = bc_sum + diff * diff
    total = loss_r * cfg.lambda_r + bc_sum * (cfg.lambda_bc / batch.n_bc)

    if inverse and batch.data_X is not None:
        d_sum = zero
        for i, (x, u) in enumerate(zip(batch.data_X, batch.data_U)):
            xs = [graph.input(f"{name}@d{i}", float(v)) for name, v in zip(problem.axis_names, x)]
            outs = N.forward(spec, store, xs, graph, leaves)
            for c in range(problem.output_dim):
                diff = outs[c] - float(u[c])
                d_sum = d_sum + diff * diff
        total = total + d_sum * (cfg.lambda_data / len(batch.data_X))
    return total


# ---------------------------------------------------------------------------
# jax route


def loss_parts(problem, spec, store_slices, theta, frozen, X_r, bc, data, bc_keys, inverse):
    """(loss_r, loss_bc, loss_data) from a flat parameter vector, jax-traceable."""
    params = {name: theta[off:off + (int(np.prod(shape)) if shape else 1)].reshape(shape)
              for name, (off, shape) in store_slices.items()}
    res = P.residual_jet(problem, spec, params, frozen, X_r, inverse)
    loss_r = sum(jnp.mean(r * r) for r in res)
    bc_sum = 0.0
    n_bc = 0
    for axis, (Xb, T, M) in zip(bc_keys, bc):
        first = () if axis is None else (axis,)
        out = N.forward_jet(spec, params, frozen, J.seed_inputs(Xb, first))
        pred = out.val if axis is None else out.d[axis]
        diff = (pred - T) * M
        bc_sum = bc_sum + jnp.sum(diff * diff)
        n_bc += Xb.shape[0]
    loss_bc = bc_sum / n_bc
    loss_data = jnp.asarray(0.0)
    if inverse and data is not None:
        Xd, Ud = data
        out = N.forward_jet(spec, params, frozen, J.seed_inputs(Xd, ()))
        diff = out.val - Ud
        loss_data = jnp.sum(diff * diff) / Xd.shape[0]
    return loss_r, loss_bc, loss_data


_STEP_CACHE: dict = {}


def _layout_key(store: N.ParamStore):
    return tuple((k, off, tuple(shape)) for k, (off, shape) in store.slices.items())


def _compiled(problem, spec, store, cfg, bc_keys, inverse, chunk):
    """Jitted chunk runner and loss evaluator, cached per configuration."""
    key = (problem.name, problem.input_dim, spec, _layout_key(store), bc_keys, inverse, chunk,
           cfg.lambda_r, cfg.lambda_bc, cfg.lambda_data, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    hit = _STEP_CACHE.get(key)
    if hit is not None:
        return hit
    slices = dict(store.slices)
    lam = (cfg.lambda_r, cfg.lambda_bc, cfg.lambda_data)

    def parts(theta, frozen, X_r, bc, data):
        return loss_parts(problem, spec, slices, theta, frozen, X_r, bc, data, bc_keys, inverse)

    def total(theta, frozen, X_r, bc, data):
        lr_, lb, ld = parts(theta, frozen, X_r, bc, data)
        return lam[0] * lr_ + lam[1] * lb + lam[2] * ld

    grad = jax.grad(total)
    b1, b2, eps, lr = cfg.beta1, cfg.beta2, cfg.eps, cfg.learning_rate

    def step(carry, _):
        theta, m, v, t, bad, frozen, X_r, bc, data = carry
        g = grad(theta, frozen, X_r, bc, data)
        ok = jnp.all(jnp.isfinite(g)) & (bad < 0)
        t1 = t + 1
        m1 = b1 * m + (1 - b1) * g
        v1 = b2 * v + (1 - b2) * g * g
        mhat = m1 / (1 - b1 ** t1)
        vhat = v1 / (1 - b2 ** t1)
        theta1 = theta - lr * mhat / (jnp.sqrt(vhat) + eps)
        keep = lambda new, old: jnp.where(ok, new, old)
        bad1 = jnp.where((bad < 0) & ~ok, t1, bad)
        return (keep(theta1, theta), keep(m1, m), keep(v1, v), jnp.where(ok, t1, t), bad1,
                frozen, X_r, bc, data), None

    @jax.jit
    def run(theta, m, v, t, bad, frozen, X_r, bc, data):
        carry, _ = jax.lax.scan(step, (theta, m, v, t, bad, frozen, X_r, bc, data), None, length=chunk)
        return carry[:5]

    evaluate = jax.jit(parts)
    _STEP_CACHE[key] = (run, evaluate)
    return run, evaluate


def _chunk_length(cfg: TrainConfig) -> int:
    c = cfg.log_every
    if cfg.resample_every:
        c = math.gcd(c, cfg.resample_every)
    return max(1, min(c, max(cfg.iterations, 1)))


def fit(problem: P.PdeProblem, spec: N.NetworkSpec, cfg: TrainConfig, samples: P.SampleSet | None = None,
        init: N.ParamStore | None = None, log=None) -> tuple[N.ParamStore, TrainTrace]:
    """Train from the seeded initialization; returns final parameters and the loss trace.

    Inverse problems train their coefficients ``coef.*`` jointly with the
    network and fit observations with the data term. A non-finite gradient
    stops the update and raises :class:`NumericalAbort` at the next log point.
    """
    if spec.input_dim != problem.input_dim or spec.output_dim != problem.output_dim:
        raise ValueError(f"network shape does not match problem {problem.name}")
    inverse = problem.is_inverse
    store = init.copy(init.values.copy()) if init is not None else \
        N.init_params(spec, cfg.seed, problem.inverse_init if inverse else None)
    if samples is None:
        n_data = cfg.n_data or (100 if inverse else 0)
        samples = P.sample(problem, cfg.n_r, cfg.n_bc, cfg.seed, cfg.mode, n_data, cfg.noise_pct)
    batch = make_batch(problem, samples)
    if inverse and batch.data_X is None:
        raise ValueError("inverse problems need observation data")
    X_r, bc, data, bc_keys = batch.tree()
    coeff_names = tuple(problem.inverse_coeffs) if inverse else ()
    coeff_idx = [store.span(f"coef.{c}")[0] for c in coeff_names]
    trace = TrainTrace(coeff_names)

    chunk = _chunk_length(cfg)
    run, evaluate = _compiled(problem, spec, store, cfg, bc_keys, inverse, chunk)
    frozen = {k: jnp.asarray(v) for k, v in store.frozen.items()}
    dev = lambda a: jax.tree_util.tree_map(jnp.asarray, a)
    X_r, bc, data = dev(X_r), dev(bc), dev(data)
    theta = jnp.asarray(store.values)
    m = jnp.zeros_like(theta)
    v = jnp.zeros_like(theta)
    t = jnp.asarray(0)
    bad = jnp.asarray(-1)
    t0 = time.perf_counter()

    def note(it):
        p = [float(x) for x in evaluate(theta, frozen, X_r, bc, data)]
        tot = cfg.lambda_r * p[0] + cfg.lambda_bc * p[1] + cfg.lambda_data * p[2]
        th = np.asarray(theta)
        trace.record(it, (tot, *p), [th[i] for i in coeff_idx], time.perf_counter() - t0)
        if log is not None:
            log(f"{problem.name} it={it} loss={tot:.4e}")

    note(0)
    it = 0
    r_round = 0
    while it < cfg.iterations:
        n = min(chunk, cfg.iterations - it)
        if n != chunk:
            run_n, _ = _compiled(problem, spec, store, cfg, bc_keys, inverse, n)
        else:
            run_n = run
        theta, m, v, t, bad = run_n(theta, m, v, t, bad, frozen, X_r, bc, data)
        it += n
        if int(bad) >= 0:
            raise NumericalAbort(f"{problem.name}: non-finite gradient at iteration {int(bad)}")
        if it % cfg.log_every == 0 or it == cfg.iterations:
            note(it)
            if not np.isfinite(trace.rows[-1][1]):
                raise NumericalAbort(f"{problem.name}: non-finite loss at iteration {it}")
        if cfg.resample_every and it % cfg.resample_every == 0 and it < cfg.iterations:
            r_round += 1
            fresh = P.sample(problem, cfg.n_r, 1, seed=cfg.seed * 100003 + r_round, mode=cfg.mode)
            X_r = jnp.asarray(fresh.interior)
    out = store.copy(np.array(theta, dtype=np.float64))
    return out, trace
