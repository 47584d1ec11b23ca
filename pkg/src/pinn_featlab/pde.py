"""The benchmark problems: geometry, residual operators, boundary data and references.

Residual operators are written once against a small "fields" interface
(``u``, ``d``, ``dd``, ``x`` and an ``ops`` namespace with ``sin``/``cos``/``exp``)
and can be evaluated on either derivative engine:

* :class:`JetFields` wraps a batched :class:`~pinn_featlab.jet.Jet` (training);
* :class:`GraphFields` differentiates scalar graph nodes with
  :func:`~pinn_featlab.autodiff.derive` (reference checks).

Registry names: ``wave``, ``diffusion``, ``heat``, ``poisson``, ``burgers``,
``ns``, ``poisson-nd`` (with ``dim`` 1..10), ``i-burgers``, ``i-lorenz``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import jax.numpy as jnp
import numpy as np
from scipy.interpolate import CubicSpline

from . import autodiff as ad
from . import jet as J
from . import net as N

__all__ = [
    "Disk",
    "Rect",
    "BcSet",
    "PdeProblem",
    "SampleSet",
    "SamplingError",
    "PROBLEMS",
    "make_problem",
    "sample",
    "residual",
    "residual_jet",
    "oracle_burgers",
    "lorenz_trajectory",
    "gen_inverse_data",
    "write_observations",
    "read_observations",
    "JetFields",
    "GraphFields",
]

PI = math.pi
BURGERS_NU = 0.01 / PI
HEAT_DECAY = 400.0 / 250000.0 + 1.0
LORENZ_TRUE = {"alpha": 10.0, "beta": 8.0 / 3.0, "rho": 15.0}
LORENZ_X0 = (0.0, 1.0, 1.05)
LORENZ_T = 3.0
MAX_DRAWS = 1_000_000


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Disk:
    center: tuple[float, ...]
    radius: float

    def contains(self, X):
        c = np.asarray(self.center)
        return np.sum((X[:, :len(c)] - c) ** 2, axis=1) <= self.radius ** 2


@dataclass(frozen=True)
class Rect:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def contains(self, X):
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        Y = X[:, :len(lo)]
        return np.all((Y >= lo) & (Y <= hi), axis=1)


@dataclass
class BcSet:
    """Boundary (or initial) constraint: selected components or their derivative equal a target.

    ``kind`` is one of ``dirichlet``, ``neumann_t``, ``inlet``, ``outlet``,
    ``noslip``. With ``deriv_axis`` set, the constraint applies to the first
    derivative of the components along that axis.
    """

    name: str
    kind: str
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    target: Callable[[np.ndarray], np.ndarray]
    components: tuple[int, ...] = (0,)
    deriv_axis: int | None = None


@dataclass
class PdeProblem:
    name: str
    input_dim: int
    output_dim: int
    lo: np.ndarray
    hi: np.ndarray
    axis_names: tuple[str, ...]
    residual_fn: Callable
    first_axes: tuple[int, ...]
    second_axes: tuple[int, ...]
    bc_sets: list[BcSet]
    coeffs: dict[str, float] = field(default_factory=dict)
    exclusions: list = field(default_factory=list)
    analytic: Callable | None = None
    reference: Callable | None = None
    inverse_coeffs: dict[str, float] = field(default_factory=dict)
    inverse_init: dict[str, float] = field(default_factory=dict)
    n_equations: int = 1

    @property
    def is_inverse(self) -> bool:
        return bool(self.inverse_coeffs)

    def inside(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        ok = np.all((X >= self.lo) & (X <= self.hi), axis=1)
        for ex in self.exclusions:
            ok &= ~ex.contains(X)
        return ok


@dataclass
class SampleSet:
    interior: np.ndarray
    boundary: dict[str, np.ndarray]
    data: tuple[np.ndarray, np.ndarray] | None = None


# ---------------------------------------------------------------------------
# fields


class JetFields:
    ops = jnp

    def __init__(self, out: J.Jet, X):
        self.out = out
        self.X = X

    def u(self, c=0):
        return self.out.val[:, c]

    def d(self, c, k):
        v = self.out.d[k]
        return jnp.zeros(self.out.val.shape[0]) if v is None else v[:, c]

    def dd(self, c, k):
        v = self.out.dd[k]
        return jnp.zeros(self.out.val.shape[0]) if v is None else v[:, c]

    def x(self, k):
        return self.X[:, k]


class GraphFields:
    ops = ad

    def __init__(self, graph: ad.ExprGraph, outs, xs):
        self.graph = graph
        self.outs = list(outs)
        self.xs = list(xs)
        self._cache = {}

    def u(self, c=0):
        return self.outs[c]

    def d(self, c, k):
        key = (c, k, 1)
        if key not in self._cache:
            self._cache[key] = ad.derive(self.graph, self.outs[c], self.xs[k])
        return self._cache[key]

    def dd(self, c, k):
        key = (c, k, 2)
        if key not in self._cache:
            self._cache[key] = ad.derive(self.graph, self.d(c, k), self.xs[k])
        return self._cache[key]

    def x(self, k):
        return self.xs[k]


# ---------------------------------------------------------------------------
# residual operators


def _wave_res(F, c):
    return [F.dd(0, 1) - 4.0 * F.dd(0, 0)]


def _diffusion_res(F, c):
    x, t = F.x(0), F.x(1)
    s = F.ops.sin(PI * x)
    return [F.d(0, 1) - F.dd(0, 0) + F.ops.exp(-t) * (s - PI ** 2 * s)]


def _heat_res(F, c):
    return [F.d(0, 2) - F.dd(0, 0) / (500.0 * PI) ** 2 - F.dd(0, 1) / PI ** 2]


def _laplace_res(F, c):
    return [-(F.dd(0, 0) + F.dd(0, 1))]


def _burgers_res(F, c):
    u = F.u(0)
    return [F.d(0, 1) + c["mu1"] * u * F.d(0, 0) - c["mu2"] * F.dd(0, 0)]


def _ns_res(F, c):
    u, v = F.u(0), F.u(1)
    inv_re = 1.0 / c["Re"]
    r_mass = F.d(0, 0) + F.d(1, 1)
    r_u = u * F.d(0, 0) + v * F.d(0, 1) + F.d(2, 0) - inv_re * (F.dd(0, 0) + F.dd(0, 1))
    r_v = u * F.d(1, 0) + v * F.d(1, 1) + F.d(2, 1) - inv_re * (F.dd(1, 0) + F.dd(1, 1))
    return [r_mass, r_u, r_v]


def _make_poisson_nd_res(dim):
    def res(F, c):
        lap = F.dd(0, 0)
        src = F.ops.sin(0.5 * PI * F.x(0))
        for k in range(1, dim):
            lap = lap + F.dd(0, k)
            src = src + F.ops.sin(0.5 * PI * F.x(k))
        return [-lap - (PI ** 2 / 4.0) * src]
    return res


def _lorenz_res(F, c):
    x, y, z = F.u(0), F.u(1), F.u(2)
    return [
        F.d(0, 0) - c["alpha"] * (y - x),
        F.d(1, 0) - (x * (c["rho"] - z) - y),
        F.d(2, 0) - (x * y - c["beta"] * z),
    ]


# ---------------------------------------------------------------------------
# exact solutions and references


def wave_exact(X):
    x, t = X[:, 0], X[:, 1]
    return (np.sin(PI * x) * np.cos(2 * PI * t) + 0.5 * np.sin(4 * PI * x) * np.cos(8 * PI * t))[:, None]


def diffusion_exact(X):
    return (np.exp(-X[:, 1]) * np.sin(PI * X[:, 0]))[:, None]


def heat_exact(X):
    x, y, t = X[:, 0], X[:, 1], X[:, 2]
    return (np.exp(-HEAT_DECAY * t) * np.sin(20 * PI * x) * np.sin(PI * y))[:, None]


def poisson_nd_exact(X):
    return np.sum(np.sin(0.5 * PI * X), axis=1)[:, None]


def oracle_burgers(x, t, order: int = 200, nu: float = BURGERS_NU):
    """Viscous Burgers solution with u(x, 0) = -sin(pi x) via the Cole-Hopf transform.

    The heat-kernel convolution is evaluated with Gauss-Hermite quadrature;
    the log-weights are shifted by their maximum so the exponentials never
    overflow. Accepts scalars or arrays; returns the same shape.
    """
    x, t = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(t, dtype=np.float64))
    shape = x.shape
    x, t = x.ravel(), t.ravel()
    z, w = _hermgauss(order)
    out = -np.sin(PI * x)
    live = t > 0
    if np.any(live):
        xs, ts = x[live][:, None], t[live][:, None]
        y = xs - np.sqrt(4.0 * nu * ts) * z[None, :]
        logf = -np.cos(PI * y) / (2.0 * PI * nu)
        f = w[None, :] * np.exp(logf - logf.max(axis=1, keepdims=True))
        out[live] = -np.sum(np.sin(PI * y) * f, axis=1) / np.sum(f, axis=1)
    return out.reshape(shape) if shape else float(out[0])


@lru_cache(maxsize=8)
def _hermgauss(order):
    return np.polynomial.hermite.hermgauss(order)


def burgers_reference(X):
    return oracle_burgers(X[:, 0], X[:, 1])[:, None]


def _lorenz_rhs(s, a, b, r):
    x, y, z = s
    return np.array([a * (y - x), x * (r - z) - y, x * y - b * z])


def lorenz_trajectory(t_end: float = LORENZ_T, h: float = 1e-3, coeffs: dict | None = None,
                      x0=LORENZ_X0) -> tuple[np.ndarray, np.ndarray]:
    """Classical fourth-order Runge-Kutta integration of the Lorenz system."""
    c = {**LORENZ_TRUE, **(coeffs or {})}
    a, b, r = c["alpha"], c["beta"], c["rho"]
    n = int(round(t_end / h))
    ts = np.linspace(0.0, n * h, n + 1)
    S = np.empty((n + 1, 3))
    S[0] = x0
    s = np.array(x0, dtype=np.float64)
    for i in range(n):
        k1 = _lorenz_rhs(s, a, b, r)
        k2 = _lorenz_rhs(s + 0.5 * h * k1, a, b, r)
        k3 = _lorenz_rhs(s + 0.5 * h * k2, a, b, r)
        k4 = _lorenz_rhs(s + h * k3, a, b, r)
        s = s + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        S[i + 1] = s
    return ts, S


@lru_cache(maxsize=1)
def _lorenz_spline():
    ts, S = lorenz_trajectory()
    return CubicSpline(ts, S, axis=0)


def lorenz_reference(X):
    return _lorenz_spline()(np.asarray(X)[:, 0])


# ---------------------------------------------------------------------------
# samplers


def _box_sampler(lo, hi, fixed: dict[int, float] | None = None):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)

    def draw(rng, n):
        X = lo + (hi - lo) * rng.random((n, len(lo)))
        for k, v in (fixed or {}).items():
            X[:, k] = v
        return X
    return draw


def _circle_sampler(center, radius):
    def draw(rng, n):
        th = 2 * PI * rng.random(n)
        return np.stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)], axis=1)
    return draw


def _cube_surface_sampler(dim):
    def draw(rng, n):
        X = rng.random((n, dim))
        axis = rng.integers(0, dim, n)
        side = rng.integers(0, 2, n).astype(float)
        X[np.arange(n), axis] = side
        return X
    return draw


def _square_perimeter_sampler(lo, hi):
    def draw(rng, n):
        s = rng.random(n) * 4.0
        side = np.minimum(s.astype(int), 3)
        f = s - side
        X = np.empty((n, 2))
        L = hi - lo
        X[:, 0] = np.where(side == 0, lo + f * L, np.where(side == 1, hi, np.where(side == 2, hi - f * L, lo)))
        X[:, 1] = np.where(side == 0, lo, np.where(side == 1, lo + f * L, np.where(side == 2, hi, hi - f * L)))
        return X
    return draw


def _zeros(k=1):
    return lambda X: np.zeros((X.shape[0], k))


def _const(v):
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    return lambda X: np.tile(v, (X.shape[0], 1))


def _slice_exact(fn):
    return fn


# ---------------------------------------------------------------------------
# registry


def _wave():
    ic = lambda X: (np.sin(PI * X[:, 0]) + 0.5 * np.sin(4 * PI * X[:, 0]))[:, None]
    return PdeProblem(
        name="wave", input_dim=2, output_dim=1, lo=np.array([0.0, 0.0]), hi=np.array([1.0, 1.0]),
        axis_names=("x", "t"), residual_fn=_wave_res, first_axes=(), second_axes=(0, 1),
        bc_sets=[
            BcSet("x0", "dirichlet", _box_sampler([0, 0], [1, 1], {0: 0.0}), _zeros()),
            BcSet("x1", "dirichlet", _box_sampler([0, 0], [1, 1], {0: 1.0}), _zeros()),
            BcSet("ic", "dirichlet", _box_sampler([0, 0], [1, 1], {1: 0.0}), ic),
            BcSet("ic_t", "neumann_t", _box_sampler([0, 0], [1, 1], {1: 0.0}), _zeros(), deriv_axis=1),
        ],
        analytic=wave_exact, reference=wave_exact,
    )


def _diffusion():
    return PdeProblem(
        name="diffusion", input_dim=2, output_dim=1, lo=np.array([-1.0, 0.0]), hi=np.array([1.0, 1.0]),
        axis_names=("x", "t"), residual_fn=_diffusion_res, first_axes=(1,), second_axes=(0,),
        bc_sets=[
            BcSet("x-1", "dirichlet", _box_sampler([-1, 0], [1, 1], {0: -1.0}), _zeros()),
            BcSet("x1", "dirichlet", _box_sampler([-1, 0], [1, 1], {0: 1.0}), _zeros()),
            BcSet("ic", "dirichlet", _box_sampler([-1, 0], [1, 1], {1: 0.0}), lambda X: np.sin(PI * X[:, :1])),
        ],
        analytic=diffusion_exact, reference=diffusion_exact,
    )


def _heat():
    lo, hi = [0, 0, 0], [1, 1, 5]
    walls = [BcSet(f"{a}{v}", "dirichlet", _box_sampler(lo, hi, {k: float(v)}), _zeros())
             for k, a in enumerate("xy") for v in (0, 1)]
    ic = lambda X: (np.sin(20 * PI * X[:, 0]) * np.sin(PI * X[:, 1]))[:, None]
    return PdeProblem(
        name="heat", input_dim=3, output_dim=1, lo=np.array(lo, float), hi=np.array(hi, float),
        axis_names=("x", "y", "t"), residual_fn=_heat_res, first_axes=(2,), second_axes=(0, 1),
        bc_sets=walls + [BcSet("ic", "dirichlet", _box_sampler(lo, hi, {2: 0.0}), ic)],
        analytic=heat_exact, reference=heat_exact,
    )


POISSON_HOLES = [Disk((sx * 0.3, sy * 0.3), 0.1) for sx in (1, -1) for sy in (1, -1)]


def _poisson_holes():
    holes = [BcSet(f"hole{i}", "dirichlet", _circle_sampler(d.center, d.radius), _zeros())
             for i, d in enumerate(POISSON_HOLES)]
    return PdeProblem(
        name="poisson", input_dim=2, output_dim=1, lo=np.array([-0.5, -0.5]), hi=np.array([0.5, 0.5]),
        axis_names=("x", "y"), residual_fn=_laplace_res, first_axes=(), second_axes=(0, 1),
        bc_sets=[BcSet("outer", "dirichlet", _square_perimeter_sampler(-0.5, 0.5), _const(1.0))] + holes,
        exclusions=list(POISSON_HOLES),
    )


def _burgers_bcs():
    return [
        BcSet("x-1", "dirichlet", _box_sampler([-1, 0], [1, 1], {0: -1.0}), _zeros()),
        BcSet("x1", "dirichlet", _box_sampler([-1, 0], [1, 1], {0: 1.0}), _zeros()),
        BcSet("ic", "dirichlet", _box_sampler([-1, 0], [1, 1], {1: 0.0}), lambda X: -np.sin(PI * X[:, :1])),
    ]


def _burgers():
    return PdeProblem(
        name="burgers", input_dim=2, output_dim=1, lo=np.array([-1.0, 0.0]), hi=np.array([1.0, 1.0]),
        axis_names=("x", "t"), residual_fn=_burgers_res, first_axes=(0, 1), second_axes=(0,),
        bc_sets=_burgers_bcs(), coeffs={"mu1": 1.0, "mu2": BURGERS_NU, "nu": BURGERS_NU},
        reference=burgers_reference,
    )


def _i_burgers():
    p = _burgers()
    p.name = "i-burgers"
    p.inverse_coeffs = {"mu1": 1.0, "mu2": BURGERS_NU}
    p.inverse_init = {"mu1": 0.0, "mu2": 0.0}
    return p


def _ns():
    lo, hi = [0.0, 0.0], [4.0, 2.0]
    inlet = lambda X: np.stack([4 * X[:, 1] * (1 - X[:, 1]), np.zeros(len(X))], axis=1)
    return PdeProblem(
        name="ns", input_dim=2, output_dim=3, lo=np.array(lo), hi=np.array(hi),
        axis_names=("x", "y"), residual_fn=_ns_res, first_axes=(0, 1), second_axes=(0, 1),
        bc_sets=[
            BcSet("inlet", "inlet", _box_sampler([0, 0], [0, 1], {0: 0.0}), inlet, components=(0, 1)),
            BcSet("outlet", "outlet", _box_sampler([4, 0], [4, 2], {0: 4.0}), _zeros(), components=(2,)),
            BcSet("bottom", "noslip", _box_sampler([0, 0], [4, 0], {1: 0.0}), _zeros(2), components=(0, 1)),
            BcSet("step_top", "noslip", _box_sampler([0, 1], [2, 1], {1: 1.0}), _zeros(2), components=(0, 1)),
            BcSet("step_face", "noslip", _box_sampler([2, 1], [2, 2], {0: 2.0}), _zeros(2), components=(0, 1)),
            BcSet("top", "noslip", _box_sampler([2, 2], [4, 2], {1: 2.0}), _zeros(2), components=(0, 1)),
        ],
        coeffs={"Re": 100.0}, exclusions=[Rect((0.0, 1.0), (2.0, 2.0))], n_equations=3,
    )


def _poisson_nd(dim):
    if not 1 <= dim <= 10:
        raise ValueError("poisson-nd supports dimensions 1..10")
    return PdeProblem(
        name=f"poisson-nd{dim}", input_dim=dim, output_dim=1, lo=np.zeros(dim), hi=np.ones(dim),
        axis_names=tuple(f"x{k + 1}" for k in range(dim)), residual_fn=_make_poisson_nd_res(dim),
        first_axes=(), second_axes=tuple(range(dim)),
        bc_sets=[BcSet("faces", "dirichlet", _cube_surface_sampler(dim), poisson_nd_exact)],
        analytic=poisson_nd_exact, reference=poisson_nd_exact,
    )


def _i_lorenz():
    return PdeProblem(
        name="i-lorenz", input_dim=1, output_dim=3, lo=np.array([0.0]), hi=np.array([LORENZ_T]),
        axis_names=("t",), residual_fn=_lorenz_res, first_axes=(0,), second_axes=(),
        bc_sets=[BcSet("ic", "dirichlet", _box_sampler([0.0], [0.0], {0: 0.0}), _const(LORENZ_X0),
                       components=(0, 1, 2))],
        coeffs=dict(LORENZ_TRUE), reference=lorenz_reference,
        inverse_coeffs=dict(LORENZ_TRUE), inverse_init={"alpha": 1.0, "beta": 1.0, "rho": 1.0},
        n_equations=3,
    )


PROBLEMS = ("wave", "diffusion", "heat", "poisson", "burgers", "ns", "poisson-nd", "i-burgers", "i-lorenz")


def make_problem(name: str, dim: int | None = None) -> PdeProblem:
    """Build a registered problem; ``poisson-nd`` takes ``dim`` (or ``poisson-nd4`` style names)."""
    key = name.lower()
    if key.startswith("poisson-nd"):
        tail = key[len("poisson-nd"):].lstrip(":")
        d = int(tail) if tail else (dim if dim is not None else 2)
        return _poisson_nd(d)
    makers = {"wave": _wave, "diffusion": _diffusion, "heat": _heat, "poisson": _poisson_holes,
              "burgers": _burgers, "ns": _ns, "i-burgers": _i_burgers, "i-lorenz": _i_lorenz}
    if key not in makers:
        raise KeyError(f"unknown problem {name!r}; choose from {', '.join(PROBLEMS)}")
    return makers[key]()


# ---------------------------------------------------------------------------
# sampling


def sample(problem: PdeProblem, n_r: int, n_bc: int, seed: int = 0, mode: str = "even",
           n_data: int = 0, noise_pct: float = 0.0) -> SampleSet:
    """Collocation, boundary and (inverse mode) observation points.

    ``mode="uneven"`` restricts the last coordinate to ``round(n_r / D)``
    distinct levels, i.e. dense in the leading axes and sparse in the last.
    """
    if n_r < 1 or n_bc < 1:
        raise ValueError("sample counts must be positive")
    rng = np.random.default_rng([seed, 11])
    interior = _sample_interior(problem, n_r, rng)
    if mode == "uneven":
        D = problem.input_dim
        levels = max(1, int(round(n_r / D)))
        grid = problem.lo[-1] + (problem.hi[-1] - problem.lo[-1]) * rng.random(levels)
        interior[:, -1] = grid[np.arange(n_r) % levels]
        interior = interior[problem.inside(interior)]
    elif mode != "even":
        raise ValueError(f"unknown sampling mode {mode!r}")
    boundary = {bc.name: bc.sampler(rng, n_bc) for bc in problem.bc_sets}
    data = gen_inverse_data(problem, n_data, noise_pct, seed) if n_data else None
    return SampleSet(interior, boundary, data)


def _sample_interior(problem: PdeProblem, n: int, rng) -> np.ndarray:
    out = []
    have = 0
    drawn = 0
    while have < n:
        batch = max(2 * (n - have), 64)
        X = problem.lo + (problem.hi - problem.lo) * rng.random((batch, problem.input_dim))
        X = X[problem.inside(X)]
        drawn += batch
        out.append(X)
        have += len(X)
        if have < n and drawn > MAX_DRAWS:
            raise SamplingError(f"{problem.name}: rejection sampling failed after {drawn} draws")
    return np.concatenate(out)[:n]


def gen_inverse_data(problem: PdeProblem, n_points: int, noise_pct: float = 0.0, seed: int = 0):
    """Observations (X, U) for the inverse problems, optionally with Gaussian noise.

    Noise standard deviation is ``noise_pct`` (a fraction, 0.01 = 1 %) times
    the per-component RMS of the clean signal.
    """
    rng = np.random.default_rng([seed, 23])
    if problem.name == "i-burgers":
        X = problem.lo + (problem.hi - problem.lo) * rng.random((n_points, 2))
        U = burgers_reference(X)
    elif problem.name == "i-lorenz":
        ts, S = lorenz_trajectory()
        idx = np.linspace(0, len(ts) - 1, n_points).round().astype(int)
        X, U = ts[idx][:, None], S[idx]
    else:
        raise ValueError(f"{problem.name} has no observation generator")
    if noise_pct > 0:
        rms = np.sqrt(np.mean(U ** 2, axis=0))
        U = U + noise_pct * rms * rng.standard_normal(U.shape)
    return X, U


# ---------------------------------------------------------------------------
# residuals


def coeff_values(problem: PdeProblem, params: dict | None = None) -> dict:
    """Coefficients for the residual: fixed values, overridden by trainable ones."""
    c = dict(problem.coeffs)
    if params is not None:
        for name in problem.inverse_coeffs:
            key = f"coef.{name}"
            if key in params:
                c[name] = params[key]
    return c


def residual(problem: PdeProblem, spec: N.NetworkSpec, store: N.ParamStore, x, graph: ad.ExprGraph,
             leaves: dict | None = None, inverse: bool = False, tag: str = "") -> list:
    """Residual nodes of every governing equation at the single point ``x``.

    ``tag`` suffixes the input leaf names so several points can share a graph
    and still be re-evaluated independently.
    """
    xs = [graph.input(name + tag, float(v)) for name, v in zip(problem.axis_names, x)]
    leaves = N.graph_params(store, graph) if leaves is None else leaves
    outs = N.forward(spec, store, xs, graph, leaves)
    F = GraphFields(graph, outs, xs)
    return problem.residual_fn(F, coeff_values(problem, leaves if inverse else None))


def residual_jet(problem: PdeProblem, spec: N.NetworkSpec, params: dict, frozen: dict, X,
                 inverse: bool = False) -> list:
    """Batched residual arrays, one per equation, for points of shape (N, n)."""
    xj = J.seed_inputs(X, problem.first_axes, problem.second_axes)
    out = N.forward_jet(spec, params, frozen, xj)
    F = JetFields(out, X)
    return problem.residual_fn(F, coeff_values(problem, params if inverse else None))


def write_observations(path, problem: PdeProblem, X, U) -> None:
    """Observation CSV: one row per point, coordinates then observed components."""
    X, U = np.atleast_2d(X), np.atleast_2d(U)
    if len(X) != len(U):
        raise ValueError("coordinate and observation counts differ")
    outs = ["u"] if problem.output_dim == 1 else [f"u{c}" for c in range(problem.output_dim)]
    header = ",".join([*problem.axis_names, *outs])
    rows = np.concatenate([X, U], axis=1)
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) for v in r) + "\n")


def read_observations(path, problem: PdeProblem) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != problem.input_dim + problem.output_dim:
        raise ValueError(f"{path}: expected {problem.input_dim + problem.output_dim} columns")
    return data[:, :problem.input_dim], data[:, problem.input_dim:]
