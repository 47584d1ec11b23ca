"""Feature-mapping layers that lift coordinates before the MLP.

Nine families are available: the plain identity (a vanilla PINN), basic and
positional encodings, random Fourier features, trainable sinusoidal features,
the complex triangle and complex Gaussian encodings, the partition-normalized
radial basis layer and its polynomial-augmented variant.

Every family has two evaluation routes that share no code:

* :func:`apply` works on one point at a time with scalars or
  :class:`~pinn_featlab.autodiff.Node` objects and is used as a reference;
* :func:`apply_jet` works on a batch of points as a :class:`~pinn_featlab.jet.Jet`
  and is what training runs on.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field, asdict

import jax.numpy as jnp
import numpy as np

from . import autodiff as ad
from . import jet as J

__all__ = [
    "ConfigError",
    "Family",
    "RbfKind",
    "FeatureMapSpec",
    "FeatureState",
    "init",
    "out_width",
    "monomial_exponents",
    "apply",
    "apply_jet",
    "features",
    "empirical_kernel",
    "for_width",
]

CG_MAX_FEATURES = 4096


class ConfigError(ValueError):
    """Invalid feature-map or network configuration."""


class Family(str, enum.Enum):
    IDENTITY = "identity"
    BASIC = "be"
    POSITIONAL = "pe"
    FOURIER = "ff"
    SINUSOIDAL = "sf"
    TRIANGLE = "ct"
    COMPLEX_GAUSSIAN = "cg"
    RBF = "rbf"
    RBF_P = "rbf-p"


class RbfKind(str, enum.Enum):
    CUBIC = "cubic"
    TPS = "tps"
    GAUSSIAN = "gaussian"
    MQ = "mq"
    IMQ = "imq"


@dataclass(frozen=True)
class FeatureMapSpec:
    """Configuration of one feature layer.

    ``m`` is the family's own count: frequencies for BE/PE/FF, sinusoids for
    SF, bumps per axis for CT, the target Kronecker size for CG and centers
    for RBF/RBF-P. ``sigma`` is the frequency scale (FF, PE) or bump width (CG).
    """

    family: Family = Family.RBF
    m: int = 128
    sigma: float = 1.0
    rbf_kind: RbfKind = RbfKind.GAUSSIAN
    k_poly: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "rbf_kind", RbfKind(self.rbf_kind))
        if self.m < 1:
            raise ConfigError("feature count m must be >= 1")
        if self.k_poly < 0:
            raise ConfigError("k_poly must be >= 0")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["family"] = self.family.value
        d["rbf_kind"] = self.rbf_kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMapSpec":
        return cls(**d)


@dataclass
class FeatureState:
    trainable: dict[str, np.ndarray] = field(default_factory=dict)
    frozen: dict[str, np.ndarray] = field(default_factory=dict)


def _cg_bumps(spec: FeatureMapSpec, n: int) -> int:
    p = max(2, math.ceil(spec.m ** (1.0 / n) - 1e-9))
    if p ** n > CG_MAX_FEATURES:
        raise ConfigError(f"complex Gaussian needs {p}^{n} = {p ** n} features (> {CG_MAX_FEATURES})")
    return p


def out_width(spec: FeatureMapSpec, n: int) -> int:
    f = spec.family
    if f is Family.IDENTITY:
        return n
    if f in (Family.BASIC, Family.POSITIONAL):
        return 2 * spec.m * n
    if f is Family.FOURIER:
        return 2 * spec.m
    if f is Family.SINUSOIDAL:
        return spec.m
    if f is Family.TRIANGLE:
        return spec.m * n
    if f is Family.COMPLEX_GAUSSIAN:
        return _cg_bumps(spec, n) ** n
    if f is Family.RBF:
        return spec.m
    return spec.m + spec.k_poly


def for_width(family, n: int, width: int = 128, **kw) -> FeatureMapSpec:
    """Spec whose output width is as close to ``width`` as the family allows."""
    family = Family(family)
    if family in (Family.BASIC, Family.POSITIONAL):
        m = max(1, width // (2 * n))
    elif family is Family.FOURIER:
        m = max(1, width // 2)
    elif family is Family.TRIANGLE:
        m = max(2, width // n)
    else:
        m = width
    return FeatureMapSpec(family=family, m=m, **kw)


def monomial_exponents(n: int, k: int) -> list[tuple[int, ...]]:
    """First ``k`` monomials in graded lexicographic order, as exponent tuples."""
    out: list[tuple[int, ...]] = []
    deg = 0
    while len(out) < k:
        for combo in itertools.combinations_with_replacement(range(n), deg):
            e = [0] * n
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
            if len(out) == k:
                break
        deg += 1
    return out


def _grid(p: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, p) if p > 1 else np.array([0.5])


def init(spec: FeatureMapSpec, n: int, rng: np.random.Generator | int | None = None) -> FeatureState:
    """Initial state for a ``spec`` layer on ``n``-dimensional inputs.

    Trainable entries end up in the parameter store; frozen ones never do.
    """
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(spec.seed if rng is None else rng)
    f = spec.family
    st = FeatureState()
    if f is Family.BASIC:
        st.frozen["feat.freqs"] = 2.0 ** np.arange(spec.m, dtype=np.float64)
    elif f is Family.POSITIONAL:
        st.frozen["feat.freqs"] = spec.sigma ** (np.arange(spec.m) / spec.m)
    elif f is Family.FOURIER:
        st.frozen["feat.B"] = spec.sigma * rng.standard_normal((spec.m, n))
    elif f is Family.SINUSOIDAL:
        lim = math.sqrt(1.0 / n)
        st.trainable["feat.W"] = rng.uniform(-lim, lim, (spec.m, n))
        st.trainable["feat.b"] = rng.uniform(-lim, lim, spec.m)
    elif f is Family.TRIANGLE:
        if spec.m < 2:
            raise ConfigError("complex triangle needs m >= 2 bumps per axis")
        st.frozen["feat.t"] = _grid(spec.m)
    elif f is Family.COMPLEX_GAUSSIAN:
        st.frozen["feat.tau"] = _grid(_cg_bumps(spec, n))
    elif f in (Family.RBF, Family.RBF_P):
        st.trainable["feat.centers"] = rng.standard_normal((spec.m, n))
        if spec.rbf_kind is RbfKind.GAUSSIAN:
            st.trainable["feat.log_widths"] = rng.uniform(math.log(0.5), math.log(1.5), spec.m)
    return st


# ---------------------------------------------------------------------------
# scalar / graph route


def radial(kind: RbfKind, r2, log_width=None):
    """Radial profile as a function of the squared distance ``r2``."""
    kind = RbfKind(kind)
    if kind is RbfKind.GAUSSIAN:
        return ad.exp(-(r2 * ad.exp(-2.0 * log_width)))
    if kind is RbfKind.CUBIC:
        return r2 ** 1.5
    if kind is RbfKind.TPS:
        # r^2 log r, continued by 0 at the center
        v = r2.value if isinstance(r2, ad.Node) else r2
        if v == 0.0:
            return r2 * 0.0
        return 0.5 * r2 * ad.log(r2)
    if kind is RbfKind.MQ:
        return ad.sqrt(1.0 + r2)
    return 1.0 / ad.sqrt(1.0 + r2)


def _state_get(state, name):
    if name in state.trainable:
        return state.trainable[name]
    return state.frozen[name]


def apply(spec: FeatureMapSpec, state: FeatureState, x, graph: ad.ExprGraph | None = None) -> list:
    """Features of a single point ``x`` (sequence of floats or graph nodes).

    ``state`` arrays may hold floats or parameter-leaf nodes; results are
    nodes whenever any input is. ``graph`` is accepted for symmetry with the
    other builders; nodes already know their graph.
    """
    f = spec.family
    n = len(x)
    twopi = 2.0 * math.pi
    if f is Family.IDENTITY:
        return list(x)
    if f in (Family.BASIC, Family.POSITIONAL):
        freqs = state.frozen["feat.freqs"]
        args = [twopi * float(w) * x[d] for d in range(n) for w in freqs]
        return [ad.cos(a) for a in args] + [ad.sin(a) for a in args]
    if f is Family.FOURIER:
        B = state.frozen["feat.B"]
        args = []
        for j in range(B.shape[0]):
            s = x[0] * float(B[j, 0])
            for d in range(1, n):
                s = s + x[d] * float(B[j, d])
            args.append(twopi * s)
        return [ad.cos(a) for a in args] + [ad.sin(a) for a in args]
    if f is Family.SINUSOIDAL:
        W, b = state.trainable["feat.W"], state.trainable["feat.b"]
        out = []
        for j in range(W.shape[0]):
            s = x[0] * W[j, 0]
            for d in range(1, n):
                s = s + x[d] * W[j, d]
            out.append(ad.sin(twopi * s + b[j]))
        return out
    if f is Family.TRIANGLE:
        t = state.frozen["feat.t"]
        half = 0.5 * (2.0 / (len(t) - 1))
        return [ad.maximum(1.0 - ad.absolute(x[d] - float(tj)) / half, 0.0) for d in range(n) for tj in t]
    if f is Family.COMPLEX_GAUSSIAN:
        tau = state.frozen["feat.tau"]
        per_axis = [[ad.exp(-0.5 * (x[d] - float(tk)) ** 2 / spec.sigma ** 2) for tk in tau] for d in range(n)]
        out = []
        for combo in itertools.product(range(len(tau)), repeat=n):
            v = per_axis[0][combo[0]]
            for d in range(1, n):
                v = v * per_axis[d][combo[d]]
            out.append(v)
        return out
    # RBF / RBF-P
    C = state.trainable["feat.centers"]
    lw = state.trainable.get("feat.log_widths")
    phis = []
    for i in range(C.shape[0]):
        r2 = (x[0] - C[i, 0]) ** 2
        for d in range(1, n):
            r2 = r2 + (x[d] - C[i, d]) ** 2
        phis.append(radial(spec.rbf_kind, r2, None if lw is None else lw[i]))
    total = phis[0]
    for p in phis[1:]:
        total = total + p
    out = [p / total for p in phis]
    if f is Family.RBF_P:
        for e in monomial_exponents(n, spec.k_poly):
            term = 1.0
            for d, k in enumerate(e):
                if k:
                    term = x[d] ** k if isinstance(term, float) and term == 1.0 else term * x[d] ** k
            out.append(term)
    return out


# ---------------------------------------------------------------------------
# batched jet route


def _radial_jet(kind: RbfKind, r2: J.Jet, log_width=None) -> J.Jet:
    if kind is RbfKind.GAUSSIAN:
        return J.exp(r2 * (-jnp.exp(-2.0 * log_width)))
    if kind is RbfKind.CUBIC:
        return r2 ** 1.5
    if kind is RbfKind.TPS:
        s = r2.val
        pos = s > 0
        safe = jnp.where(pos, s, 1.0)
        return J.unary(r2,
                       lambda _: jnp.where(pos, 0.5 * s * jnp.log(safe), 0.0),
                       lambda _: jnp.where(pos, 0.5 * (jnp.log(safe) + 1.0), 0.0),
                       lambda _: jnp.where(pos, 0.5 / safe, 0.0))
    if kind is RbfKind.MQ:
        return J.sqrt(r2 + 1.0)
    return J.reciprocal(J.sqrt(r2 + 1.0))


def apply_jet(spec: FeatureMapSpec, params: dict, frozen: dict, x: J.Jet) -> J.Jet:
    """Features of a batch ``x`` (jet of shape (N, n)) as a jet of shape (N, width)."""
    f = spec.family
    N, n = x.shape
    twopi = 2.0 * math.pi
    if f is Family.IDENTITY:
        return x
    if f in (Family.BASIC, Family.POSITIONAL):
        freqs = jnp.asarray(frozen["feat.freqs"])
        arg = x.map_linear(lambda a: (twopi * a[:, :, None] * freqs[None, None, :]).reshape(N, -1))
        return J.concat([J.cos(arg), J.sin(arg)])
    if f is Family.FOURIER:
        arg = (x @ jnp.asarray(frozen["feat.B"]).T) * twopi
        return J.concat([J.cos(arg), J.sin(arg)])
    if f is Family.SINUSOIDAL:
        return J.sin((x @ params["feat.W"].T) * twopi + params["feat.b"])
    if f is Family.TRIANGLE:
        t = jnp.asarray(frozen["feat.t"])
        half = 0.5 * (2.0 / (t.shape[0] - 1))
        diff = x.map_linear(lambda a: a[:, :, None]) - t[None, None, :]
        hat = J.maximum(1.0 - J.absolute(diff) / half, 0.0)
        return hat.reshape(N, -1)
    if f is Family.COMPLEX_GAUSSIAN:
        tau = jnp.asarray(frozen["feat.tau"])
        diff = x.map_linear(lambda a: a[:, :, None]) - tau[None, None, :]
        g = J.exp((diff * diff) * (-0.5 / spec.sigma ** 2))
        out = g[:, 0, :]
        for d in range(1, n):
            gd = g[:, d, :]
            p = gd.shape[1]
            out = (out.map_linear(lambda a: a[:, :, None]) * gd.map_linear(lambda a: a[:, None, :])).reshape(N, -1)
        return out
    C = params["feat.centers"]
    diff = x.map_linear(lambda a: a[:, None, :]) - C[None, :, :]
    r2 = (diff * diff).sum(axis=-1)
    phi = _radial_jet(spec.rbf_kind, r2, params.get("feat.log_widths"))
    out = phi / phi.sum(axis=1, keepdims=True)
    if f is Family.RBF_P and spec.k_poly:
        cols = []
        for e in monomial_exponents(n, spec.k_poly):
            term = None
            for d, k in enumerate(e):
                if k:
                    p = x[:, d] ** k
                    term = p if term is None else term * p
            if term is None:
                term = J.Jet(jnp.ones((N,)), {k: None for k in x.d}, {k: None for k in x.dd})
            cols.append(term)
        out = J.concat([out, J.stack_last(cols)])
    return out


def features(spec: FeatureMapSpec, state: FeatureState, X) -> np.ndarray:
    """Plain feature values for a batch of points of shape (N, n)."""
    X = jnp.asarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    params = {k: jnp.asarray(v) for k, v in state.trainable.items()}
    return np.asarray(apply_jet(spec, params, state.frozen, J.seed_inputs(X, ())).val)


def empirical_kernel(spec: FeatureMapSpec, state: FeatureState, X) -> np.ndarray:
    """Gram matrix K[i, j] = phi(x_i) . phi(x_j) of the feature layer."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] > 2048:
        raise ConfigError("empirical kernel limited to 2048 points")
    F = features(spec, state, X)
    K = F @ F.T
    return 0.5 * (K + K.T)
