"""Feature-mapped tanh MLP and the flat parameter store it trains."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jax.numpy as jnp
import numpy as np

from . import autodiff as ad
from . import featmap as fm
from . import jet as J

__all__ = [
    "NetworkSpec",
    "ParamStore",
    "init_params",
    "param_count",
    "forward",
    "forward_jet",
    "graph_params",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    feature: fm.FeatureMapSpec = field(default_factory=fm.FeatureMapSpec)
    hidden: tuple[int, ...] = (50, 50, 50, 50)
    output_dim: int = 1
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1:
            raise fm.ConfigError("input and output dimensions must be >= 1")
        if self.activation != "tanh":
            raise fm.ConfigError("only tanh activation is supported")
        if any(h < 1 for h in self.hidden):
            raise fm.ConfigError("hidden widths must be >= 1")

    @property
    def layer_sizes(self) -> list[int]:
        return [fm.out_width(self.feature, self.input_dim), *self.hidden, self.output_dim]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "feature": self.feature.to_dict(),
            "hidden": list(self.hidden),
            "output_dim": self.output_dim,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        d["feature"] = fm.FeatureMapSpec.from_dict(d["feature"])
        d["hidden"] = tuple(d["hidden"])
        return cls(**d)


class ParamStore:
    """Flat float64 vector of trainable values with named, disjoint slices.

    ``frozen`` holds non-trainable arrays (Fourier matrices, frequency
    ladders, bump grids); they never enter the flat vector.
    """

    def __init__(self, layout: dict[str, tuple[int, ...]], values=None, frozen=None):
        self.slices: dict[str, tuple[int, tuple[int, ...]]] = {}
        off = 0
        for name, shape in layout.items():
            shape = tuple(int(s) for s in shape)
            self.slices[name] = (off, shape)
            off += int(np.prod(shape)) if shape else 1
        self.size = off
        self.values = np.zeros(off) if values is None else np.array(values, dtype=np.float64).reshape(off)
        self.frozen: dict[str, np.ndarray] = dict(frozen or {})

    def __len__(self):
        return self.size

    def __contains__(self, name):
        return name in self.slices

    def names(self) -> list[str]:
        return list(self.slices)

    def span(self, name: str) -> tuple[int, int]:
        off, shape = self.slices[name]
        return off, int(np.prod(shape)) if shape else 1

    def get(self, name: str) -> np.ndarray:
        off, shape = self.slices[name]
        n = int(np.prod(shape)) if shape else 1
        return self.values[off:off + n].reshape(shape)

    def set(self, name: str, value) -> None:
        off, shape = self.slices[name]
        n = int(np.prod(shape)) if shape else 1
        self.values[off:off + n] = np.asarray(value, dtype=np.float64).reshape(n)

    def unflatten(self, flat) -> dict:
        """Split any flat vector (numpy or jax) into named arrays."""
        out = {}
        for name, (off, shape) in self.slices.items():
            n = int(np.prod(shape)) if shape else 1
            out[name] = flat[off:off + n].reshape(shape)
        return out

    def copy(self, values=None) -> "ParamStore":
        new = ParamStore({k: s for k, (_, s) in self.slices.items()},
                         self.values if values is None else values, self.frozen)
        return new

    def layout(self) -> dict[str, tuple[int, ...]]:
        return {k: s for k, (_, s) in self.slices.items()}


def _glorot(rng, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, (fan_in, fan_out))


def init_params(spec: NetworkSpec, seed: int = 0, coeffs: dict[str, float] | None = None) -> ParamStore:
    """Feature state, Glorot-uniform weights with zero biases, then coefficients."""
    feat_rng = np.random.default_rng([seed, 1, spec.feature.seed])
    layer_rng = np.random.default_rng([seed, 2])
    fstate = fm.init(spec.feature, spec.input_dim, feat_rng)
    layout: dict[str, tuple[int, ...]] = {k: v.shape for k, v in fstate.trainable.items()}
    sizes = spec.layer_sizes
    weights = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layout[f"layer{i}.W"] = (a, b)
        layout[f"layer{i}.b"] = (b,)
        weights[f"layer{i}.W"] = _glorot(layer_rng, a, b)
        weights[f"layer{i}.b"] = np.zeros(b)
    for name in coeffs or {}:
        layout[f"coef.{name}"] = ()
    store = ParamStore(layout, frozen=fstate.frozen)
    for k, v in {**fstate.trainable, **weights}.items():
        store.set(k, v)
    for name, v in (coeffs or {}).items():
        store.set(f"coef.{name}", v)
    return store


def param_count(spec: NetworkSpec, n_coeffs: int = 0) -> tuple[int, int]:
    """(trainable, frozen) parameter counts for ``spec``."""
    f = spec.feature
    n = spec.input_dim
    fam = f.family
    trainable = frozen = 0
    if fam is fm.Family.SINUSOIDAL:
        trainable += f.m * n + f.m
    elif fam in (fm.Family.RBF, fm.Family.RBF_P):
        trainable += f.m * n + (f.m if f.rbf_kind is fm.RbfKind.GAUSSIAN else 0)
    elif fam is fm.Family.FOURIER:
        frozen += f.m * n
    elif fam in (fm.Family.BASIC, fm.Family.POSITIONAL, fm.Family.TRIANGLE):
        frozen += f.m
    elif fam is fm.Family.COMPLEX_GAUSSIAN:
        frozen += round(fm.out_width(f, n) ** (1.0 / n))
    sizes = spec.layer_sizes
    trainable += sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    return trainable + n_coeffs, frozen


def _feature_state(store_like: dict, frozen: dict) -> fm.FeatureState:
    return fm.FeatureState(
        trainable={k: v for k, v in store_like.items() if k.startswith("feat.")},
        frozen=frozen,
    )


def graph_params(store: ParamStore, graph: ad.ExprGraph) -> dict[str, np.ndarray]:
    """One parameter leaf per scalar of the store, as object arrays of nodes.

    Leaf names are ``"<slice>[<flat index>]"``; leaves are shared if this is
    called again on the same graph.
    """
    out = {}
    for name in store.names():
        vals = store.get(name)
        flat = np.array([graph.param(f"{name}[{i}]", float(v)) for i, v in enumerate(vals.reshape(-1))],
                        dtype=object)
        out[name] = flat.reshape(vals.shape) if vals.shape else flat[0]
    return out


def param_leaves(store: ParamStore, graph: ad.ExprGraph) -> list[ad.Node]:
    """Parameter leaves in flat-vector order (matching ``store.values``)."""
    leaves = []
    for name in store.names():
        off, n = store.span(name)
        leaves.extend(graph.param(f"{name}[{i}]", float(store.values[off + i])) for i in range(n))
    return leaves


def forward(spec: NetworkSpec, params: ParamStore, x, graph: ad.ExprGraph, leaves: dict | None = None) -> list:
    """Network outputs at one point ``x`` through the scalar graph route.

    Every value of ``params`` becomes a parameter leaf of ``graph``; pass the
    result of :func:`graph_params` as ``leaves`` to skip the lookup on
    repeated calls.
    """
    if len(x) != spec.input_dim:
        raise fm.ConfigError(f"expected {spec.input_dim} inputs, got {len(x)}")
    frozen = params.frozen
    params = graph_params(params, graph) if leaves is None else leaves
    h = fm.apply(spec.feature, _feature_state(params, frozen), x, graph)
    sizes = spec.layer_sizes
    n_layers = len(sizes) - 1
    for i in range(n_layers):
        W, b = params[f"layer{i}.W"], params[f"layer{i}.b"]
        z = []
        for j in range(W.shape[1]):
            s = b[j]
            for k in range(W.shape[0]):
                s = s + h[k] * W[k, j]
            z.append(s)
        h = [ad.tanh(v) for v in z] if i < n_layers - 1 else z
    return h


def forward_jet(spec: NetworkSpec, params: dict, frozen: dict, x: J.Jet) -> J.Jet:
    """Batched network outputs as a jet of shape (N, output_dim)."""
    h = fm.apply_jet(spec.feature, params, frozen, x)
    n_layers = len(spec.layer_sizes) - 1
    for i in range(n_layers):
        h = h @ params[f"layer{i}.W"] + params[f"layer{i}.b"]
        if i < n_layers - 1:
            h = J.tanh(h)
    return h


def predict(spec: NetworkSpec, store: ParamStore, X) -> np.ndarray:
    """Plain network outputs for points of shape (N, n)."""
    X = jnp.asarray(np.asarray(X, dtype=np.float64))
    params = {k: jnp.asarray(v) for k, v in store.unflatten(store.values).items()}
    return np.asarray(forward_jet(spec, params, store.frozen, J.seed_inputs(X, ())).val)


MAGIC = "# pinn-featlab checkpoint v1"


def save_checkpoint(path, store: ParamStore, spec: NetworkSpec | None = None, meta: dict | None = None) -> None:
    """Write ``store`` as a plain-text manifest followed by little-endian float64 data.

    Layout::

        # pinn-featlab checkpoint v1
        netspec <json>            (optional)
        meta <json>               (optional)
        trainable <total>
        <name> <offset> <length> <shape, comma separated or '-' for scalars>
        ...
        frozen <total>
        <name> <offset> <length> <shape>
        ...
        end
        <trainable values><frozen values>   (raw '<f8')
    """
    lines = [MAGIC]
    if spec is not None:
        lines.append("netspec " + json.dumps(spec.to_dict(), sort_keys=True))
    if meta:
        lines.append("meta " + json.dumps(meta, sort_keys=True))
    lines.append(f"trainable {store.size}")
    for name, (off, shape) in store.slices.items():
        n = int(np.prod(shape)) if shape else 1
        lines.append(f"{name} {off} {n} {','.join(map(str, shape)) or '-'}")
    frozen_vals = []
    off = 0
    frozen_lines = []
    for name, arr in store.frozen.items():
        arr = np.asarray(arr, dtype=np.float64)
        frozen_lines.append(f"{name} {off} {arr.size} {','.join(map(str, arr.shape)) or '-'}")
        frozen_vals.append(arr.reshape(-1))
        off += arr.size
    lines.append(f"frozen {off}")
    lines.extend(frozen_lines)
    lines.append("end")
    blob = np.concatenate([store.values] + frozen_vals) if frozen_vals else store.values
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(np.asarray(blob, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamStore, NetworkSpec | None, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    head_end = raw.index(b"\nend\n") + len(b"\nend\n")
    lines = raw[:head_end].decode("ascii").splitlines()
    if lines[0] != MAGIC:
        raise ValueError(f"{path}: not a pinn-featlab checkpoint")
    data = np.frombuffer(raw[head_end:], dtype="<f8").astype(np.float64)
    spec = None
    meta = {}
    layout, frozen_entries = {}, []
    section = None
    n_train = 0
    for line in lines[1:]:
        if line == "end":
            break
        key, _, rest = line.partition(" ")
        if key == "netspec":
            spec = NetworkSpec.from_dict(json.loads(rest))
        elif key == "meta":
            meta = json.loads(rest)
        elif key in ("trainable", "frozen"):
            section = key
            if key == "trainable":
                n_train = int(rest)
        else:
            off, n, shape = rest.split()
            shape = () if shape == "-" else tuple(int(s) for s in shape.split(","))
            if section == "trainable":
                layout[key] = shape
            else:
                frozen_entries.append((key, int(off), int(n), shape))
    frozen = {name: data[n_train + off:n_train + off + n].reshape(shape) for name, off, n, shape in frozen_entries}
    store = ParamStore(layout, data[:n_train], frozen)
    return store, spec, meta
