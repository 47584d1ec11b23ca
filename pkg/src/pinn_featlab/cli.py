"""Command-line entry point.

    pinn-featlab train --problem burgers --map rbf-p --poly 20 --seed 0 --out runs/
    pinn-featlab eval --checkpoint runs/train/burgers_rbf-p_0.ckpt
    pinn-featlab table1 --problem diffusion,burgers --map pe,rbf-p --seeds 0,1,2
    pinn-featlab scaling --dims 1..10 --mode uneven --map ff,rbf
    pinn-featlab ablate --kind rbf_count --problem diffusion
    pinn-featlab timing --counts 1000,10000 --map ff,rbf-p
    pinn-featlab dump --checkpoint runs/train/wave_ff_0.ckpt --resolution 101

Options may also come from an INI file (``--config run.ini``) with sections
``[run]``, ``[featmap]``, ``[net]`` and ``[train]``; flags win over file
values. Every command writes its resolved configuration as ``config.ini``
next to its outputs. Exit status: 0 success, 1 numerical abort, 2 usage.
"""
from __future__ import annotations

import argparse
import configparser
import io
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import featmap as fm
from . import train as T

COMMANDS = ("train", "eval", "table1", "scaling", "ablate", "timing", "dump")
# train keys settable from the [train] section; the rest come from flags or desk defaults
TRAIN_KEYS = ("iterations", "learning_rate", "lambda_r", "lambda_bc", "lambda_data", "resample_every",
              "n_r", "n_bc", "n_data", "noise_pct", "mode", "log_every")


class UsageError(ValueError):
    pass


def _split(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in str(text).split(",") if s.strip())


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in _split(text))
    except ValueError:
        raise UsageError(f"expected comma separated integers, got {text!r}") from None


def _dims(text: str) -> tuple[int, int]:
    a, sep, b = str(text).partition("..")
    try:
        lo, hi = (int(a), int(b)) if sep else (int(a), int(a))
    except ValueError:
        raise UsageError(f"--dims expects A..B, got {text!r}") from None
    if not 1 <= lo <= hi:
        raise UsageError(f"--dims range must satisfy 1 <= A <= B, got {text!r}")
    return lo, hi


@dataclass
class RunConfig:
    """Everything one CLI invocation needs; round-trips through :meth:`to_ini`."""

    command: str
    problems: tuple[str, ...] = ()
    mappings: tuple[str, ...] = ()
    features: int = 128
    poly: int | None = None
    rbf_kind: str = "gaussian"
    sigma: float | None = None
    hidden: tuple[int, ...] = (50, 50, 50, 50)
    train: dict = field(default_factory=dict)
    out: str = "runs"
    seeds: tuple[int, ...] = (0,)
    dims: tuple[int, int] = (1, 10)
    resolution: int = 101
    checkpoint: str = ""
    kind: str = "rbf_count"
    counts: tuple[int, ...] = (1000, 10000, 100000)

    def __post_init__(self):
        from . import bench as B
        from . import pde as P
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        for p in self.problems:
            try:
                P.make_problem(p)
            except KeyError:
                raise UsageError(f"unknown problem {p!r}") from None
        for m in self.mappings:
            if m not in fm.Family._value2member_map_:
                raise UsageError(f"unknown mapping {m!r}; choose from {', '.join(B.FAMILIES)}")
        if self.rbf_kind not in fm.RbfKind._value2member_map_:
            raise UsageError(f"unknown rbf kind {self.rbf_kind!r}")
        if self.kind not in B.ABLATIONS:
            raise UsageError(f"unknown ablation {self.kind!r}; choose from {', '.join(B.ABLATIONS)}")
        bad = set(self.train) - set(TRAIN_KEYS)
        if bad:
            raise UsageError(f"unknown train keys: {sorted(bad)}")
        if self.train.get("mode", "even") not in ("even", "uneven"):
            raise UsageError("mode must be even or uneven")
        if not self.seeds:
            raise UsageError("at least one seed is required")
        if self.features < 1 or self.resolution < 2 or any(h < 1 for h in self.hidden):
            raise UsageError("features, resolution and layer widths must be positive")
        if self.command == "train" and len(self.problems) != 1:
            raise UsageError("train needs exactly one --problem")
        if self.command in ("eval", "dump") and not self.checkpoint:
            raise UsageError(f"{self.command} needs --checkpoint")

    # -- INI serialization ------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["run"] = {"command": self.command, "problem": ",".join(self.problems), "out": self.out,
                     "seeds": ",".join(map(str, self.seeds)), "dims": f"{self.dims[0]}..{self.dims[1]}",
                     "resolution": str(self.resolution), "checkpoint": self.checkpoint, "kind": self.kind,
                     "counts": ",".join(map(str, self.counts))}
        cp["featmap"] = {"map": ",".join(self.mappings), "features": str(self.features),
                         "poly": "" if self.poly is None else str(self.poly), "rbf_kind": self.rbf_kind,
                         "sigma": "" if self.sigma is None else repr(float(self.sigma))}
        cp["net"] = {"hidden": ",".join(map(str, self.hidden))}
        cp["train"] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in sorted(self.train.items())}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, command: str | None = None) -> "RunConfig":
        return cls(**_ini_values(text, command))


_INI_KEYS = {
    "run": {"command", "problem", "out", "seeds", "seed", "dims", "resolution", "checkpoint", "kind", "counts"},
    "featmap": {"map", "features", "poly", "rbf_kind", "sigma"},
    "net": {"hidden"},
    "train": set(TRAIN_KEYS),
}

_TRAIN_DEFAULTS = T.TrainConfig().to_dict()


def _train_value(key: str, text: str):
    kind = type(_TRAIN_DEFAULTS[key])
    try:
        return kind(text)
    except ValueError:
        raise UsageError(f"bad value for {key}: {text!r}") from None


def _ini_values(text: str, command: str | None = None) -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config file: {exc}") from None
    out: dict = {}
    for section in cp.sections():
        if section not in _INI_KEYS:
            raise UsageError(f"unknown config section [{section}]")
        bad = set(cp[section]) - _INI_KEYS[section]
        if bad:
            raise UsageError(f"unknown keys in [{section}]: {sorted(bad)}")
    get = lambda s, k: cp[s][k] if cp.has_option(s, k) and cp[s][k] != "" else None
    if command or get("run", "command"):
        out["command"] = command or get("run", "command")
    conv = {
        ("run", "problem"): ("problems", _split),
        ("run", "out"): ("out", str),
        ("run", "seeds"): ("seeds", _ints),
        ("run", "seed"): ("seeds", _ints),
        ("run", "dims"): ("dims", _dims),
        ("run", "resolution"): ("resolution", int),
        ("run", "checkpoint"): ("checkpoint", str),
        ("run", "kind"): ("kind", str),
        ("run", "counts"): ("counts", _ints),
        ("featmap", "map"): ("mappings", _split),
        ("featmap", "features"): ("features", int),
        ("featmap", "poly"): ("poly", int),
        ("featmap", "rbf_kind"): ("rbf_kind", str),
        ("featmap", "sigma"): ("sigma", float),
        ("net", "hidden"): ("hidden", _ints),
    }
    for (s, k), (name, fn) in conv.items():
        v = get(s, k)
        if v is not None:
            try:
                out[name] = fn(v)
            except ValueError as exc:
                raise UsageError(f"bad value for [{s}] {k}: {v!r}") from exc
    if cp.has_section("train"):
        out["train"] = {k: _train_value(k, v) for k, v in cp["train"].items()}
    return out


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pinn-featlab", description="Feature-mapped PINN experiments.")
    p.add_argument("command", choices=COMMANDS)
    a = p.add_argument
    a("--config", help="INI file with [run], [featmap], [net], [train] sections")
    a("--problem", help="problem name, or comma separated list for table1/ablate")
    a("--map", help="feature mapping family, or comma separated list")
    a("--features", type=int, help="feature layer width (default 128)")
    a("--poly", type=int, help="polynomial terms for rbf-p")
    a("--rbf-kind", help="cubic, tps, gaussian, mq or imq")
    a("--sigma", type=float, help="frequency scale for ff, pe and cg")
    a("--hidden", help="hidden widths, e.g. 50,50,50,50")
    a("--iters", type=int, help="Adam iterations")
    a("--lr", type=float, help="learning rate")
    a("--lambda-r", type=float)
    a("--lambda-bc", type=float)
    a("--lambda-data", type=float)
    a("--n-r", type=int, help="interior collocation points")
    a("--n-bc", type=int, help="boundary points")
    a("--n-data", type=int, help="observations for inverse problems")
    a("--resample", type=int, help="redraw interior points every N iterations")
    a("--log-every", type=int)
    a("--noise-pct", type=float, help="observation noise as a fraction of the RMS signal")
    a("--mode", help="even or uneven sampling")
    a("--seed", help="single seed")
    a("--seeds", help="comma separated seeds")
    a("--out", help="output directory")
    a("--dims", help="dimension range A..B for scaling")
    a("--resolution", type=int, help="grid points per axis for dump")
    a("--checkpoint", help="checkpoint file for eval and dump")
    a("--kind", help="ablation: rbf_count, poly_count or rbf_type")
    a("--counts", help="sample counts for timing")
    return p


_FLAG_TRAIN = {"iters": "iterations", "lr": "learning_rate", "lambda_r": "lambda_r", "lambda_bc": "lambda_bc",
               "lambda_data": "lambda_data", "n_r": "n_r", "n_bc": "n_bc", "n_data": "n_data",
               "resample": "resample_every", "log_every": "log_every", "noise_pct": "noise_pct", "mode": "mode"}


def parse(argv, config_text: str | None = None) -> RunConfig:
    """Flags override values from ``config_text`` (or the ``--config`` file)."""
    argv = list(argv)
    if not argv:
        raise UsageError("no command given")
    ns = build_parser().parse_args(argv)
    if ns.config is not None and config_text is None:
        try:
            config_text = Path(ns.config).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
    vals = _ini_values(config_text, ns.command) if config_text else {"command": ns.command}
    vals["command"] = ns.command
    direct = {"problem": ("problems", _split), "map": ("mappings", _split), "features": ("features", int),
              "poly": ("poly", int), "rbf_kind": ("rbf_kind", str), "sigma": ("sigma", float),
              "hidden": ("hidden", _ints), "seed": ("seeds", _ints), "seeds": ("seeds", _ints),
              "out": ("out", str), "dims": ("dims", _dims), "resolution": ("resolution", int),
              "checkpoint": ("checkpoint", str), "kind": ("kind", str), "counts": ("counts", _ints)}
    for flag, (name, fn) in direct.items():
        v = getattr(ns, flag)
        if v is not None:
            vals[name] = fn(v)
    train = dict(vals.get("train", {}))
    for flag, key in _FLAG_TRAIN.items():
        v = getattr(ns, flag)
        if v is not None:
            train[key] = v
    vals["train"] = train
    return RunConfig(**vals)


# ---------------------------------------------------------------------------
# commands


def _summary(*parts) -> None:
    print(" ".join(str(p) for p in parts), flush=True)


def _fmt(v) -> str:
    return "nan" if v is None else f"{float(v):.4e}"


_DEFAULT_MAPS = {"train": ("rbf-p",), "table1": ("pe", "ff", "rbf-p"), "scaling": ("ff", "rbf"),
                 "timing": ("pe", "ff", "rbf", "rbf-p")}


def _mappings(cfg: RunConfig) -> tuple[str, ...]:
    return cfg.mappings or _DEFAULT_MAPS.get(cfg.command, ("rbf-p",))


def _cell_kw(cfg: RunConfig) -> dict:
    t = cfg.train
    kw = dict(sigma=cfg.sigma, k_poly=cfg.poly, rbf_kind=cfg.rbf_kind, lr=t.get("learning_rate"),
              lambda_r=t.get("lambda_r"), lambda_bc=t.get("lambda_bc"), lambda_data=t.get("lambda_data"),
              n_r=t.get("n_r"), n_bc=t.get("n_bc"), n_data=t.get("n_data"),
              resample_every=t.get("resample_every"), noise_pct=t.get("noise_pct"))
    return {k: v for k, v in kw.items() if v is not None}


def _write_config(d: Path, cfg: RunConfig) -> None:
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.ini").write_text(cfg.to_ini())


def _cmd_train(cfg: RunConfig) -> int:
    from . import bench as B
    from . import net as N
    from . import pde as P

    problem = P.make_problem(cfg.problems[0])
    d = Path(cfg.out) / "train"
    _write_config(d, cfg)
    for mapping in _mappings(cfg):
        feat = B.mapping_spec(mapping, problem, width=cfg.features, sigma=cfg.sigma, k_poly=cfg.poly,
                              rbf_kind=cfg.rbf_kind)
        spec = B.network_for(problem, feat, cfg.hidden)
        for seed in cfg.seeds:
            tc = B.train_config(problem, seed, **cfg.train)
            store, trace = T.fit(problem, spec, tc)
            stem = f"{problem.name}_{mapping}_{seed}"
            trace.write_csv(d / f"{stem}.csv")
            N.save_checkpoint(d / f"{stem}.ckpt", store, spec, {"problem": problem.name, "seed": seed})
            if problem.reference is not None:
                metric = f"rel_l2={_fmt(B.rel_l2(spec, store, problem))}"
            else:
                metric = f"loss={_fmt(trace.rows[-1][1])}"
            co = " ".join(f"{k}={v:.6g}" for k, v in trace.final_coeffs.items())
            _summary(problem.name, mapping, f"seed={seed}", metric, co)
    return 0


def _load(cfg: RunConfig):
    from . import net as N
    from . import pde as P
    try:
        store, spec, meta = N.load_checkpoint(cfg.checkpoint)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load checkpoint: {exc}") from None
    name = cfg.problems[0] if cfg.problems else meta.get("problem")
    if not name or spec is None:
        raise UsageError("checkpoint lacks a problem name or network spec; pass --problem")
    problem = P.make_problem(name)
    if spec.input_dim != problem.input_dim or spec.output_dim != problem.output_dim:
        raise UsageError(f"checkpoint network does not fit problem {name}")
    return problem, spec, store


def _cmd_eval(cfg: RunConfig) -> int:
    from . import bench as B
    from . import pde as P
    problem, spec, store = _load(cfg)
    r, b = B.residual_mse(problem, spec, store, P.sample(problem, 2048, 256, seed=10_000 + cfg.seeds[0]))
    rel = B.rel_l2(spec, store, problem) if problem.reference is not None else None
    d = Path(cfg.out) / "eval"
    _write_config(d, cfg)
    B._write_csv(d / f"{problem.name}_{spec.feature.family.value}_{cfg.seeds[0]}.csv",
                 ("problem", "mapping", "rel_l2", "residual_mse", "bc_mse"),
                 [[problem.name, spec.feature.family.value, "" if rel is None else repr(rel), repr(r), repr(b)]])
    _summary(problem.name, spec.feature.family.value, f"rel_l2={_fmt(rel)}", f"residual_mse={_fmt(r)}")
    return 0


def _report_summary(reports) -> None:
    from . import bench as B
    for s in B.summarize(reports):
        _summary(s["problem"], s["mapping"], f"rel_l2={_fmt(s['mean'])}+-{_fmt(s['std'])}", f"n={s['n']}")


def _cmd_table1(cfg: RunConfig) -> int:
    from . import bench as B
    problems = cfg.problems or ("diffusion", "burgers", "wave")
    iters = cfg.train.get("iterations", 20000)
    _write_config(Path(cfg.out) / "table1", cfg)
    reps = B.run_table1(problems, _mappings(cfg), cfg.seeds, iters, out_dir=cfg.out, **_cell_kw(cfg))
    _report_summary(reps)
    return 1 if any(r.status == "abort" for r in reps) else 0


def _cmd_scaling(cfg: RunConfig) -> int:
    from . import bench as B
    mode = cfg.train.get("mode", "uneven")
    iters = cfg.train.get("iterations", 5000)
    _write_config(Path(cfg.out) / f"scaling-{mode}", cfg)
    curve = B.run_scaling(range(cfg.dims[0], cfg.dims[1] + 1), mode, _mappings(cfg), cfg.seeds, iters,
                          out_dir=cfg.out, **_cell_kw(cfg))
    for c in curve:
        _summary(f"poisson-nd{c['D']}", c["mapping"], f"rel_l2={_fmt(c['mean'])}+-{_fmt(c['std'])}")
    return 1 if any(c["n"] < len(cfg.seeds) for c in curve) else 0


def _cmd_ablate(cfg: RunConfig) -> int:
    from . import bench as B
    problems = cfg.problems or ("diffusion",)
    iters = cfg.train.get("iterations", 20000)
    _write_config(Path(cfg.out) / f"ablate-{cfg.kind}", cfg)
    kw = _cell_kw(cfg)
    kw.pop({"rbf_count": "m", "poly_count": "k_poly", "rbf_type": "rbf_kind"}[cfg.kind], None)
    reps = B.run_ablations(cfg.kind, problems, cfg.seeds, iters, out_dir=cfg.out, **kw)
    _report_summary(reps)
    return 1 if any(r.status == "abort" for r in reps) else 0


def _cmd_timing(cfg: RunConfig) -> int:
    from . import bench as B
    problem = cfg.problems[0] if cfg.problems else "burgers"
    _write_config(Path(cfg.out) / "timing", cfg)
    rows = B.run_timing(cfg.counts, _mappings(cfg), problem, out_dir=cfg.out)
    for r in rows:
        _summary(problem, r["mapping"], f"count={r['count']}", f"s_per_iter={r['seconds']:.4g}")
    return 0


def _cmd_dump(cfg: RunConfig) -> int:
    from . import bench as B
    problem, spec, store = _load(cfg)
    if problem.input_dim > 3:
        raise UsageError("dump supports problems with at most three input axes")
    d = Path(cfg.out) / "dump"
    _write_config(d, cfg)
    path = d / f"{problem.name}_{spec.feature.family.value}_{cfg.seeds[0]}.csv"
    header, rows = B.dump_field(spec, store, problem, cfg.resolution, path)
    err = ""
    if problem.reference is not None:
        k = problem.input_dim + problem.output_dim
        err = f"max_abs_err={_fmt(np.max(rows[:, k + problem.output_dim:]))}"
    _summary(problem.name, spec.feature.family.value, f"rows={len(rows)}", err)
    return 0


_DISPATCH = {"train": _cmd_train, "eval": _cmd_eval, "table1": _cmd_table1, "scaling": _cmd_scaling,
             "ablate": _cmd_ablate, "timing": _cmd_timing, "dump": _cmd_dump}


def run(cfg: RunConfig) -> int:
    try:
        return _DISPATCH[cfg.command](cfg)
    except T.NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse(argv)
        return run(cfg)
    except UsageError as exc:
        build_parser().print_usage(sys.stderr)
        print(f"pinn-featlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
