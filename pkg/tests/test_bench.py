import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinn_featlab import bench as B
from pinn_featlab import featmap as fm
from pinn_featlab import net as N
from pinn_featlab import pde as P

TINY = dict(n_r=16, n_bc=4)


def wave_net(scale=1.0):
    spec = N.NetworkSpec(2, fm.FeatureMapSpec("sf", m=4), hidden=(), output_dim=1)
    store = N.init_params(spec, 0)
    store.set("feat.W", [[0.5, 1.0], [0.5, -1.0], [2.0, 4.0], [2.0, -4.0]])
    store.set("feat.b", np.zeros(4))
    store.set("layer0.W", scale * np.array([[0.5], [0.5], [0.25], [0.25]]))
    store.set("layer0.b", [0.0])
    return spec, store


def strip_wall(text):
    """Drop the trailing wall-clock column of every CSV row."""
    return [r.rsplit(",", 1)[0] for r in text.splitlines()]


class TestMetrics:
    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 10.0))
    def test_rel_l2_of_scaled_reference(self, c):
        spec, store = wave_net(c)
        assert B.rel_l2(spec, store, P.make_problem("wave")) == pytest.approx(abs(c - 1), abs=1e-12)

    def test_exact_network_scores_zero(self):
        spec, store = wave_net()
        assert B.rel_l2(spec, store, P.make_problem("wave")) < 1e-13

    @pytest.mark.parametrize("name", ["poisson", "ns"])
    def test_no_reference(self, name):
        p = P.make_problem(name)
        spec = B.network_for(p, fm.FeatureMapSpec("identity"), (3,))
        with pytest.raises(B.MetricError):
            B.rel_l2(spec, N.init_params(spec, 0), p)

    def test_eval_points(self):
        assert B.eval_points(P.make_problem("poisson-nd1")).shape == (1024, 1)
        X = B.eval_points(P.make_problem("wave"))
        assert X.shape == (256 * 256, 2)
        Xp = B.eval_points(P.make_problem("poisson"))
        assert 0 < len(Xp) < 256 * 256 and P.make_problem("poisson").inside(Xp).all()
        a, b = B.eval_points(P.make_problem("poisson-nd4")), B.eval_points(P.make_problem("poisson-nd4"))
        assert a.shape == (100_000, 4) and np.array_equal(a, b)
        assert B.eval_points(P.make_problem("poisson-nd3")).shape == (100_000, 3)

    def test_residual_mse_exact(self):
        spec, store = wave_net()
        p = P.make_problem("wave")
        r, b = B.residual_mse(p, spec, store, P.sample(p, 200, 40, seed=1))
        assert r < 1e-20 and b < 1e-20


class TestConfig:
    @pytest.mark.parametrize("family", [f for f in B.FAMILIES if f != "identity"])
    def test_default_widths(self, family):
        p = P.make_problem("burgers")
        s = B.mapping_spec(family, p)
        width = fm.out_width(s, 2)
        assert width == 128 + (s.k_poly if family == "rbf-p" else 0) or family in ("be", "cg")

    def test_rbf_p_poly_defaults(self):
        assert B.mapping_spec("rbf-p", P.make_problem("burgers")).k_poly == 10
        assert B.mapping_spec("rbf-p", P.make_problem("diffusion")).k_poly == 20
        assert B.mapping_spec("rbf-p", P.make_problem("diffusion"), k_poly=5).k_poly == 5

    def test_overrides(self):
        s = B.mapping_spec("rbf", P.make_problem("wave"), m=64, rbf_kind="imq")
        assert s.m == 64 and s.rbf_kind == fm.RbfKind.IMQ
        assert B.mapping_spec("ff", P.make_problem("wave"), sigma=5).sigma == 5.0

    def test_desk_counts(self):
        c = B.train_config(P.make_problem("poisson-nd7"), seed=3, iterations=9, n_r=None)
        assert (c.n_r, c.n_bc, c.seed, c.iterations) == (*B.DESK["poisson-nd"][:2], 3, 9)


class TestExperiments:
    def test_table1_rows_files_manifest(self, tmp_path):
        reps = B.run_table1(("diffusion", "poisson"), ("identity", "rbf-p"), (0, 1), iterations=3,
                            out_dir=tmp_path, **TINY)
        assert len(reps) == 2 * 2 * 2
        d = tmp_path / "table1"
        for r in reps:
            assert (d / f"{r.problem}_{r.mapping}_{r.seed}.csv").exists()
            assert r.status == "ok" and r.residual_mse >= 0
            assert (r.rel_l2 is None) == (r.problem == "poisson")
        man = (d / "manifest.txt").read_text().splitlines()
        assert man[0] == "experiment table1" and man[2] == "seeds 0 1"
        assert man[1].startswith("config_hash ") and len(man[1].split()[1]) == 16
        summary = (d / "summary.csv").read_text().splitlines()
        assert summary[0] == "problem,mapping,metric,mean,std,n,failed" and len(summary) == 5
        assert {row.split(",")[2] for row in summary[1:]} == {"rel_l2", "residual_mse"}
        assert len((d / "reports.csv").read_text().splitlines()) == 9

    def test_rerun_is_identical(self, tmp_path):
        for k in range(2):
            B.run_table1(("burgers",), ("rbf-p",), (0,), iterations=4, out_dir=tmp_path / str(k), **TINY)
        for name in ("burgers_rbf-p_0.csv", "reports.csv", "summary.csv", "manifest.txt"):
            a = (tmp_path / "0" / "table1" / name).read_text()
            b = (tmp_path / "1" / "table1" / name).read_text()
            assert strip_wall(a) == strip_wall(b) if name != "summary.csv" and name != "manifest.txt" else a == b

    def test_sigma_grid_keeps_best(self):
        reps = B.run_table1(("wave",), ("ff",), (0,), iterations=2, sigma_grid=True, **TINY)
        assert len(reps) == 1 and reps[0].mapping in ("ff-s1", "ff-s5", "ff-s10")

    def test_parallel_matches_serial(self, tmp_path):
        kw = dict(problems=("wave",), mappings=("identity", "ff"), seeds=(0,), iterations=3, **TINY)
        serial = B.run_table1(**kw)
        par = B.run_table1(workers=2, **kw)
        assert [(r.mapping, r.rel_l2) for r in serial] == [(r.mapping, r.rel_l2) for r in par]

    def test_inverse_with_noise(self, tmp_path):
        reps = B.run_inverse(("i-lorenz",), ("rbf-p",), (0,), iterations=3, noise={"i-lorenz": 0.005},
                             out_dir=tmp_path, n_r=16, n_data=20)
        assert [r.mapping for r in reps] == ["rbf-p", "rbf-p-noisy"]
        for r in reps:
            assert set(r.coeffs) == {"alpha", "beta", "rho"} and set(r.coeff_errors()) == set(r.coeffs)

    def test_scaling_curve(self, tmp_path):
        curve = B.run_scaling(range(1, 4), "uneven", ("ff", "rbf"), (0, 1), iterations=2, out_dir=tmp_path, **TINY)
        assert [(c["mapping"], c["D"]) for c in curve] == [(m, D) for m in ("ff", "rbf") for D in (1, 2, 3)]
        assert all(c["n"] == 2 and np.isfinite(c["std"]) for c in curve)
        lines = (tmp_path / "scaling-uneven" / "curve.csv").read_text().splitlines()
        assert lines[0] == "mapping,D,mean,std,n" and len(lines) == 7

    @pytest.mark.parametrize("kind,size", [("rbf_count", 3), ("poly_count", 4), ("rbf_type", 5)])
    def test_ablation_sizes(self, kind, size):
        reps = B.run_ablations(kind, ("diffusion",), (0,), iterations=1, **TINY)
        assert len(reps) == size and len({r.mapping for r in reps}) == size

    def test_unknown_ablation(self):
        with pytest.raises(ValueError):
            B.run_ablations("depth")

    def test_timing_table(self, tmp_path):
        rows = B.run_timing((16, 32), ("ff", "rbf-p"), warmup=1, repeats=2, out_dir=tmp_path)
        assert len(rows) == 4 and all(r["seconds"] >= 0 for r in rows)
        assert len((tmp_path / "timing" / "burgers_timing.csv").read_text().splitlines()) == 5


class TestDump:
    def test_wave_grid(self, tmp_path):
        spec, store = wave_net()
        p = P.make_problem("wave")
        header, rows = B.dump_field(spec, store, p, 21, tmp_path / "w.csv")
        assert header == ["x", "t", "u_pred", "u_ref", "u_abs_err"] and rows.shape == (21 * 21, 5)
        np.testing.assert_allclose(rows[:, 3], P.wave_exact(rows[:, :2])[:, 0], atol=1e-12, rtol=0)
        assert rows[:, 4].max() < 1e-13
        assert len((tmp_path / "w.csv").read_text().splitlines()) == 1 + 21 * 21

    def test_heat_time_slices(self):
        p = P.make_problem("heat")
        spec = B.network_for(p, fm.FeatureMapSpec("identity"), (3,))
        header, rows = B.dump_field(spec, N.init_params(spec, 0), p, 11, t_slices=(0.0, 0.5, 1.0))
        assert rows.shape[0] == 11 * 11 * 3 and header[:3] == list(p.axis_names)
        np.testing.assert_allclose(rows[:, 4], P.heat_exact(rows[:, :3])[:, 0], atol=1e-12, rtol=0)

    def test_holes_dropped(self):
        p = P.make_problem("poisson")
        spec = B.network_for(p, fm.FeatureMapSpec("identity"), (3,))
        header, rows = B.dump_field(spec, N.init_params(spec, 0), p, 41)
        assert len(header) == 3 and 0 < len(rows) < 41 * 41

    def test_too_many_axes(self):
        p = P.make_problem("poisson-nd4")
        spec = B.network_for(p, fm.FeatureMapSpec("identity"), (3,))
        with pytest.raises(ValueError):
            B.dump_field(spec, N.init_params(spec, 0), p)
