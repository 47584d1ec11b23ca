import math

import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinn_featlab import autodiff as ad
from pinn_featlab import featmap as fm
from pinn_featlab import jet as J

SMALL = {
    "identity": dict(),
    "be": dict(m=3),
    "pe": dict(m=3, sigma=10.0),
    "ff": dict(m=4, sigma=1.0),
    "sf": dict(m=5),
    "ct": dict(m=4),
    "cg": dict(m=9, sigma=0.3),
    "rbf": dict(m=6),
    "rbf-p": dict(m=6, k_poly=4),
}


def graph_features(spec, state, x):
    """Features at one point through the scalar graph, plus their input derivatives."""
    g = ad.ExprGraph()
    xs = [g.input(f"x{i}", float(v)) for i, v in enumerate(x)]
    out = fm.apply(spec, state, xs, g)
    return g, xs, out


def value(v):
    return v.value if isinstance(v, ad.Node) else float(v)


class TestSpec:
    def test_validation(self):
        with pytest.raises(fm.ConfigError):
            fm.FeatureMapSpec("ff", m=0)
        with pytest.raises(fm.ConfigError):
            fm.FeatureMapSpec("rbf-p", k_poly=-1)
        with pytest.raises(fm.ConfigError):
            fm.FeatureMapSpec("ff", sigma=0.0)
        with pytest.raises(ValueError):
            fm.FeatureMapSpec("wavelet")

    def test_roundtrip(self):
        s = fm.FeatureMapSpec("rbf-p", m=32, sigma=2.0, rbf_kind="imq", k_poly=5, seed=3)
        assert fm.FeatureMapSpec.from_dict(s.to_dict()) == s

    @pytest.mark.parametrize("family,n,width", [
        ("be", 2, 2 * 3 * 2), ("pe", 3, 2 * 3 * 3), ("ff", 2, 8), ("sf", 2, 5), ("ct", 3, 12),
        ("cg", 2, 9), ("rbf", 2, 6), ("rbf-p", 2, 10), ("identity", 4, 4)])
    def test_out_width(self, family, n, width):
        spec = fm.FeatureMapSpec(family, **SMALL[family])
        assert fm.out_width(spec, n) == width
        state = fm.init(spec, n, 0)
        assert len(fm.apply(spec, state, [0.1] * n)) == width

    def test_cg_guard(self):
        with pytest.raises(fm.ConfigError):
            fm.out_width(fm.FeatureMapSpec("cg", m=5000), 2)

    def test_monomials_graded_lex(self):
        assert fm.monomial_exponents(2, 6) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
        assert len(fm.monomial_exponents(3, 20)) == 20


class TestInit:
    @pytest.mark.parametrize("family", sorted(SMALL))
    def test_deterministic(self, family):
        spec = fm.FeatureMapSpec(family, **SMALL[family])
        a, b = fm.init(spec, 2, 5), fm.init(spec, 2, 5)
        for part in ("trainable", "frozen"):
            da, db = getattr(a, part), getattr(b, part)
            assert da.keys() == db.keys()
            for k in da:
                assert np.array_equal(da[k], db[k])

    def test_trainability_partition(self):
        ff = fm.init(fm.FeatureMapSpec("ff", m=8), 2, 0)
        assert not ff.trainable and set(ff.frozen) == {"feat.B"}
        sf = fm.init(fm.FeatureMapSpec("sf", m=8), 2, 0)
        assert set(sf.trainable) == {"feat.W", "feat.b"} and not sf.frozen
        for fam in ("be", "pe", "ct", "cg"):
            assert not fm.init(fm.FeatureMapSpec(fam, m=4), 2, 0).trainable
        rbf = fm.init(fm.FeatureMapSpec("rbf"), 2, 0)
        assert set(rbf.trainable) == {"feat.centers", "feat.log_widths"}
        assert set(fm.init(fm.FeatureMapSpec("rbf", rbf_kind="mq"), 2, 0).trainable) == {"feat.centers"}

    def test_rbf_centers_shape_and_widths(self):
        st_ = fm.init(fm.FeatureMapSpec("rbf", m=128), 2, 0)
        assert st_.trainable["feat.centers"].shape == (128, 2)
        w = np.exp(st_.trainable["feat.log_widths"])
        assert np.all((w >= 0.5) & (w <= 1.5))

    def test_sf_init_bounds(self):
        st_ = fm.init(fm.FeatureMapSpec("sf", m=500), 4, 0)
        assert np.abs(st_.trainable["feat.W"]).max() <= 0.5
        assert np.abs(st_.trainable["feat.b"]).max() <= 0.5

    def test_ladders(self):
        be = fm.init(fm.FeatureMapSpec("be", m=4), 1, 0)
        np.testing.assert_array_equal(be.frozen["feat.freqs"], [1, 2, 4, 8])
        pe = fm.init(fm.FeatureMapSpec("pe", m=4, sigma=16.0), 1, 0)
        np.testing.assert_allclose(pe.frozen["feat.freqs"], [1, 2, 4, 8], rtol=1e-15)


class TestApply:
    def test_rbf_at_isolated_center(self):
        spec = fm.FeatureMapSpec("rbf", m=3)
        state = fm.FeatureState(trainable={"feat.centers": np.array([[0.0, 0.0], [50.0, 0.0], [0.0, -50.0]]),
                                           "feat.log_widths": np.zeros(3)})
        out = [value(v) for v in fm.apply(spec, state, [0.0, 0.0])]
        assert out[0] == pytest.approx(1.0, abs=1e-15)
        assert max(out[1:]) < 1e-300
        assert sum(out) == pytest.approx(1.0, abs=1e-15)

    def test_single_fourier_frequency_kernel(self):
        b = 0.8
        spec = fm.FeatureMapSpec("ff", m=1)
        state = fm.FeatureState(frozen={"feat.B": np.array([[b]])})
        rng = np.random.default_rng(42)
        for x, y in rng.uniform(-2, 2, (100, 2)):
            fx, fy = fm.apply(spec, state, [x]), fm.apply(spec, state, [y])
            assert fx[0] * fy[0] + fx[1] * fy[1] == pytest.approx(math.cos(2 * math.pi * b * (x - y)), abs=1e-14)

    def test_rbf_p_monomials(self):
        spec = fm.FeatureMapSpec("rbf-p", m=4, k_poly=3)
        out = fm.apply(spec, fm.init(spec, 1, 0), [0.5])
        assert [value(v) for v in out[-3:]] == [1.0, 0.5, 0.25]

    def test_polynomials_not_normalized(self):
        spec = fm.FeatureMapSpec("rbf-p", m=5, k_poly=6)
        F = fm.features(spec, fm.init(spec, 2, 0), [[0.3, -0.7]])
        np.testing.assert_allclose(F[0, 5:], [1, 0.3, -0.7, 0.09, -0.21, 0.49], rtol=1e-15)

    def test_radial_profiles(self):
        r = 0.7
        expect = {"cubic": r ** 3, "tps": r * r * math.log(r), "mq": math.sqrt(1 + r * r),
                  "imq": 1 / math.sqrt(1 + r * r)}
        for kind, v in expect.items():
            assert fm.radial(kind, r * r) == pytest.approx(v, rel=1e-14)
        assert fm.radial("gaussian", r * r, math.log(0.5)) == pytest.approx(math.exp(-r * r / 0.25), rel=1e-14)
        assert fm.radial("tps", 0.0) == 0.0

    def test_radial_symmetry(self):
        rng = np.random.default_rng(1)
        for kind in fm.RbfKind:
            spec = fm.FeatureMapSpec("rbf", m=1, rbf_kind=kind)
            for _ in range(20):
                x, c = rng.normal(size=2), rng.normal(size=2)
                lw = {"feat.log_widths": np.zeros(1)} if kind is fm.RbfKind.GAUSSIAN else {}
                r2a = float(np.sum((x - c) ** 2))
                r2b = float(np.sum((c - x) ** 2))
                assert fm.radial(kind, r2a, 0.0) == fm.radial(kind, r2b, 0.0)
                assert len(fm.apply(spec, fm.FeatureState({"feat.centers": c[None], **lw}), list(x))) == 1

    def test_ct_hat_shape(self):
        spec = fm.FeatureMapSpec("ct", m=3)
        out = [value(v) for v in fm.apply(spec, fm.init(spec, 1, 0), [0.25])]
        np.testing.assert_allclose(out, [0.5, 0.5, 0.0], atol=1e-15)

    def test_cg_kronecker(self):
        spec = fm.FeatureMapSpec("cg", m=4, sigma=0.5)
        x = [0.2, 0.9]
        out = np.array([value(v) for v in fm.apply(spec, fm.init(spec, 2, 0), x)])
        g = lambda t: np.exp(-0.5 * (np.array([x[0], x[1]])[:, None] - t) ** 2 / 0.25)
        G = g(np.array([0.0, 1.0]))
        np.testing.assert_allclose(out, np.kron(G[0], G[1]), rtol=1e-14)


class TestNormalization:
    @pytest.mark.parametrize("kind", [k.value for k in fm.RbfKind])
    @pytest.mark.parametrize("family", ["rbf", "rbf-p"])
    def test_partition_of_unity(self, kind, family):
        spec = fm.FeatureMapSpec(family, m=128, rbf_kind=kind, k_poly=10 if family == "rbf-p" else 0)
        X = np.random.default_rng(0).uniform(-1.5, 1.5, (1000, 2))
        F = fm.features(spec, fm.init(spec, 2, 0), X)
        np.testing.assert_allclose(F[:, :128].sum(axis=1), 1.0, atol=1e-12, rtol=0)

    @given(st.floats(-3, 3), st.floats(-3, 3), st.sampled_from([k.value for k in fm.RbfKind]))
    @settings(max_examples=50, deadline=None)
    def test_partition_of_unity_graph_route(self, x, y, kind):
        spec = fm.FeatureMapSpec("rbf", m=7, rbf_kind=kind)
        out = fm.apply(spec, fm.init(spec, 2, 3), [x, y])
        assert sum(value(v) for v in out) == pytest.approx(1.0, abs=1e-12)


class TestKernel:
    def test_ff_gram_shift_invariant(self):
        spec = fm.FeatureMapSpec("ff", m=64, sigma=3.0)
        state = fm.init(spec, 2, 0)
        rng = np.random.default_rng(42)
        for _ in range(100):
            x, y, d = rng.uniform(-1, 1, (3, 2))
            K1 = fm.empirical_kernel(spec, state, np.stack([x, y]))
            K2 = fm.empirical_kernel(spec, state, np.stack([x + d, y + d]))
            assert abs(K1[0, 1] - K2[0, 1]) < 1e-9

    def test_ff_diagonal_and_psd(self):
        spec = fm.FeatureMapSpec("ff", m=16)
        X = np.random.default_rng(0).uniform(-1, 1, (50, 2))
        K = fm.empirical_kernel(spec, fm.init(spec, 2, 0), X)
        np.testing.assert_allclose(np.diag(K), 16.0, rtol=1e-13)
        assert np.array_equal(K, K.T)
        assert np.linalg.eigvalsh(K).min() > -1e-9

    def test_gaussian_rbf_kernel_bounded(self):
        spec = fm.FeatureMapSpec("rbf", m=32)
        X = np.random.default_rng(0).uniform(-1, 1, (60, 2))
        K = fm.empirical_kernel(spec, fm.init(spec, 2, 0), X)
        assert K.max() <= 1.0 + 1e-12
        assert np.linalg.eigvalsh(K).min() > -1e-9

    def test_point_limit(self):
        spec = fm.FeatureMapSpec("ff", m=2)
        with pytest.raises(fm.ConfigError):
            fm.empirical_kernel(spec, fm.init(spec, 1, 0), np.zeros((2049, 1)))


class TestDerivatives:
    @pytest.mark.parametrize("family", sorted(SMALL))
    def test_input_derivatives_match_fd(self, family):
        spec = fm.FeatureMapSpec(family, **SMALL[family])
        state = fm.init(spec, 2, 0)
        x0 = np.array([0.31, -0.17])  # off the CT kinks
        g, xs, out = graph_features(spec, state, x0)
        h = 1e-5
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            fp = fm.features(spec, state, [x0 + e])[0]
            fmn = fm.features(spec, state, [x0 - e])[0]
            ref = (fp - fmn) / (2 * h)
            got = np.array([ad.derive(g, o, xs[k]).value if isinstance(o, ad.Node) else 0.0 for o in out])
            np.testing.assert_allclose(got, ref, rtol=1e-5, atol=1e-7)

    @pytest.mark.parametrize("family", ["be", "pe", "ff", "sf", "cg", "rbf", "rbf-p"])
    def test_second_derivatives_match_fd(self, family):
        spec = fm.FeatureMapSpec(family, **SMALL[family])
        state = fm.init(spec, 2, 0)
        x0 = np.array([0.31, -0.17])
        g, xs, out = graph_features(spec, state, x0)
        h = 1e-4
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            F = [fm.features(spec, state, [x0 + s * e])[0] for s in (1, 0, -1)]
            ref = (F[0] - 2 * F[1] + F[2]) / h ** 2
            got = []
            for o in out:
                if isinstance(o, ad.Node):
                    got.append(ad.derive(g, ad.derive(g, o, xs[k]), xs[k]).value)
                else:
                    got.append(0.0)
            np.testing.assert_allclose(got, ref, rtol=1e-4, atol=2e-4 * max(1.0, np.abs(ref).max()))

    @pytest.mark.parametrize("family,kind", [(f, "gaussian") for f in sorted(SMALL)] + [
        (f, k) for f in ("rbf", "rbf-p") for k in ("cubic", "tps", "mq", "imq")])
    def test_jet_route_matches_graph_route(self, family, kind):
        spec = fm.FeatureMapSpec(family, rbf_kind=kind, **SMALL[family])
        state = fm.init(spec, 2, 0)
        X = np.random.default_rng(9).uniform(-0.9, 0.9, (4, 2))
        params = {k: jnp.asarray(v) for k, v in state.trainable.items()}
        jt = fm.apply_jet(spec, params, state.frozen, J.seed_inputs(jnp.asarray(X), (0, 1), (0, 1)))
        for i, x in enumerate(X):
            g, xs, out = graph_features(spec, state, x)
            for c, o in enumerate(out):
                assert value(o) == pytest.approx(float(jt.val[i, c]), abs=1e-12)
                if not isinstance(o, ad.Node):
                    continue
                for k in range(2):
                    d1 = ad.derive(g, o, xs[k])
                    assert d1.value == pytest.approx(float(jt.d[k][i, c]), abs=1e-10)
                    d2 = ad.derive(g, d1, xs[k]).value
                    ref = 0.0 if jt.dd[k] is None else float(jt.dd[k][i, c])
                    assert d2 == pytest.approx(ref, abs=1e-9 * max(1.0, abs(ref)))
