"""
Feature layers side by side
===========================

Each family lifts the input coordinates before the MLP. The radial basis
layers divide by their own sum, so every row of features adds up to one.
"""
import numpy as np

from pinn_featlab import bench, pde
from pinn_featlab import featmap as fm

X = np.random.default_rng(0).uniform(-1, 1, (5, 2))
problem = pde.make_problem("burgers")

# default layer of each family (sigma and polynomial count per family)
for family in ("be", "pe", "ff", "sf", "ct", "cg", "rbf", "rbf-p"):
    spec = bench.mapping_spec(family, problem)
    F = fm.features(spec, fm.init(spec, 2, 0), X)
    print(f"{family:6s} width {F.shape[1]:4d}  first row {np.round(F[0, :4], 3)}")

# partition of unity for every radial profile
for kind in fm.RbfKind:
    spec = fm.FeatureMapSpec("rbf", m=128, rbf_kind=kind)
    F = fm.features(spec, fm.init(spec, 2, 0), X)
    print(f"{kind.value:9s} row sums {np.round(F.sum(axis=1), 14)}")

# the Fourier Gram matrix only depends on x - y
spec = fm.FeatureMapSpec("ff", m=128, sigma=5.0)
state = fm.init(spec, 2, 0)
a, b, d = np.array([0.1, 0.2]), np.array([-0.3, 0.5]), np.array([0.4, -0.7])
k1 = fm.empirical_kernel(spec, state, np.stack([a, b]))[0, 1]
k2 = fm.empirical_kernel(spec, state, np.stack([a + d, b + d]))[0, 1]
print("FF kernel before/after shift:", k1, k2)
