"""
Recovering Lorenz coefficients from observations
================================================

The coefficients start at 1.0 and are trained together with the network.
Observations are 100 points of an RK4 trajectory with alpha=10, beta=8/3,
rho=15, optionally with noise.

At the default 20000 iterations the recovery fails: the network does not fit
the sharp bursts of the trajectory, and the coefficients stay far from the
truth. Raise the iteration count to explore.
"""
import sys

from pinn_featlab import bench, pde, train

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 20000
problem = pde.make_problem("i-lorenz")
spec = bench.network_for(problem, bench.mapping_spec("rbf-p", problem))

for noise in (0.0, 0.005):
    cfg = bench.train_config(problem, seed=0, iterations=iters, noise_pct=noise, log_every=2000)
    store, trace = train.fit(problem, spec, cfg)
    got = trace.final_coeffs
    print(f"noise {noise:.1%}:", {k: round(v, 4) for k, v in got.items()},
          "errors", {k: f"{abs(got[k] - v) / v:.2%}" for k, v in problem.inverse_coeffs.items()})
