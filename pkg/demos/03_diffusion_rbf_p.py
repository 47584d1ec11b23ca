"""
Training a PINN on the diffusion problem
========================================

u_t = u_xx - e^{-t}(sin(pi x) - pi^2 sin(pi x)) on [-1, 1] x [0, 1] with
exact solution e^{-t} sin(pi x). The RBF-P network gets to about 1e-3
relative L2 in a few thousand Adam steps on a laptop core.
"""
import sys

from pinn_featlab import bench, pde, train

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 5000
problem = pde.make_problem("diffusion")

for mapping in ("pe", "rbf-p"):
    spec = bench.network_for(problem, bench.mapping_spec(mapping, problem))
    cfg = bench.train_config(problem, seed=0, iterations=iters, log_every=1000)
    store, trace = train.fit(problem, spec, cfg, log=print)
    print(mapping, "relative L2:", bench.rel_l2(spec, store, problem))

# the last network on a 51 x 51 grid, with reference and error columns
header, rows = bench.dump_field(spec, store, problem, 51, "diffusion_rbf-p.csv")
print("wrote diffusion_rbf-p.csv", header, rows.shape)
