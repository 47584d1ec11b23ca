"""
Derivatives on the expression graph
===================================

Every derivative is itself a graph node, so it can be differentiated again.
That is what a PDE residual needs: u_xx first, then d(residual)/d(theta).
"""
import math

from pinn_featlab import autodiff as ad

g = ad.ExprGraph()
x = g.input("x", 0.3)
w = g.param("w", 2.0)

# u(x) = tanh(w x) sin(pi x)
u = ad.tanh(w * x) * ad.sin(math.pi * x)
u_x = ad.derive(g, u, x)
u_xx = ad.derive(g, u_x, x)
print("u, u_x, u_xx at x=0.3:", u.value, u_x.value, u_xx.value)

# a toy residual and its gradient with respect to the parameter
r = u_xx + math.pi ** 2 * u
loss = r * r
print("d loss / d w:", ad.grad_all(g, loss, [w])[0])

# finite differences agree
h = 1e-6
vals = [g.evaluate({"w": 2.0 + s * h})[loss.id] for s in (1, -1)]
g.evaluate({"w": 2.0})
print("central difference:", (vals[0] - vals[1]) / (2 * h))
