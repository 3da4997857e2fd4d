"""The reverse-mode tensor core, shown end to end on a tiny problem.

Builds a two-layer network by hand from Tensor ops, fits a noisy sine with
plain gradient steps, and cross-checks one analytic gradient against central
finite differences.
"""

import numpy as np

from mtglab.tensor import Tensor, ParamStore, glorot_uniform

rng = np.random.default_rng(0)
xs = np.linspace(-2.0, 2.0, 64).reshape(-1, 1)
ys = np.sin(2.0 * xs) + 0.05 * rng.standard_normal(xs.shape)

ps = ParamStore()
w0 = ps.add("w0", glorot_uniform(rng, (16, 1)))
b0 = ps.add("b0", np.zeros(16))
w1 = ps.add("w1", glorot_uniform(rng, (1, 16)))
b1 = ps.add("b1", np.zeros(1))
x, y = Tensor(xs), Tensor(ys)


def loss():
    h = (x @ w0.transpose() + b0.reshape(1, 16).repeat(64, axis=0)).tanh()
    pred = h @ w1.transpose() + b1.reshape(1, 1).repeat(64, axis=0)
    d = pred - y
    return (d * d).mean()


for step in range(400):
    ps.zero_grad()
    l = loss()
    l.backward()
    for _, p in ps.items():
        p.data -= 0.5 * p.grad
    if step % 100 == 0:
        print(f"step {step:3d}  mse {float(l.data):.5f}")
print(f"final     mse {float(loss().data):.5f}")

# gradient sanity: nudge one weight both ways, compare slopes
ps.zero_grad()
loss().backward()
i = (3, 0)
eps = 1e-6
keep = w0.data[i]
w0.data[i] = keep + eps
hi = float(loss().data)
w0.data[i] = keep - eps
lo = float(loss().data)
w0.data[i] = keep
fd = (hi - lo) / (2.0 * eps)
print(f"\nanalytic dL/dw0[3,0] = {w0.grad[i]:.8f}")
print(f"finite-difference    = {fd:.8f}")
