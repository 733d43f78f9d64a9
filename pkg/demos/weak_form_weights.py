"""Test functions, quadrature weights and why the weak residual tolerates noise.

Run: python3 demos/weak_form_weights.py
"""

import numpy as np

from wpnode.data import reference_nodes
from wpnode.weakform import TestFunction, weak_residual, weak_weights

# The test function (1 - s^2)^p is smooth, even, and vanishes at both ends of
# the reference interval, so boundary terms drop out of the integrated residual.
for p in (1, 4, 16):
    tf = TestFunction.of_order(p)
    s = np.linspace(-1, 1, 5)
    print(f"p={p:2d}  phi on {s.tolist()} = {np.round(tf(s), 4).tolist()}")

# Weights for one subdomain of M = 60 samples at dt = 0.01 (length 0.59).
m, dt = 60, 0.01
w = weak_weights(reference_nodes(m), p=16, length=(m - 1) * dt)
print(f"\nM={m}: sum(w_lhs) = {w.w_lhs.sum():.2e}, sum(w_rhs) = {w.w_rhs.sum():.6f}")
print("w_rhs is symmetric and w_lhs antisymmetric about the midpoint:",
      np.allclose(w.w_rhs, w.w_rhs[::-1]), np.allclose(w.w_lhs, -w.w_lhs[::-1]))

# For u = sin(3t) the residual u.w_lhs + f.w_rhs with f = du/dt is near zero.
t = np.linspace(0.0, (m - 1) * dt, m)
u = np.sin(3 * t)[:, None]
f = 3 * np.cos(3 * t)[:, None]
print(f"\nclean residual: {weak_residual(u, f, w)[0]:.2e}")

# Additive noise enters only through u.w_lhs: its spread is sigma * ||w_lhs||,
# much smaller than sigma itself because w_lhs averages over the window.
rng = np.random.default_rng(0)
sigma = 0.05
noisy = u[None] + sigma * rng.standard_normal((5000, m, 1))
r = weak_residual(noisy, np.broadcast_to(f, noisy.shape), w)[:, 0]
print(f"noise sigma {sigma}: residual std {r.std():.4f} (predicted {sigma * np.linalg.norm(w.w_lhs):.4f})")

# A finite-difference derivative, by contrast, amplifies the same noise by ~1/dt.
fd = np.diff(noisy[:, :, 0], axis=1) / dt
print(f"finite-difference derivative noise std: {(fd - 3 * np.cos(3 * t[:-1])).std():.2f}")
