"""Mittag-Leffler and Wright functions: a short tour."""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special

from fracimpulse import MLParams, WrightParams, mittag_leffler, wright
from fracimpulse.specfun import ml_array

# E_{alpha,beta} interpolates between the exponential (alpha = 1) and the
# cosine (alpha = 2); for 0 < alpha < 1 it decays only algebraically.
z = -np.array([0.5, 2.0, 10.0, 50.0])
for alpha in (1.0, 0.9, 0.6, 0.3):
    print(f"E_{alpha}(z) at z={z.tolist()}:", np.array2string(ml_array(alpha, 1.0, z), precision=6))

# the heavy tail: z * E_alpha(z) tends to -1/Gamma(1 - alpha)
alpha = 0.6
for x in (1e2, 1e4):
    print(f"-x E_0.6(-x) at x={x:g}: {-x * mittag_leffler(MLParams(alpha), -x):.6f}",
          f"(limit {1 / math.gamma(1 - alpha):.6f})")

# closed forms to check against
print("E_1/2(-1)       ", mittag_leffler(MLParams(0.5), -1.0))
print("e * erfc(1)     ", math.e * special.erfc(1.0))
print("E_2(-pi^2)      ", mittag_leffler(MLParams(2.0, tol=1e-10), -math.pi**2), "(cos pi = -1)")

# The Wright function is a probability density on (0, inf) whose moments
# are Gamma(1 + r) / Gamma(1 + alpha r).
for alpha in (0.4, 2 / 3):
    p = WrightParams(alpha)
    moments = [integrate.quad(lambda t: wright(p, t) * t**r, 0, 50, limit=200)[0] for r in range(3)]
    exact = [math.gamma(1 + r) / math.gamma(1 + alpha * r) for r in range(3)]
    print(f"alpha={alpha:.3f} moments", np.round(moments, 10), "exact", np.round(exact, 10))

# its Laplace transform is the Mittag-Leffler function
p = WrightParams(0.6)
lt = integrate.quad(lambda t: wright(p, t) * math.exp(-2 * t), 0, 50, limit=200)[0]
print("int Psi_0.6(t) exp(-2t) dt =", lt, " E_0.6(-2) =", mittag_leffler(MLParams(0.6), -2.0))
