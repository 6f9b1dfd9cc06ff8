"""
Sphere marginals against their closed-form brackets
===================================================

For Z the first coordinate of a uniform point on the sphere in R^d, compare
Monte-Carlo estimates of P(Z > t) and E[(Z - t)+] with the two-sided
brackets, and with the exact incomplete-beta values.
"""

import numpy as np

from eoslab import datagen, sphere
from eoslab.rng import RngStream

N = 400_000
for d in (3, 10, 40):
    Z = datagen.sample_sphere(N, d, RngStream(d))[:, 0]
    print(f"d = {d}")
    for t in (0.05, 0.2, 0.5):
        tail = np.mean(Z > t)
        relu = np.mean(np.maximum(Z - t, 0))
        bt, br = sphere.sphere_tail(d, t), sphere.sphere_relu_margin(d, t)
        print(f"  t={t:4.2f}  P(Z>t) {tail:.5f} in [{bt.lower:.5f}, {bt.upper:.5f}]"
              f"   E(Z-t)+ {relu:.5f} in [{br.lower:.5f}, {br.upper:.5f}]")

# the radius of an m-coordinate projection near the boundary follows a Beta law
bt = sphere.boundary_tail(20, 4, 0.2)
print(f"P(|Z_4| > 0.8), d=20: exact {bt.exact:.3e}, bracket [{bt.lower:.3e}, {bt.upper:.3e}]")
