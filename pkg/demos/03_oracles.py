"""FD and Monte Carlo oracles on the triangle.

Run: python demos/03_oracles.py
"""

import numpy as np

from kimura_mixed.geometry import triangle_instance
from kimura_mixed.oracles import fd_solve, make_grid, mc_paths

tri = triangle_instance()
grid = make_grid(tri, 32, dt=5e-3)
res = fd_solve(tri, grid, f=lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y), T=0.1, save_every=5)
print("max over time of the solution:", np.round(res.values.max(axis=1), 5))

ens = mc_paths(tri, (0.3, 0.3), 0.5, 500, dt=1e-3, rng_seed=1)
print("closest approach to x + y = 1 over 500 paths:", float(ens.min_infinity_distance.min()))
