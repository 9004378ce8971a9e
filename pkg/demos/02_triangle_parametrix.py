"""Cover the triangle, look at the cutoffs, and build a global kernel value.

Run: python demos/02_triangle_parametrix.py   (about a minute)
"""

import numpy as np

from kimura_mixed.geometry import triangle_instance
from kimura_mixed.parametrix import build_cover, delta_limit_classify, global_kernel

tri = triangle_instance()
cover = build_cover(tri, 0.05)
print(f"{len(cover)} neighbourhoods")

pts = cover.collar_samples(7)
chi_sum = sum(cover.chi(k, pts) for k in range(len(cover)))
print("max |sum chi - phi_U| on the collar:", float(np.max(np.abs(chi_sum - cover.phi_U(pts)))))

# kernel from an interior source, then from a point on the infinity edge
r = global_kernel(cover, 0.05, (0.2, 0.2), (0.25, 0.2))
print(f"K_0.05((0.2,0.2),(0.25,0.2)) = {r.value:.6f} (correction {r.correction:.2e})")
print("source on the hypotenuse:", global_kernel(cover, 0.05, (0.5, 0.5), (0.3, 0.3)))

# short-time limits at boundary points
for p in [(0.0, 0.0), (0.0, 0.5), (1.0, 0.0), (0.5, 0.5)]:
    v = delta_limit_classify(tri, p)
    print(p, v.verdict, np.round(v.values, 4))
