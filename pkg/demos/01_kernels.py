"""Tour of the kernel layer: 1-D Kimura densities, their atom, and 2-D model kernels.

Run: python demos/01_kernels.py
"""

import numpy as np

from kimura_mixed.kernels1d import KimuraKernel1D, kimura_atom, kimura_density, kimura_mass
from kimura_mixed.models2d import BoundaryClass, FrozenCoefficients, ModelKernel2D, model_kernel

# 1-D Kimura kernel: the d = 0 kernel loses mass to an atom at 0
for d in (0.0, 0.5, 2.0):
    k = KimuraKernel1D(d, 1.0)
    xs = np.array([0.1, 0.5, 1.0, 2.0])
    atom = float(kimura_atom(k, 0.3)) if d == 0 else 0.0
    print(f"d={d}: p(0.3, x') =", np.round(kimura_density(k, 0.3, xs), 6),
          f"atom={atom:.6f}", f"mass={kimura_mass(k, 0.3):.10f}")

# model kernels of the five boundary classes, all coefficients 1
frozen = FrozenCoefficients(1.0, 1.0, 1.0, 1.0)
for name, p, q in [("c_reg", (0.2, 0.3), (0.4, 0.5)), ("e_reg", (0.2, 0.0), (0.4, 0.3)),
                   ("c_mix", (0.2, 1.0), (0.4, 1.2)), ("e_inf", (0.0, 1.0), (0.3, 1.2)),
                   ("c_inf", (1.0, 1.0), (1.0, 1.0))]:
    mk = ModelKernel2D(BoundaryClass.from_name(name), frozen, 1.0)
    print(f"{name:6s} K_1({p}, {q}) = {float(model_kernel(mk, p, q)):.8f}")
