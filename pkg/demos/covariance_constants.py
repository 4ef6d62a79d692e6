"""Structure functions of the rough covariance and their small-R power laws.

Prints the coincident-point value B(0) = pi/(2a), the split constants beta_L and
beta_N, and how the increments B(0) - B(R) approach beta R^{2a} as R shrinks.
"""
import math

from kraichnan_lab.covariance import beta_constants, structure_functions, structure_increment

for alpha in (0.25, 0.5, 0.75):
    b0 = structure_functions(0.0, alpha)[0]
    bbar, bl, bn, _ = beta_constants(alpha)
    print(f"alpha={alpha}: B(0)={b0:.10f} (pi/(2a)={math.pi / (2 * alpha):.10f})")
    print(f"  beta_bar={bbar:.8f} beta_L={bl:.8f} beta_N={bn:.8f} ratio={bn / bl:.12f}")
    for R in (1e-1, 1e-2, 1e-3, 1e-4):
        dl = structure_increment(R, "longitudinal", alpha)[0]
        dn = structure_increment(R, "transverse", alpha)[0]
        print(f"  R={R:.0e}: D_L/(beta_L R^2a)={dl / (bl * R ** (2 * alpha)):.6f} "
              f"D_N/D_L={dn / dl:.6f}")
