"""Two particles in the rough flow separate like a Bessel process.

The distance R_t is simulated from R0 = 1e-3 with Euler-Maruyama and from
R0 = 0 with the exact transition of Z = R^{1-a}. The effective dimension
2/(1-a) exceeds 2, so paths started together leave immediately.
"""
import numpy as np

from kraichnan_lab.lagrangian import IdealizedCoefficients, bessel_dimension_estimate, simulate_distance

rng = np.random.default_rng(7)
for alpha in (0.25, 0.5, 0.75):
    co = IdealizedCoefficients.from_quadrature(alpha)
    path = simulate_distance(np.full(10000, 1e-3), 1000, 1e-5, alpha, rng, record_every=50, coeffs=co)
    est = bessel_dimension_estimate(path, alpha, co.beta_l)
    zero = simulate_distance(np.zeros(10000), 1, 1e-2, alpha, rng, coeffs=co, scheme="bessel")
    print(f"alpha={alpha}: d_eff={est.d_eff:.3f}+-{est.stderr:.3f} (2/(1-a)={2 / (1 - alpha):.3f}), "
          f"fraction of R0=0 paths apart at t=0.01: {np.mean(zero.distances[-1] > 0):.3f}, "
          f"median R there: {np.median(zero.distances[-1]):.3e}")
