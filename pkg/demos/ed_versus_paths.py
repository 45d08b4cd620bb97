"""
Exact diagonalization against path sampling
===========================================

The one-hole sector of the 2×2 box has 32 states for two flavors.  We
compute Z(β; b) exactly and then estimate it from random walks of the three
particles, keeping only paths that never collide and return to their
starting configuration up to a permutation.
"""

import numpy as np

from hubbard_loops import box, ed, paths

spec = box(2, 2, n=2)
beta, b = 0.3, [0.4]

z_exact = ed.partition_function(spec, b, beta)
print(f"dimension of the one-hole space: {spec.dimension}")
print(f"exact Z(β={beta}, b={b[0]}) = {z_exact:.6f}")

# the estimate carries a standard error; the chunked streams make it
# reproducible for a given seed whatever the number of workers
for samples in (10**4, 10**5, 10**6):
    z = paths.estimate_partition_function(spec, b, beta, samples, seed=1)
    print(f"{samples:>8d} samples: {z.z_hat:.5f} ± {z.std_error:.5f}"
          f"  (acceptance {z.acceptance:.3%}, {abs(z.z_hat - z_exact) / z.std_error:.2f} SE off)")

# a single matrix element of the semigroup, with its fermionic sign
S = ed.semigroup(spec, b, beta).dense()
i, j = 3, 13  # same flavor counts, different hole
m, se = paths.fk_many_body_estimate(spec, b, i, j, beta, 200_000, seed=2)
print(f"<e_{i}| exp(-βH) |e_{j}>: exact {S[i, j]:+.5f}, sampled {m:+.5f} ± {se:.5f}")

# at β = 0 nothing moves, so the estimator is exact
z0 = paths.estimate_partition_function(spec, b, 0.0, 1000)
print(f"β = 0: {z0.z_hat} (SE {z0.std_error})")
