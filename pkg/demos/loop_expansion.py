"""
The loop expansion of Z
=======================

Every accepted path closes into loops; a loop made of w worldlines of
flavor σ contributes exp(β w f(σ)) to the field dependence, so

    Z(β; b) = Σ_n D_β(n) Π_j G_β(n_j; b),   G_β(m; b) = Σ_σ exp(β m f(σ)).

The coefficients D_β(n) are obtained two ways: a nonnegative least-squares
fit to exact Z values, and a direct count of loop structures in sampled
paths.
"""

import numpy as np

from hubbard_loops import box, ed, paths, loops
from hubbard_loops.model import enumerate_partitions

spec = box(2, 2, n=3)
beta = 0.5
rng = np.random.default_rng(0)

fit = ed.fit_D_coefficients(spec, beta, rng.normal(size=(25, spec.n - 1)))
print(f"fit residual {fit.relative_residual:.2e}, singular values {np.round(fit.singular_values, 4)}")

samples = 2_000_000
stream = paths.iter_accepted_paths(spec, beta, samples, seed=5, record=False)
est = loops.estimate_D(stream, spec, beta, samples)
print(f"{est.accepted} accepted paths out of {samples}")

print(f"{'partition':>10} {'fit':>12} {'sampled':>12} {'SE':>10}")
for p in enumerate_partitions(spec.N):
    d, se = est.D(p)
    print(f"{p.key:>10} {fit.D[p]:12.6f} {d:12.6f} {se:10.6f}")

# the sampled coefficients predict Z at fields never used in the fit
for b in ([0.3, -0.2], [1.0, 0.4]):
    z, se = est.Z(b)
    print(f"b={b}: loop sum {z:.5f} ± {se:.5f}, exact {ed.partition_function(spec, b, beta):.5f}")

# two flavors: the fit cannot separate the partitions, the sampler still can
try:
    ed.fit_D_coefficients(box(2, 2, n=2), beta, rng.normal(size=(25, 1)))
except ed.RankDeficientDesignError as exc:
    print("n=2:", exc)
