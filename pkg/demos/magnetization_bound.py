"""
A lower bound on the generalized magnetization
==============================================

When the flavor shift f(σ) is strictly the largest, the thermal value of
h_σ = N_σ - N_{σ+1} is at least N tanh(β(f(σ) - f(σ+1))/2) / (1 + g).
We scan random dominant fields and look at the smallest margin.
"""

import numpy as np

from hubbard_loops import box, ed
from hubbard_loops.model import bound_terms, dominant_field

rng = np.random.default_rng(6)
for n in (2, 3, 4):
    spec = box(2, 2, n=n)
    spectrum = ed.EdSpectrum(spec)
    for beta in (0.5, 2.0):
        margins = []
        for sigma in range(1, n):
            for _ in range(100):
                b = dominant_field(rng, n, sigma)
                bound = spec.N * bound_terms(sigma, beta, b).rhs_per_particle
                margins.append(spectrum.expectation_h(b, beta, sigma) - bound)
        print(f"n={n} β={beta}: min margin {min(margins):+.3e} over {len(margins)} fields")

# for two flavors the bound is tanh(β b) N
spec = box(2, 2, n=2)
for b1 in (0.1, 0.5, 2.0):
    h = ed.thermal_expectation_h(spec, [b1], 1.0, 1)
    print(f"b={b1}: <h_1> = {h:.4f} >= {3 * np.tanh(b1):.4f}")
