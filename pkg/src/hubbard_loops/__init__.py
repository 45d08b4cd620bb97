"""Loop expansion of the one-hole SU(n) Hubbard model at infinite repulsion.

Exact diagonalization, Feynman–Kac path sampling and the flavored-loop
decomposition of the partition function on small boxes.
"""
from .model import (DomainError, FieldVector, Lattice, ModelSpec, NPartition, SiteFlavor, box,
                    bound_terms, enumerate_partitions, G_beta, GG_beta)
from .ed import (EdSpectrum, build_hamiltonian, fit_D_coefficients, partition_function,
                 semigroup, thermal_expectation_h)
from .paths import (estimate_partition_function, fk_many_body_estimate, fk_single_estimate,
                    iter_accepted_paths, sample_multi_trajectory, sample_single_trajectory)
from .loops import allowed_permutations_bfs, estimate_D, extract_loops, verify_weight_identity

__version__ = "0.1.0"
