import math

import numpy as np
import pytest
from scipy.linalg import eigh, expm

import oracles
from hubbard_loops import ed
from hubbard_loops.model import DomainError, GG_beta, box, dominant_field, enumerate_partitions, bound_terms


@pytest.mark.parametrize("sides,n,dim", [((2, 2), 2, 32), ((2, 2), 3, 108), ((2, 3), 2, 192)])
def test_basis_size_and_order(sides, n, dim):
    spec = box(*sides, n=n)
    states = ed.enumerate_basis(spec)
    assert len(states) == dim
    assert [s.index for s in states] == list(range(dim))
    assert states[0].hole == 0 and states[0].flavors == (1,) * spec.N
    assert states[1].flavors[-1] == 2
    assert all(len(s.flavors) == spec.N for s in states)


def test_dimension_cap(monkeypatch):
    monkeypatch.setenv("HUBBARD_LOOPS_CAP", "100")
    with pytest.raises(ed.DimensionCapError):
        ed.Basis(box(2, 2, n=3))


def test_three_hops_per_state():
    H = ed.build_hamiltonian(box(2, 2, n=2)).dense()
    off = H - np.diag(np.diag(H))
    assert np.all(np.count_nonzero(off, axis=1) == 3)


@pytest.mark.parametrize("convention", ["nagaoka", "laplacian"])
@pytest.mark.parametrize("metric", ["max", "l1"])
def test_hamiltonian_matches_brute_force(convention, metric):
    spec = box(2, 2, n=2, metric=metric, convention=convention,
               onsite_potential=np.array([0.2, -0.1, 0.0, 0.4]), offsite_coulomb={(0, 3): 0.3, (1, 2): 0.1})
    b = [0.37]
    H = ed.build_hamiltonian(spec, b).dense()
    M = oracles.brute_force_hamiltonian(spec, b)
    assert np.abs(H - M).max() < 1e-12
    z_ref = np.exp(-1.3 * eigh(M, eigvals_only=True)).sum()
    assert ed.partition_function(spec, b, 1.3) == pytest.approx(z_ref, rel=1e-10)


def test_hermitian_and_commuting():
    spec = box(2, 3, n=2)
    H = ed.build_hamiltonian(spec, [0.4]).matrix
    assert abs(H - H.T).max() == 0
    h = ed.build_h_sigma(spec, 1).matrix
    assert abs(H @ h - h @ H).max() == 0
    d = h.diagonal()
    assert np.all(d == np.round(d)) and np.abs(d).max() <= spec.N


@pytest.mark.parametrize("sides,n", [((2, 2), 2), ((2, 2), 3), ((2, 3), 2)])
def test_trace_identity(sides, n):
    spec = box(*sides, n=n)
    b = np.linspace(0.1, 0.5, n - 1)
    assert ed.partition_function(spec, b, 0.0) == pytest.approx(spec.dimension, rel=1e-10)


def test_large_beta_ground_state():
    spec = box(2, 2, n=2)
    s = ed.EdSpectrum(spec)
    e0 = s.ground_energy()
    w = np.concatenate([w for _, w in s.sectors])
    g0 = int(np.sum(np.abs(w - e0) < 1e-9))
    for beta in (20.0, 25.0):
        assert math.log(s.partition_function(0.0, beta)) + beta * e0 == pytest.approx(math.log(g0), abs=1e-6)


def test_partition_function_regression():
    assert ed.partition_function(box(2, 2, n=2), [0.3], 1.0) == pytest.approx(0.019302049832297417, rel=1e-12)


def test_semigroup_matches_expm():
    spec = box(2, 2, n=2)
    H = ed.build_hamiltonian(spec, [0.2]).dense()
    assert np.abs(ed.semigroup(spec, [0.2], 0.7).dense() - expm(-0.7 * H)).max() < 1e-12


def test_expectation_matches_log_derivative():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n = int(rng.integers(2, 4))
        spec = box(2, 2, n=n)
        spectrum = ed.EdSpectrum(spec)
        beta = float(rng.uniform(0.3, 2.0))
        b = rng.normal(size=n - 1)
        for sigma in range(1, n):
            step = np.zeros(n - 1)
            step[sigma - 1] = 1e-4
            fd = (spectrum.log_partition_function(b + step, beta)
                  - spectrum.log_partition_function(b - step, beta)) / (2e-4 * beta)
            h = spectrum.expectation_h(b, beta, sigma)
            # d/db_σ of -Σ f(τ)N_τ gives N_σ - N_{σ+1}
            assert h == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_expectation_limits():
    spec = box(2, 2, n=2)
    assert ed.thermal_expectation_h(spec, [0.0], 1.0, 1) == pytest.approx(0.0, abs=1e-12)
    assert ed.thermal_expectation_h(spec, [50.0], 1.0, 1) >= spec.N - 1e-3
    assert ed.thermal_expectation_h(spec, [0.5], 1.0, 1) >= math.tanh(0.5) * 3
    with pytest.raises(DomainError):
        ed.thermal_expectation_h(spec, [0.5], 0.0, 1)


def test_magnetization_bound_holds():
    rng = np.random.default_rng(4)
    for n in (2, 3):
        spec = box(2, 2, n=n)
        s = ed.EdSpectrum(spec)
        for sigma in range(1, n):
            for _ in range(20):
                b = dominant_field(rng, n, sigma)
                bt = bound_terms(sigma, 1.0, b)
                h = s.expectation_h(b, 1.0, sigma)
                assert h >= spec.N * bt.rhs_per_particle - 1e-10
                assert h >= spec.N * bt.corollary_per_particle - 1e-10


def test_fit_three_flavors():
    spec = box(2, 2, n=3)
    rng = np.random.default_rng(0)
    grid = [rng.normal(size=2) for _ in range(25)]
    fit = ed.fit_D_coefficients(spec, 1.0, grid)
    assert fit.relative_residual < 1e-8 and fit.min_D > 0
    z0 = sum(d * 3 ** p.length for p, d in fit.D.items())
    assert z0 == pytest.approx(ed.partition_function(spec, [0, 0], 1.0), rel=1e-8)
    for b in grid[:3]:
        assert fit.Z(b) == pytest.approx(ed.partition_function(spec, b, 1.0), rel=1e-8)


def test_fit_single_partition():
    with pytest.warns(UserWarning):
        spec = box(2, n=2)
    grid = np.linspace(-1, 1, 3)
    fit = ed.fit_D_coefficients(spec, 0.8, grid)
    z = ed.partition_function(spec, [0.3], 0.8)
    assert fit.relative_residual < 1e-14
    assert list(fit.D.values())[0] == pytest.approx(z / GG_beta(enumerate_partitions(1)[0], 0.8, 0.3))


def test_fit_two_flavors_is_rank_deficient():
    rng = np.random.default_rng(0)
    with pytest.raises(ed.RankDeficientDesignError, match="rank 2 < 3"):
        ed.fit_D_coefficients(box(2, 2, n=2), 1.0, rng.normal(size=(25, 1)))


def test_fit_needs_enough_fields():
    with pytest.raises(DomainError):
        ed.fit_D_coefficients(box(2, 2, n=3), 1.0, [[0.1, 0.2]] * 8)


def test_coefficients_do_not_depend_on_flavor_count():
    rng = np.random.default_rng(2)
    D3 = ed.fit_D_coefficients(box(2, 2, n=3), 0.5, rng.normal(size=(25, 2))).D
    D4 = ed.fit_D_coefficients(box(2, 2, n=4), 0.5, rng.normal(size=(25, 3))).D
    for p in D3:
        assert D4[p] == pytest.approx(D3[p], rel=1e-6)


def test_finite_U_counts_and_trace():
    spec = box(2, 2, n=2)
    H, states = ed.finite_U_hamiltonian(spec, [0.0], 0.0)
    assert len(states) == 56
    assert ed.finite_U_partition_function(spec, [0.0], 0.0, 0.0) == pytest.approx(56)
    assert abs(H - H.T).max() < 1e-15


def test_finite_U_single_occupancy_block_is_projected_hamiltonian():
    spec = box(2, 2, n=2)
    b = [0.3]
    H, states = ed.finite_U_hamiltonian(spec, b, 5.0)
    basis = ed.basis_of(spec)
    rows, target = [], []
    for i, modes in enumerate(states):
        sites = [m // 2 for m in modes]
        if len(set(sites)) == spec.N:
            hole = (set(range(4)) - set(sites)).pop()
            rows.append(i)
            target.append(int(basis.index(hole, [m % 2 for m in modes])))
    assert len(rows) == 32
    block = H.toarray()[np.ix_(rows, rows)]
    P = ed.build_hamiltonian(spec, b).dense()[np.ix_(target, target)]
    assert np.abs(block - P).max() < 1e-12


def test_finite_U_doubly_occupied_levels_scale_with_U():
    spec = box(2, 2, n=2)
    U = 1000.0
    w = np.sort(eigh(ed.finite_U_hamiltonian(spec, [0.0], U)[0].toarray(), eigvals_only=True))
    assert np.all(w[32:] > 1.9 * U)
    assert np.all(w[:32] < 20)


def test_finite_U_self_pairing_is_a_constant_shift():
    spec = box(2, 2, n=2)
    z = ed.finite_U_partition_function(spec, [0.2], 1.0, 3.0)
    z_self = ed.finite_U_partition_function(spec, [0.2], 1.0, 3.0, self_pairing=True)
    assert z_self == pytest.approx(z * math.exp(-3.0 * spec.N), rel=1e-10)


def test_finite_U_approaches_projected():
    spec = box(2, 2, n=2)
    zp = ed.partition_function(spec, [0.0], 1.0)
    gaps = [abs(ed.finite_U_partition_function(spec, [0.0], 1.0, U) - zp) for U in (10, 100, 1000)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_flavor_relabel_check():
    spec = box(2, 2, n=3)
    assert ed.flavor_relabel_spectrum_check(spec, [1, 2, 3])
    assert ed.flavor_relabel_spectrum_check(spec, [2, 1, 3])
    assert ed.flavor_relabel_spectrum_check(spec, [1, 3, 2])
    assert not ed.flavor_relabel_spectrum_check(spec, [2, 1, 3], b=[0.3, 0.1])
    with pytest.raises(DomainError):
        ed.flavor_relabel_spectrum_check(spec, [1, 1, 2])
