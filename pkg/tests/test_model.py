import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hubbard_loops.model import (DomainError, FieldVector, G_beta, GG_beta, Lattice, ModelSpec,
                                 NPartition, SiteFlavor, as_field, bound_terms, box, degree,
                                 dominant_field, enumerate_partitions, field_from_shifts,
                                 field_potential, k_sigma, neighbors)

fields = st.lists(st.floats(-3, 3), min_size=1, max_size=4)


def brute_partitions(N):
    out = set()
    for k in range(1, N + 1):
        for combo in itertools.product(range(1, N + 1), repeat=k):
            if sum(combo) == N:
                out.add(tuple(sorted(combo, reverse=True)))
    return out


def test_box_sites_and_neighbors():
    lat = Lattice((2, 2))
    assert lat.sites == ((-1, -1), (-1, 0), (0, -1), (0, 0))
    assert sorted(neighbors(lat, (0, 0))) == [(-1, -1), (-1, 0), (0, -1)]
    assert lat.index((0, -1)) == 2 and lat.index(3) == 3
    with pytest.raises(DomainError):
        lat.index((5, 5))


def test_max_metric_includes_diagonals():
    lat = Lattice((3, 3))
    assert len(lat.adjacency[lat.index((0, 0))]) == 8
    assert len(Lattice((3, 3), "l1").adjacency[lat.index((0, 0))]) == 4
    assert not Lattice((2, 2)).is_bipartite()
    assert Lattice((2, 3), "l1").is_bipartite()


def test_hypercube_and_degree():
    lat = Lattice.hypercube(2, 1)
    assert lat.side_lengths == (2, 2)
    spec = ModelSpec(lat, hop=0.5)
    assert degree(spec, (0, 0)) == pytest.approx(1.5)


def test_one_dimensional_box_warns():
    with pytest.warns(UserWarning):
        Lattice((2,))


@pytest.mark.parametrize("bad", [dict(n_flavors=1), dict(hop=0.0), dict(convention="x")])
def test_model_spec_rejects(bad):
    with pytest.raises(DomainError):
        ModelSpec(Lattice((2, 2)), **bad)


def test_spec_defaults_and_dimensions():
    spec = box(2, 3, n=2)
    assert (spec.n, spec.N, spec.dimension) == (2, 5, 192)
    assert np.all(spec.onsite_potential == 0)


def test_hole_energy_counts_ordered_pairs():
    spec = box(2, 2, n=2, offsite_coulomb={(0, 1): 0.5}, onsite_potential=np.array([1.0, 2, 3, 4]))
    # hole at 3: sites 0,1 occupied, 0.5 for each ordered pair
    assert spec.hole_energy[3] == pytest.approx(1 + 2 + 3 + 2 * 0.5)
    assert spec.hole_energy[0] == pytest.approx(2 + 3 + 4)


@given(fields)
def test_shifts_sum_to_zero(b):
    assert abs(FieldVector(tuple(b)).shifts.sum()) < 1e-12


def test_shift_values():
    f = FieldVector((0.3, 0.1)).shifts
    assert f == pytest.approx([0.3, -0.2, -0.1])
    assert field_from_shifts(f).b == pytest.approx((0.3, 0.1))
    with pytest.raises(DomainError):
        field_from_shifts([1.0, 1.0])


@given(fields, st.floats(0, 3), st.integers(1, 5))
def test_G_beta_lower_bound(b, beta, m):
    fv = FieldVector(tuple(b))
    lower = fv.n * math.exp(-beta * m * np.abs(fv.shifts).max())
    assert G_beta(m, beta, fv) >= lower * (1 - 1e-12) > 0
    assert G_beta(m, 0.0, fv) == pytest.approx(fv.n)


@given(st.floats(-3, 3), st.floats(0, 3), st.integers(1, 4))
def test_G_beta_two_flavors_is_cosh(b1, beta, m):
    assert G_beta(m, beta, b1) == pytest.approx(2 * math.cosh(beta * m * b1), rel=1e-13)


def test_G_beta_rejects_zero_winding():
    with pytest.raises(DomainError):
        G_beta(0, 1.0, 0.2)


@given(fields, st.integers(0, 3))
def test_field_potential_matches_shift(b, site):
    fv = FieldVector(tuple(b))
    for s in range(1, fv.n + 1):
        assert field_potential(fv, SiteFlavor(site, s)) == pytest.approx(-fv.shift(s), abs=1e-12)


def test_k_sigma():
    assert k_sigma(SiteFlavor(0, 2), 2) == 1
    assert k_sigma(SiteFlavor(0, 3), 2) == -1
    assert k_sigma(SiteFlavor(0, 1), 2) == 0
    with pytest.raises(DomainError):
        k_sigma(SiteFlavor(0, 1), 3, n=3)


def test_field_length_checked():
    with pytest.raises(DomainError):
        as_field((0.1, 0.2), n=2)


@pytest.mark.parametrize("N", range(1, 13))
def test_partitions_match_brute_force(N):
    parts = enumerate_partitions(N)
    keys = [p.parts for p in parts]
    assert len(keys) == len(set(keys))
    assert all(p.total == N for p in parts)
    if N <= 8:
        assert set(keys) == brute_partitions(N)
    assert len(parts) == {1: 1, 2: 2, 3: 3, 4: 5, 5: 7, 6: 11, 7: 15, 8: 22, 9: 30, 10: 42, 11: 56, 12: 77}[N]


def test_partition_keys():
    p = NPartition((1, 3, 2))
    assert p.parts == (3, 2, 1) and p.key == "3-2-1" and NPartition.parse("3-2-1") == p
    assert enumerate_partitions(1) == [NPartition((1,))]
    assert GG_beta(p, 0.0, 0.4) == pytest.approx(8.0)


def test_bound_terms_two_flavors():
    bt = bound_terms(1, 0.7, 0.5)
    assert bt.dominant and bt.g_val == 0
    assert bt.rhs_per_particle == pytest.approx(math.tanh(0.7 * 0.5))
    assert bt.corollary_per_particle == pytest.approx(bt.rhs_per_particle)


def test_bound_terms_flags_non_dominant_field():
    bt = bound_terms(1, 1.0, (-0.5, 0.2))
    assert not bt.dominant
    with pytest.raises(DomainError):
        bound_terms(3, 1.0, (0.1, 0.2))


def test_bound_terms_monotone_in_beta():
    rng = np.random.default_rng(1)
    for n in (2, 3, 4):
        for sigma in range(1, n):
            b = dominant_field(rng, n, sigma)
            vals = [bound_terms(sigma, beta, b).f_val for beta in np.linspace(0, 5, 26)]
            assert bound_terms(sigma, 1.0, b).dominant
            assert np.all(np.diff(vals) >= -1e-15)
