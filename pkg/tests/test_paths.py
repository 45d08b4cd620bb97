import io
import math
from pathlib import Path

import numpy as np
import pytest
from scipy import stats
from scipy.linalg import expm

import oracles
from hubbard_loops import ed, paths
from hubbard_loops.model import DomainError, SiteFlavor, box
from hubbard_loops.rng import stream

GOLDEN = Path(__file__).parent / "data" / "accepted_paths.jsonl"


@pytest.fixture
def spec():
    return box(2, 2, n=2)


def test_zero_horizon_has_no_jumps(spec):
    tr = paths.sample_single_trajectory(spec, SiteFlavor(1, 2), 0.0, stream(0))
    assert tr.n_jumps == 0 and tr.sites == (1,)
    path, cls = paths.sample_multi_trajectory(spec, [SiteFlavor(0, 1), SiteFlavor(1, 2)], 0.0, stream(0))
    assert cls.survives_hardcore and cls.periodic_permutation == (0, 1) and cls.in_L_beta


def test_holding_times_and_neighbors(spec):
    rng = stream(7)
    holds, nxt = [], []
    while len(holds) < 100_000:
        tr = paths.sample_single_trajectory(spec, SiteFlavor(0, 1), 50.0, rng)
        edges = (0.0,) + tr.jump_times
        holds += list(np.diff(edges))
        nxt += [s for a, s in zip(tr.sites, tr.sites[1:]) if a == 0]
        assert len(set(p.flavor for p in tr.states)) == 1
        assert all(spec.lattice.is_bond(a, c) for a, c in zip(tr.sites, tr.sites[1:]))
        assert all(np.diff(tr.jump_times) > 0) and tr.jump_times[-1] <= 50.0
    holds = np.array(holds)
    se = holds.std(ddof=1) / math.sqrt(holds.size)
    assert abs(holds.mean() - 1 / 3) < 3 * se
    counts = np.bincount(nxt, minlength=4)[1:]
    assert stats.chisquare(counts).pvalue > 1e-3


def test_trajectory_queries():
    tr = paths.Trajectory(1, (0, 2, 3), (0.2, 0.5), 1.0)
    assert tr.site_at(0.1) == 0 and tr.site_at(0.2) == 2 and tr.site_at(0.9) == 3
    assert tr.sojourns() == [(0, 0.2), (2, 0.3), (3, pytest.approx(0.5))]
    with pytest.raises(DomainError):
        paths.Trajectory(1, (0,), (0.3,), 1.0)


def test_coincident_start_rejected(spec):
    with pytest.raises(DomainError):
        paths.sample_multi_trajectory(spec, [SiteFlavor(0, 1), SiteFlavor(0, 2)], 1.0, stream(0))


def test_fk_single_conservation(spec):
    X = SiteFlavor(2, 1)
    assert paths.fk_single_estimate(spec, [0.0], np.ones((4, 2)), X, 0.8, 1000) == (1.0, 0.0)
    f = np.arange(8.0).reshape(4, 2)
    assert paths.fk_single_estimate(spec, [0.3], f, X, 0.0, 10) == (f[2, 0], 0.0)


def test_fk_single_against_expm(spec):
    b, t = [0.4], 0.5
    exact = expm(-t * oracles.single_particle_h(spec, b))
    for x in range(4):
        for s in (1, 2):
            mean, se = paths.fk_single_semigroup_row(spec, b, SiteFlavor(x, s), t, 20_000, seed=x * 2 + s)
            row = exact[x * 2 + s - 1, s - 1::2]
            assert np.all(np.abs(mean - row) <= 3 * se)
            assert np.all(exact[x * 2 + s - 1, (2 - s)::2] == 0)


def test_fk_single_callable_matches_table(spec):
    X = SiteFlavor(0, 2)
    f = lambda Y: float(Y.site == 3 and Y.flavor == 2)
    a = paths.fk_single_estimate(spec, [0.1], f, X, 0.6, 5000, seed=3)
    row, se = paths.fk_single_semigroup_row(spec, [0.1], X, 0.6, 5000, seed=3)
    assert a == pytest.approx((row[3], se[3]))


def test_classification_matches_time_grid(spec):
    rng = stream(11)
    L = 4
    survived = 0
    for _ in range(10_000):
        hole = int(rng.integers(L))
        init = [SiteFlavor(x, int(rng.integers(1, 3))) for x in range(L) if x != hole]
        path, cls = paths.sample_multi_trajectory(spec, init, 0.3, rng)
        assert cls.survives_hardcore == (not oracles.grid_collision(path, 0.3))
        survived += cls.survives_hardcore
        if cls.periodic_permutation is not None:
            tau = cls.periodic_permutation
            assert [path.final_config[j] for j in range(3)] == [init[tau[j]] for j in range(3)]
    assert 0 < survived < 10_000


def test_scalar_and_batch_samplers_agree(spec):
    """Acceptance of the event-replay sampler vs the vectorized engine."""
    rng = stream(5)
    hits, trials = 0, 40_000
    for _ in range(trials):
        hole = int(rng.integers(4))
        init = [SiteFlavor(x, int(rng.integers(1, 3))) for x in range(4) if x != hole]
        hits += paths.sample_multi_trajectory(spec, init, 0.3, rng)[1].in_L_beta
    p_scalar = hits / trials
    z = paths.estimate_partition_function(spec, [0.0], 0.3, 400_000, seed=9)
    se = math.sqrt(p_scalar * (1 - p_scalar) / trials + z.acceptance * (1 - z.acceptance) / z.samples)
    assert abs(p_scalar - z.acceptance) < 4 * se


def test_partition_function_beta_zero(spec):
    z = paths.estimate_partition_function(spec, [0.4], 0.0, 1000)
    assert (z.z_hat, z.std_error, z.accepted) == (32.0, 0.0, 1000)


def test_zero_field_weights_are_one(spec):
    z = paths.estimate_partition_function(spec, [0.0], 0.3, 50_000, seed=2, keep_paths=True)
    assert all(p.weight == 1.0 for p in z.paths)
    assert z.z_hat == pytest.approx(spec.dimension * z.acceptance, rel=1e-12)


def test_acceptance_regression(spec):
    z = paths.estimate_partition_function(spec, [0.0], 0.3, 100_000, seed=0)
    assert z.accepted == 7689  # ED expectation 7761 ± 88


def test_partition_function_against_ed(spec):
    z = paths.estimate_partition_function(spec, [0.4], 0.3, 200_000, seed=4)
    assert abs(z.z_hat - ed.partition_function(spec, [0.4], 0.3)) <= 3 * z.std_error


def test_laplacian_convention_against_ed():
    spec = box(2, 2, n=2, convention="laplacian", onsite_potential=np.array([0.1, 0, 0.2, 0]))
    z = paths.estimate_partition_function(spec, [0.2], 0.4, 200_000, seed=4)
    assert abs(z.z_hat - ed.partition_function(spec, [0.2], 0.4)) <= 3 * z.std_error


def test_worker_count_does_not_change_results(spec):
    a = paths.estimate_partition_function(spec, [0.4], 0.3, 100_000, seed=8, workers=1)
    b = paths.estimate_partition_function(spec, [0.4], 0.3, 100_000, seed=8, workers=3)
    assert (a.z_hat, a.std_error, a.accepted) == (b.z_hat, b.std_error, b.accepted)


def test_many_body_beta_zero(spec):
    assert paths.fk_many_body_estimate(spec, [0.3], 5, 5, 0.0, 10) == (1.0, 0.0)
    assert paths.fk_many_body_estimate(spec, [0.3], 5, 6, 0.0, 10) == (0.0, 0.0)


def test_many_body_against_ed(spec):
    S = ed.semigroup(spec, [0.0], 0.3).dense()
    for i, j in [(0, 0), (3, 12), (12, 3), (5, 22)]:
        m, se = paths.fk_many_body_estimate(spec, [0.0], i, j, 0.3, 100_000, seed=i + j)
        assert abs(m - S[i, j]) <= 3 * se


def test_moments_merge_is_associative():
    x = np.random.default_rng(0).normal(size=100)
    parts = [paths.Moments() for _ in range(3)]
    for p, chunk in zip(parts, np.array_split(x, 3)):
        p.add_values(chunk)
    left = parts[0].merge(parts[1]).merge(parts[2])
    right = parts[0].merge(parts[1].merge(parts[2]))
    assert left.count == right.count == 100
    assert left.mean == pytest.approx(x.mean()) and left.std_error == pytest.approx(x.std(ddof=1) / 10)


def _golden_text(spec):
    buf = io.StringIO()
    stream_ = paths.iter_accepted_paths(spec, 0.5, 4096, seed=1)
    paths.write_paths_jsonl(stream_, buf)
    return buf.getvalue()


def test_accepted_paths_golden_file(spec):
    text = _golden_text(spec)
    assert text.count("\n") > 10
    assert text == GOLDEN.read_text()
