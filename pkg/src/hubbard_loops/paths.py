"""Continuous-time random walks and Feynman–Kac–Itô estimators.

A particle at site x waits an exponential time of rate d(x) and then jumps to
a uniformly chosen neighbor; its flavor never changes.  Potentials are
integrated exactly as sums of value × sojourn length.

Many-body estimators run the N independent walks of a sample as one
superposed chain (total rate Σ_j d(x_j), particle picked in proportion to its
rate).  A sample dies the first time a particle jumps onto an occupied site;
with a single hole that is any jump whose target is not the hole.

The single-particle estimators represent ``e^{-t h_μ(b)}`` with the graph
Laplacian ``h_0`` and carry no sign.  In the many-body estimators each jump
multiplies the weight by -1 under ``convention="nagaoka"`` and by +1 under
``"laplacian"``.  Trace estimators also carry sgn(τ) of the
endpoint permutation; for the Nagaoka sign the product is always +1 and this
is asserted.
"""
from __future__ import annotations

import bisect
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator, Sequence

import numpy as np

from .ed import EdBasisState, basis_of
from .model import DomainError, ModelSpec, NPartition, SiteFlavor, as_field
from .rng import chunk_sizes, exponential, stream


# --------------------------------------------------------------------------
# Path types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """Piecewise-constant walk: ``sites[k]`` is held on ``[J_k, J_{k+1})``."""

    flavor: int
    sites: tuple[int, ...]
    jump_times: tuple[float, ...]
    horizon: float

    def __post_init__(self):
        if len(self.sites) != len(self.jump_times) + 1:
            raise DomainError("a trajectory needs exactly one more state than jumps")

    @property
    def start(self) -> SiteFlavor:
        return SiteFlavor(self.sites[0], self.flavor)

    @property
    def states(self) -> list[SiteFlavor]:
        return [SiteFlavor(x, self.flavor) for x in self.sites]

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    def site_at(self, t: float) -> int:
        return self.sites[bisect.bisect_right(self.jump_times, t)]

    def sojourns(self) -> list[tuple[int, float]]:
        """``(site, length)`` pieces covering ``[0, horizon]``."""
        edges = (0.0,) + self.jump_times + (self.horizon,)
        return [(x, edges[k + 1] - edges[k]) for k, x in enumerate(self.sites)]


@dataclass(frozen=True)
class MultiTrajectory:
    particles: tuple[Trajectory, ...]
    horizon: float

    @property
    def N(self) -> int:
        return len(self.particles)

    @property
    def initial_config(self) -> list[SiteFlavor]:
        return [p.start for p in self.particles]

    @property
    def final_config(self) -> list[SiteFlavor]:
        return [SiteFlavor(p.sites[-1], p.flavor) for p in self.particles]

    def at(self, t: float) -> list[SiteFlavor]:
        return [SiteFlavor(p.site_at(t), p.flavor) for p in self.particles]

    @property
    def n_jumps(self) -> int:
        return sum(p.n_jumps for p in self.particles)

    def events(self) -> list[tuple[float, int, int, int]]:
        """Merged jump events ``(time, particle, from, to)`` in time order."""
        ev = [(t, j, p.sites[k], p.sites[k + 1])
              for j, p in enumerate(self.particles) for k, t in enumerate(p.jump_times)]
        return sorted(ev)


@dataclass(frozen=True)
class PathClassification:
    survives_hardcore: bool
    periodic_permutation: tuple[int, ...] | None  # 0-based: X_β^{(j)} = X_0^{(τ[j])}

    @property
    def in_L_beta(self) -> bool:
        return self.survives_hardcore and self.periodic_permutation is not None


def endpoint_permutation(initial: Sequence[SiteFlavor], final: Sequence[SiteFlavor]):
    """τ with ``final[j] == initial[τ[j]]``, or None when no such τ exists."""
    where = {(X.site, X.flavor): i for i, X in enumerate(initial)}
    tau = [where.get((Y.site, Y.flavor)) for Y in final]
    if None in tau or len(set(tau)) != len(tau):
        return None
    return tuple(tau)


def classify(path: MultiTrajectory) -> PathClassification:
    """Replay the merged event sequence and look for a site collision."""
    owner = {}
    for j, X in enumerate(path.initial_config):
        if X.site in owner:
            return PathClassification(False, None)
        owner[X.site] = j
    for _, j, src, dst in path.events():
        if dst in owner:
            return PathClassification(False, None)
        del owner[src]
        owner[dst] = j
    return PathClassification(True, endpoint_permutation(path.initial_config, path.final_config))


# --------------------------------------------------------------------------
# Scalar samplers
# --------------------------------------------------------------------------

def sample_single_trajectory(spec: ModelSpec, start: SiteFlavor, horizon: float,
                             rng: np.random.Generator) -> Trajectory:
    if horizon < 0:
        raise DomainError("horizon must be >= 0")
    adj, rates = spec.lattice.adjacency, spec.degrees
    x, t = start.site, 0.0
    sites, times = [x], []
    while True:
        t += float(exponential(rng, rates[x], size=()))
        if t > horizon:
            break
        nb = adj[x]
        x = nb[int(rng.random() * len(nb))]
        sites.append(x)
        times.append(t)
    return Trajectory(start.flavor, tuple(sites), tuple(times), float(horizon))


def sample_multi_trajectory(spec: ModelSpec, initial: Sequence[SiteFlavor], horizon: float,
                            rng: np.random.Generator) -> tuple[MultiTrajectory, PathClassification]:
    """N independent walks on a common horizon and their classification."""
    if len({X.site for X in initial}) != len(initial):
        raise DomainError("initial configuration has coincident sites")
    path = MultiTrajectory(tuple(sample_single_trajectory(spec, X, horizon, rng) for X in initial),
                           float(horizon))
    return path, classify(path)


# --------------------------------------------------------------------------
# Reductions
# --------------------------------------------------------------------------

@dataclass
class Moments:
    """Associative (count, sum, sum of squares) accumulator."""

    count: int = 0
    total: float = 0.0
    squares: float = 0.0

    def add_values(self, values: np.ndarray, count: int | None = None):
        values = np.asarray(values, dtype=float)
        self.count += int(values.size if count is None else count)
        self.total += float(values.sum())
        self.squares += float(np.square(values).sum())

    def merge(self, other: "Moments") -> "Moments":
        return Moments(self.count + other.count, self.total + other.total, self.squares + other.squares)

    @property
    def mean(self) -> float:
        return self.total / self.count

    @property
    def std_error(self) -> float:
        if self.count < 2:
            return 0.0
        var = (self.squares - self.total**2 / self.count) / (self.count - 1)
        return float(np.sqrt(max(var, 0.0) / self.count))


def _run_chunks(task: Callable, args: tuple, samples: int, seed: int, workers: int) -> list:
    sizes = chunk_sizes(samples)
    jobs = [(args, seed, c, size) for c, size in enumerate(sizes)]
    if workers <= 1 or len(jobs) == 1:
        return [task(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, jobs))


# --------------------------------------------------------------------------
# Single-particle Feynman–Kac
# --------------------------------------------------------------------------

def _single_walks(spec: ModelSpec, site: int, time: float, rng: np.random.Generator, size: int):
    """Vectorized single-particle walks: final site, ∫μ ds and jump count."""
    rates, table, coord = spec.degrees, spec.lattice.neighbor_table, spec.lattice.coordination
    mu = spec.onsite_potential
    x = np.full(size, site, dtype=np.int64)
    t = np.zeros(size)
    integral = np.zeros(size)
    jumps = np.zeros(size, dtype=np.int64)
    active = np.arange(size)
    while active.size:
        xa = x[active]
        tn = t[active] + exponential(rng, rates[xa])
        done = tn >= time
        integral[active] += mu[xa] * (np.where(done, time, tn) - t[active])
        active, tn, xa = active[~done], tn[~done], xa[~done]
        k = (rng.random(active.size) * coord[xa]).astype(np.int64)
        x[active] = table[xa, k]
        t[active] = tn
        jumps[active] += 1
    return x, integral, jumps


def _single_task(job):
    (spec, b, X, time, table), seed, chunk, size = job
    rng = stream(seed, chunk)
    fv = as_field(b, spec.n)
    x, integral, _ = _single_walks(spec, X.site, time, rng, size)
    weight = np.exp(-integral + time * fv.shift(X.flavor))
    # table: (L, n) values of the test function; row per final site
    values = weight[:, None] * table[x]
    acc = [Moments() for _ in range(table.shape[1])]
    for col, m in enumerate(acc):
        m.add_values(values[:, col])
    return acc


def fk_single_semigroup_row(spec: ModelSpec, b, X: SiteFlavor, time: float, samples: int,
                            seed: int = 0, workers: int = 1):
    """Estimates of ``(e^{-t h} δ_Y)(X)`` for every site Y at X's flavor.

    Returns ``(mean, std_error)`` arrays indexed by site.  Entries with a
    different flavor vanish identically.
    """
    L = spec.lattice.size
    table = np.eye(L)
    parts = _run_chunks(_single_task, (spec, b, X, time, table), samples, seed, workers)
    merged = [Moments() for _ in range(L)]
    for acc in parts:
        merged = [m.merge(a) for m, a in zip(merged, acc)]
    return np.array([m.mean for m in merged]), np.array([m.std_error for m in merged])


def fk_single_estimate(spec: ModelSpec, b, f, X: SiteFlavor, time: float, samples: int,
                       seed: int = 0, workers: int = 1) -> tuple[float, float]:
    """Monte Carlo value of ``E_X[e^{-∫v} f(X_t)]``.

    ``f`` is a callable on SiteFlavor or an ``(L, n)`` array over Ω.
    """
    if samples < 1:
        raise DomainError("samples must be >= 1")
    L, n = spec.lattice.size, spec.n
    if callable(f):
        grid = np.array([[f(SiteFlavor(x, s + 1)) for s in range(n)] for x in range(L)], dtype=float)
    else:
        grid = np.asarray(f, dtype=float).reshape(L, n)
    table = grid[:, X.flavor - 1][:, None]
    parts = _run_chunks(_single_task, (spec, b, X, time, table), samples, seed, workers)
    m = Moments()
    for acc in parts:
        m = m.merge(acc[0])
    return m.mean, m.std_error


# --------------------------------------------------------------------------
# Many-body engine
# --------------------------------------------------------------------------

class _Tables:
    def __init__(self, spec: ModelSpec):
        L = spec.lattice.size
        self.rates = spec.degrees
        self.nbr = spec.lattice.neighbor_table
        self.coord = spec.lattice.coordination
        self.energy = spec.hole_energy
        self.occ = np.array([[x for x in range(L) if x != h] for h in range(L)], dtype=np.int64)
        self.label = np.full((L, L), -1, dtype=np.int64)
        for h in range(L):
            self.label[h, self.occ[h]] = np.arange(L - 1)


@dataclass
class _Batch:
    hole0: np.ndarray
    flavors: np.ndarray  # 0-based, per particle label
    pos: np.ndarray
    hole: np.ndarray
    alive: np.ndarray
    integral: np.ndarray
    jumps: np.ndarray
    log: list | None


def _run_batch(spec: ModelSpec, tab: _Tables, hole0, flavors, beta: float,
               rng: np.random.Generator, record: bool = False) -> _Batch:
    B = hole0.size
    pos = tab.occ[hole0].copy()
    hole = hole0.copy()
    t = np.zeros(B)
    integral = np.zeros(B)
    jumps = np.zeros(B, dtype=np.int64)
    alive = np.ones(B, dtype=bool)
    log = [] if record else None
    active = np.arange(B)
    last = pos.shape[1] - 1
    while active.size:
        r = tab.rates[pos[active]]
        R = r.sum(axis=1)
        tn = t[active] + exponential(rng, R)
        done = tn >= beta
        integral[active] += tab.energy[hole[active]] * (np.where(done, beta, tn) - t[active])
        move = ~done
        idx, tn, r, R = active[move], tn[move], r[move], R[move]
        if not idx.size:
            break
        u = rng.random(idx.size) * R
        j = np.minimum((np.cumsum(r, axis=1) <= u[:, None]).sum(axis=1), last)
        src = pos[idx, j]
        k = (rng.random(idx.size) * tab.coord[src]).astype(np.int64)
        dst = tab.nbr[src, k]
        ok = dst == hole[idx]
        alive[idx[~ok]] = False
        idx, j, src, dst, tn = idx[ok], j[ok], src[ok], dst[ok], tn[ok]
        pos[idx, j] = dst
        hole[idx] = src
        t[idx] = tn
        jumps[idx] += 1
        if record:
            log.append((idx, tn, j, dst))
        active = idx
    return _Batch(hole0, flavors, pos, hole, alive, integral, jumps, log)


def cycle_counts(tau: np.ndarray) -> np.ndarray:
    """Row-wise cycle type: ``out[:, m-1]`` = number of m-cycles."""
    M, N = tau.shape
    length = np.zeros((M, N), dtype=np.int64)
    cur = tau.copy()
    ident = np.arange(N)
    rows = np.arange(M)[:, None]
    for k in range(1, N + 1):
        hit = (cur == ident) & (length == 0)
        length[hit] = k
        cur = tau[rows, cur]
    out = np.zeros((M, N), dtype=np.int64)
    for m in range(1, N + 1):
        out[:, m - 1] = (length == m).sum(axis=1) // m
    return out


def counts_to_partition(counts) -> NPartition:
    parts = []
    for m in range(len(counts), 0, -1):
        parts += [m] * int(counts[m - 1])
    return NPartition(tuple(parts))


def _rebuild_paths(batch: _Batch, rows: np.ndarray, beta: float) -> list[MultiTrajectory]:
    """MultiTrajectory objects for the given sample rows from the event log."""
    if batch.log:
        idx = np.concatenate([e[0] for e in batch.log])
        tt = np.concatenate([e[1] for e in batch.log])
        jj = np.concatenate([e[2] for e in batch.log])
        dd = np.concatenate([e[3] for e in batch.log])
        order = np.argsort(idx, kind="stable")
        idx, tt, jj, dd = idx[order], tt[order], jj[order], dd[order]
        bounds = np.searchsorted(idx, np.stack([rows, rows + 1]))
    occ0 = None
    out = []
    for n_row, r in enumerate(rows):
        N = batch.pos.shape[1]
        L = N + 1
        occ0 = [x for x in range(L) if x != batch.hole0[r]]
        sites = [[x] for x in occ0]
        times = [[] for _ in range(N)]
        if batch.log:
            lo, hi = bounds[0, n_row], bounds[1, n_row]
            for t, j, d in zip(tt[lo:hi], jj[lo:hi], dd[lo:hi]):
                sites[j].append(int(d))
                times[j].append(float(t))
        out.append(MultiTrajectory(tuple(
            Trajectory(int(batch.flavors[r, j]) + 1, tuple(sites[j]), tuple(times[j]), float(beta))
            for j in range(N)), float(beta)))
    return out


@dataclass
class AcceptedPath:
    """A path in L_β with its b = 0 weight (sign included)."""

    initial_config: list[SiteFlavor]
    permutation: tuple[int, ...]
    partition: NPartition
    weight: float
    n_jumps: int
    trajectory: MultiTrajectory | None = None

    def to_json(self) -> str:
        rec = {
            "initial": [[X.site, X.flavor] for X in self.initial_config],
            "permutation": list(self.permutation),
            "weight": self.weight,
        }
        if self.trajectory is not None:
            rec["jumps"] = [[[t, x] for t, x in zip(p.jump_times, p.sites[1:])]
                            for p in self.trajectory.particles]
        return json.dumps(rec, separators=(",", ":"))


@dataclass
class _PeriodicChunk:
    samples: int
    hole0: np.ndarray
    flavors: np.ndarray
    tau: np.ndarray
    counts: np.ndarray
    log_weight0: np.ndarray  # -∫ W at b = 0
    sign: np.ndarray
    jumps: np.ndarray
    paths: list | None


def _periodic_task(job) -> _PeriodicChunk:
    (spec, beta, record), seed, chunk, size = job
    rng = stream(seed, chunk)
    L, N, n = spec.lattice.size, spec.N, spec.n
    tab = _Tables(spec)
    hole0 = rng.integers(L, size=size)
    flavors = rng.integers(n, size=(size, N))
    batch = _run_batch(spec, tab, hole0, flavors, beta, rng, record)
    tau = tab.label[hole0[:, None], batch.pos]
    rows = np.arange(size)[:, None]
    ok = batch.alive & (batch.hole == hole0)
    ok &= np.all(flavors[rows, np.where(tau < 0, 0, tau)] == flavors, axis=1)
    sel = np.flatnonzero(ok)
    tau = tau[sel]
    counts = cycle_counts(tau)
    parity = (N - counts.sum(axis=1)) % 2
    sign = np.where(parity == 1, -1.0, 1.0)
    sign *= np.where(batch.jumps[sel] % 2 == 1, -spec.hop_sign, 1.0)
    if spec.convention == "nagaoka" and np.any(sign < 0):
        raise AssertionError("sgn(τ)·(-1)^jumps = -1 on an accepted path")
    paths = _rebuild_paths(batch, sel, beta) if record else None
    return _PeriodicChunk(size, hole0[sel], flavors[sel], tau, counts, -batch.integral[sel], sign,
                          batch.jumps[sel], paths)


def _field_log_weight(spec: ModelSpec, b, beta: float, flavors: np.ndarray) -> np.ndarray:
    return beta * as_field(b, spec.n).shifts[flavors].sum(axis=1)


@dataclass
class ZEstimate:
    z_hat: float
    std_error: float
    samples: int
    accepted: int
    paths: list[AcceptedPath] = field(default_factory=list)

    @property
    def acceptance(self) -> float:
        return self.accepted / self.samples


def _accepted_from_chunk(spec: ModelSpec, ch: _PeriodicChunk) -> Iterator[AcceptedPath]:
    for i in range(ch.tau.shape[0]):
        occ = [x for x in range(spec.lattice.size) if x != ch.hole0[i]]
        initial = [SiteFlavor(x, int(s) + 1) for x, s in zip(occ, ch.flavors[i])]
        yield AcceptedPath(initial, tuple(int(v) for v in ch.tau[i]), counts_to_partition(ch.counts[i]),
                           float(ch.sign[i] * np.exp(ch.log_weight0[i])), int(ch.jumps[i]),
                           ch.paths[i] if ch.paths is not None else None)


def estimate_partition_function(spec: ModelSpec, b, beta: float, samples: int, seed: int = 0,
                                workers: int = 1, keep_paths: bool = False,
                                record: bool = False) -> ZEstimate:
    """``Z ≈ |Λ| n^N · mean(1_{L_β} · sign · e^{-∫W})`` over uniform starts."""
    if beta < 0:
        raise DomainError("beta must be >= 0")
    chunks = _run_chunks(_periodic_task, (spec, beta, record), samples, seed, workers)
    m = Moments()
    accepted = 0
    paths = []
    for ch in chunks:
        y = spec.dimension * ch.sign * np.exp(ch.log_weight0 + _field_log_weight(spec, b, beta, ch.flavors))
        # rejected samples contribute zeros
        m = m.merge(Moments(ch.samples, float(y.sum()), float(np.square(y).sum())))
        accepted += ch.tau.shape[0]
        if keep_paths:
            paths.extend(_accepted_from_chunk(spec, ch))
    return ZEstimate(m.mean, m.std_error, samples, accepted, paths)


def iter_accepted_paths(spec: ModelSpec, beta: float, samples: int, seed: int = 0,
                        workers: int = 1, record: bool = True) -> Iterator[AcceptedPath]:
    """Stream of accepted paths, chunk by chunk, in substream order."""
    sizes = chunk_sizes(samples)
    step = max(1, workers)
    for start in range(0, len(sizes), step):
        ids = range(start, min(start + step, len(sizes)))
        jobs = [((spec, beta, record), seed, c, sizes[c]) for c in ids]
        if workers <= 1:
            results = [_periodic_task(j) for j in jobs]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_periodic_task, jobs))
        for ch in results:
            yield from _accepted_from_chunk(spec, ch)


# --------------------------------------------------------------------------
# Many-body matrix elements
# --------------------------------------------------------------------------

def _as_state(spec: ModelSpec, X) -> EdBasisState:
    if isinstance(X, EdBasisState):
        return X
    return basis_of(spec).state(int(X))


def _matrix_element_task(job):
    (spec, b, X, Y, beta), seed, chunk, size = job
    rng = stream(seed, chunk)
    tab = _Tables(spec)
    N = spec.N
    hole0 = np.full(size, X.hole, dtype=np.int64)
    flavors = np.tile(np.asarray(X.flavors, dtype=np.int64) - 1, (size, 1))
    batch = _run_batch(spec, tab, hole0, flavors, beta, rng)
    target = np.full(spec.lattice.size, -1, dtype=np.int64)
    target[tab.occ[Y.hole]] = np.asarray(Y.flavors) - 1
    ok = batch.alive & (batch.hole == Y.hole)
    ok &= np.all(target[batch.pos] == flavors, axis=1)
    sel = np.flatnonzero(ok)
    pi = tab.label[Y.hole][batch.pos[sel]]
    parity = (N - cycle_counts(pi).sum(axis=1)) % 2
    sign = np.where(parity == 1, -1.0, 1.0) * np.where(batch.jumps[sel] % 2 == 1, -spec.hop_sign, 1.0)
    y = sign * np.exp(-batch.integral[sel] + _field_log_weight(spec, b, beta, flavors[sel]))
    return Moments(size, float(y.sum()), float(np.square(y).sum()))


def fk_many_body_estimate(spec: ModelSpec, b, X, Y, beta: float, samples: int, seed: int = 0,
                          workers: int = 1) -> tuple[float, float]:
    """Estimate ``<e_X| e^{-βH(b)} |e_Y>`` for basis states X, Y (or their indices)."""
    X, Y = _as_state(spec, X), _as_state(spec, Y)
    if beta == 0:
        return (1.0 if X.index == Y.index else 0.0), 0.0
    parts = _run_chunks(_matrix_element_task, (spec, b, X, Y, beta), samples, seed, workers)
    m = Moments()
    for p in parts:
        m = m.merge(p)
    return m.mean, m.std_error


def write_paths_jsonl(paths, fh) -> int:
    count = 0
    for p in paths:
        fh.write(p.to_json() + "\n")
        count += 1
    return count
