"""Exact diagonalization of the one-hole Hamiltonian.

Basis states are unit antisymmetrized vectors labelled by the hole site and
the flavors of the occupied sites taken in canonical site order.  Moving the
particle at ``y`` into the hole at ``h`` picks up the sign
``(-1)^{#occupied sites strictly between}``, i.e. ``(-1)^{|y-h|-1}`` in site
indices, since every site between them is occupied.
"""
from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh
from scipy.optimize import nnls
from scipy.special import logsumexp

from .model import (DomainError, FieldVector, GG_beta, ModelSpec, NPartition, as_field,
                    enumerate_partitions)

DEFAULT_CAP = 10**6


class DimensionCapError(RuntimeError):
    pass


class RankDeficientDesignError(RuntimeError):
    """The loop-weight design matrix cannot separate some partitions."""

    def __init__(self, rank: int, size: int, collinear: list[NPartition]):
        self.rank, self.size, self.collinear = rank, size, collinear
        names = ", ".join(p.key for p in collinear)
        super().__init__(f"design matrix has rank {rank} < {size}; collinear partitions: {names}")


def dimension_cap() -> int:
    return int(os.environ.get("HUBBARD_LOOPS_CAP", DEFAULT_CAP))


def _check_cap(dim: int):
    cap = dimension_cap()
    if dim > cap:
        raise DimensionCapError(f"dimension {dim} exceeds cap {cap} (set HUBBARD_LOOPS_CAP)")


# --------------------------------------------------------------------------
# Basis
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EdBasisState:
    hole: int
    flavors: tuple[int, ...]  # 1-based, occupied sites in canonical order
    index: int

    def occupied(self, L: int) -> list[int]:
        return [x for x in range(L) if x != self.hole]

    def flavor_map(self, L: int) -> dict[int, int]:
        return dict(zip(self.occupied(L), self.flavors))


class Basis:
    """Array form of the enumeration: hole-major, flavors in mixed radix."""

    def __init__(self, spec: ModelSpec):
        L, N, n = spec.lattice.size, spec.N, spec.n
        _check_cap(spec.dimension)
        self.L, self.N, self.n = L, N, n
        self.block = n**N
        self.weights = n ** np.arange(N - 1, -1, -1, dtype=np.int64)
        codes = np.indices((n,) * N).reshape(N, -1).T if N else np.zeros((1, 0), np.int64)
        self.block_codes = codes.astype(np.int64)
        self.holes = np.repeat(np.arange(L), self.block)
        self.codes = np.tile(self.block_codes, (L, 1))
        self.counts = np.stack([(self.codes == s).sum(axis=1) for s in range(n)], axis=1)

    @property
    def dimension(self) -> int:
        return self.L * self.block

    def index(self, hole: int, codes) -> np.ndarray:
        return hole * self.block + np.asarray(codes, dtype=np.int64) @ self.weights

    def state(self, i: int) -> EdBasisState:
        return EdBasisState(int(self.holes[i]), tuple(int(c) + 1 for c in self.codes[i]), int(i))

    def sectors(self):
        """Groups of basis indices sharing the flavor-count vector."""
        keys, inverse = np.unique(self.counts, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        order = np.argsort(inverse, kind="stable")
        bounds = np.searchsorted(inverse[order], np.arange(len(keys) + 1))
        return [(keys[k], order[bounds[k]:bounds[k + 1]]) for k in range(len(keys))]


@lru_cache(maxsize=32)
def basis_of(spec: ModelSpec) -> Basis:
    return Basis(spec)


def enumerate_basis(spec: ModelSpec) -> list[EdBasisState]:
    basis = basis_of(spec)
    return [basis.state(i) for i in range(basis.dimension)]


# --------------------------------------------------------------------------
# Operators
# --------------------------------------------------------------------------

@dataclass
class EdOperator:
    dimension: int
    matrix: object  # scipy sparse (hamiltonian, h_sigma) or ndarray (semigroup)
    kind: str

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if sp.issparse(self.matrix) else np.asarray(self.matrix)


def _hopping_entries(spec: ModelSpec, basis: Basis):
    L, t = basis.L, spec.hop
    rows, cols, vals = [], [], []
    local = np.arange(basis.block)
    for h in range(L):
        occ_h = [x for x in range(L) if x != h]
        for y in spec.lattice.adjacency[h]:
            occ_y = [x for x in range(L) if x != y]
            pick = [occ_h.index(y) if x == h else occ_h.index(x) for x in occ_y]
            new = basis.index(y, basis.block_codes[:, pick])
            sign = -1.0 if (abs(y - h) - 1) % 2 else 1.0
            rows.append(new)
            cols.append(h * basis.block + local)
            vals.append(np.full(basis.block, spec.hop_sign * t * sign))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def diagonal_energy(spec: ModelSpec, b, basis: Basis | None = None) -> np.ndarray:
    """``Σ_occ d(x) + Σ_occ μ_x + V_o - Σ_σ b_σ h_σ`` for every basis state."""
    basis = basis or basis_of(spec)
    fv = as_field(b, spec.n)
    per_hole = spec.degrees.sum() - spec.degrees + spec.hole_energy
    return per_hole[basis.holes] - fv.shifts[basis.codes].sum(axis=1)


@lru_cache(maxsize=32)
def _hopping_matrix(spec: ModelSpec) -> sp.csr_matrix:
    basis = basis_of(spec)
    r, c, v = _hopping_entries(spec, basis)
    return sp.csr_matrix((v, (r, c)), shape=(basis.dimension,) * 2)


def build_hamiltonian(spec: ModelSpec, b=None) -> EdOperator:
    basis = basis_of(spec)
    b = FieldVector.zero(spec.n) if b is None else b
    H = _hopping_matrix(spec) + sp.diags(diagonal_energy(spec, b, basis))
    return EdOperator(basis.dimension, H.tocsr(), "hamiltonian")


def build_h_sigma(spec: ModelSpec, sigma: int) -> EdOperator:
    """Diagonal operator ``N_σ - N_{σ+1}``."""
    if not 1 <= sigma <= spec.n - 1:
        raise DomainError(f"sigma={sigma} must lie in 1..{spec.n - 1}")
    basis = basis_of(spec)
    diag = basis.counts[:, sigma - 1] - basis.counts[:, sigma]
    return EdOperator(basis.dimension, sp.diags(diag.astype(float)).tocsr(), "h_sigma")


def _sector_eigh(H: sp.csr_matrix, basis: Basis, vectors: bool):
    out = []
    for counts, idx in basis.sectors():
        block = H[idx][:, idx].toarray()
        if vectors:
            w, v = eigh(block)
        else:
            w, v = eigh(block, eigvals_only=True), None
        out.append((counts, idx, w, v))
    return out


def single_particle_hamiltonian(spec: ModelSpec, b) -> np.ndarray:
    """Dense ``h_μ(b) = h_0 + μ - Σ b_σ k_σ`` on ℓ²(Λ)⊗ℂ^n, index ``x·n + σ - 1``.

    ``h_0`` is the graph Laplacian ``Σ_y t (f(x) - f(y))``.
    """
    fv = as_field(b, spec.n)
    L, n = spec.lattice.size, spec.n
    h = np.zeros((L * n, L * n))
    for x, nbrs in enumerate(spec.lattice.adjacency):
        for s in range(n):
            i = x * n + s
            h[i, i] = spec.degrees[x] + spec.onsite_potential[x] - fv.shifts[s]
            for y in nbrs:
                h[i, y * n + s] = -spec.hop
    return h


def partition_function(spec: ModelSpec, b, beta: float) -> float:
    """``Tr exp(-β H(b))`` from the eigenvalues of ``build_hamiltonian``."""
    if beta < 0:
        raise DomainError("beta must be >= 0")
    H = build_hamiltonian(spec, b).matrix
    eigs = np.concatenate([w for *_, w, _ in _sector_eigh(H, basis_of(spec), False)])
    return float(np.exp(logsumexp(-beta * eigs)))


def semigroup(spec: ModelSpec, b, beta: float) -> EdOperator:
    """Dense ``exp(-β H(b))`` in the basis enumeration."""
    basis = basis_of(spec)
    H = build_hamiltonian(spec, b).matrix
    S = np.zeros((basis.dimension,) * 2)
    for _, idx, w, v in _sector_eigh(H, basis, True):
        S[np.ix_(idx, idx)] = (v * np.exp(-beta * w)) @ v.T
    return EdOperator(basis.dimension, S, "semigroup")


class EdSpectrum:
    """Cached field-free spectrum, one block per flavor-count sector.

    The field only shifts each sector by ``-Σ_τ N_τ f(τ)``, so Z and
    ``<h_σ>`` at any field follow from the b = 0 eigenvalues.
    """

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        basis = basis_of(spec)
        H0 = build_hamiltonian(spec).matrix
        self.sectors = [(counts, w) for counts, _, w, _ in _sector_eigh(H0, basis, False)]

    def _log_terms(self, b, beta):
        f = as_field(b, self.spec.n).shifts
        return [(counts, -beta * w + beta * float(counts @ f)) for counts, w in self.sectors]

    def log_partition_function(self, b, beta: float) -> float:
        return float(logsumexp(np.concatenate([x for _, x in self._log_terms(b, beta)])))

    def partition_function(self, b, beta: float) -> float:
        return math.exp(self.log_partition_function(b, beta))

    def expectation_h(self, b, beta: float, sigma: int) -> float:
        terms = self._log_terms(b, beta)
        logs = np.array([logsumexp(x) for _, x in terms])
        h = np.array([c[sigma - 1] - c[sigma] for c, _ in terms], dtype=float)
        weights = np.exp(logs - logs.max())
        return float(h @ weights / weights.sum())

    def ground_energy(self) -> float:
        return float(min(w.min() for _, w in self.sectors))


def thermal_expectation_h(spec: ModelSpec, b, beta: float, sigma: int) -> float:
    """``Tr[h_σ e^{-βH}] / Z``."""
    if not 1 <= sigma <= spec.n - 1:
        raise DomainError(f"sigma={sigma} must lie in 1..{spec.n - 1}")
    if beta <= 0:
        raise DomainError("beta must be positive")
    return EdSpectrum(spec).expectation_h(b, beta, sigma)


# --------------------------------------------------------------------------
# Loop-expansion coefficients
# --------------------------------------------------------------------------

@dataclass
class DFit:
    beta: float
    D: dict[NPartition, float]
    relative_residual: float
    rank: int
    singular_values: np.ndarray

    @property
    def min_D(self) -> float:
        return min(self.D.values())

    def Z(self, b) -> float:
        return sum(d * GG_beta(p, self.beta, b) for p, d in self.D.items())


def design_matrix(partitions, beta: float, b_grid) -> np.ndarray:
    return np.array([[GG_beta(p, beta, b) for p in partitions] for b in b_grid])


def fit_D_coefficients(spec: ModelSpec, beta: float, b_grid, spectrum: EdSpectrum | None = None,
                       rank_tol: float = 1e-9) -> DFit:
    """Nonnegative least-squares fit of ``Z(β; b) = Σ_n D(n) G(n; b)`` over a field grid."""
    parts = enumerate_partitions(spec.N)
    grid = [as_field(b, spec.n) for b in b_grid]
    if len(grid) < 3 * len(parts):
        raise DomainError(f"need at least {3 * len(parts)} fields, got {len(grid)}")
    spectrum = spectrum or EdSpectrum(spec)
    z = np.array([spectrum.partition_function(b, beta) for b in grid])
    A = design_matrix(parts, beta, grid)
    # relative rows, unit-norm columns
    As = A / z[:, None]
    scale = np.linalg.norm(As, axis=0)
    As = As / scale
    _, s, vt = np.linalg.svd(As, full_matrices=False)
    rank = int(np.sum(s > rank_tol * s[0]))
    if rank < len(parts):
        null = vt[rank:]
        weight = np.linalg.norm(null, axis=0)
        raise RankDeficientDesignError(rank, len(parts), [p for p, w in zip(parts, weight) if w > 1e-8])
    x, _ = nnls(As, np.ones(len(z)))
    D = x / scale
    residual = float(np.linalg.norm(A @ D - z) / np.linalg.norm(z))
    return DFit(beta, dict(zip(parts, D.tolist())), residual, rank, s)


# --------------------------------------------------------------------------
# Finite on-site interaction
# --------------------------------------------------------------------------

def finite_U_hamiltonian(spec: ModelSpec, b, U: float, self_pairing: bool = False):
    """Hamiltonian on the full N-particle space with on-site repulsion U.

    Returns ``(H, states)`` where states are tuples of occupied modes
    ``x*n + (σ-1)``.  ``V_d = U Σ_x n_x (n_x - 1)``; ``self_pairing`` adds the
    i = j terms of the double sum, a constant ``U N``.
    """
    if U < 0:
        raise DomainError("U must be >= 0")
    L, n, N = spec.lattice.size, spec.n, spec.N
    dim = math.comb(n * L, N)
    _check_cap(dim)
    fv = as_field(b, n)
    states = list(itertools.combinations(range(n * L), N))
    index = {s: i for i, s in enumerate(states)}
    Ucoul = spec.coulomb_matrix
    rows, cols, vals = [], [], []
    diag = np.zeros(dim)
    for i, modes in enumerate(states):
        occ = set(modes)
        nx = np.zeros(L)
        for m in modes:
            nx[m // n] += 1
        sites = np.array([m // n for m in modes])
        flav = np.array([m % n for m in modes])
        diag[i] = (spec.degrees[sites].sum() + spec.onsite_potential[sites].sum()
                   + nx @ Ucoul @ nx + U * float(nx @ (nx - 1)) - fv.shifts[flav].sum())
        if self_pairing:
            diag[i] += U * N
        for m in modes:
            x, s = divmod(m, n)
            for y in spec.lattice.adjacency[x]:
                target = y * n + s
                if target in occ:
                    continue
                lo, hi = min(m, target), max(m, target)
                between = sum(1 for q in modes if lo < q < hi)
                new = tuple(sorted((occ - {m}) | {target}))
                rows.append(index[new])
                cols.append(i)
                vals.append(spec.hop_sign * spec.hop * (-1.0) ** between)
    H = sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim)) + sp.diags(diag)
    return H.tocsr(), states


def finite_U_partition_function(spec: ModelSpec, b, beta: float, U: float,
                                self_pairing: bool = False) -> float:
    H, _ = finite_U_hamiltonian(spec, b, U, self_pairing)
    w = eigh(H.toarray(), eigvals_only=True)
    return float(np.exp(logsumexp(-beta * w)))


# --------------------------------------------------------------------------
# Flavor relabelling
# --------------------------------------------------------------------------

def flavor_relabel_spectrum_check(spec: ModelSpec, permutation, b=None, tol: float = 1e-12) -> bool:
    """Does relabelling every flavor by ``permutation`` leave H(b) unchanged?

    ``permutation`` lists the images of flavors 1..n.
    """
    perm = np.asarray(permutation, dtype=np.int64) - 1
    if sorted(perm.tolist()) != list(range(spec.n)):
        raise DomainError(f"{permutation} is not a permutation of 1..{spec.n}")
    basis = basis_of(spec)
    image = basis.index(basis.holes, perm[basis.codes])
    H = build_hamiltonian(spec, b).matrix
    P = sp.csr_matrix((np.ones(basis.dimension), (image, np.arange(basis.dimension))),
                      shape=H.shape)
    conj = P @ H @ P.T
    diff = abs(conj - H)
    return bool(diff.max() <= tol) if diff.nnz else True
