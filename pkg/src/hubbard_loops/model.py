"""Lattice geometry, model parameters and the closed-form scalar functions.

Sites are addressed by their integer index in ``Lattice.sites`` (lexicographic
order of the coordinate vectors); coordinates are accepted wherever a site is
expected.  Flavors are 1-based in every public type.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

METRICS = ("max", "l1")
CONVENTIONS = ("nagaoka", "laplacian")


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


# --------------------------------------------------------------------------
# Lattice
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Lattice:
    """Open box ``Π_i {-(s_i//2), ..., s_i - s_i//2 - 1}`` with hopping graph.

    ``metric="max"`` joins sites at max-norm distance one (diagonals
    included); ``metric="l1"`` keeps only axis-aligned bonds.
    """

    side_lengths: tuple[int, ...]
    metric: str = "max"

    def __post_init__(self):
        sides = tuple(int(s) for s in self.side_lengths)
        if not sides or any(s < 1 for s in sides):
            raise DomainError(f"side lengths must be positive integers, got {self.side_lengths}")
        if self.metric not in METRICS:
            raise DomainError(f"metric must be one of {METRICS}, got {self.metric!r}")
        object.__setattr__(self, "side_lengths", sides)
        if len(sides) == 1:
            warnings.warn("d=1 lattices are meant for machinery tests only", stacklevel=2)

    @classmethod
    def hypercube(cls, d: int, ell: int, metric: str = "max") -> "Lattice":
        """The box ``(Z ∩ [-ell, ell))^d``."""
        return cls((2 * ell,) * d, metric)

    @property
    def d(self) -> int:
        return len(self.side_lengths)

    @cached_property
    def sites(self) -> tuple[tuple[int, ...], ...]:
        axes = [range(-(s // 2), s - s // 2) for s in self.side_lengths]
        return tuple(itertools.product(*axes))

    @property
    def size(self) -> int:
        return len(self.sites)

    @cached_property
    def _index(self) -> dict[tuple[int, ...], int]:
        return {x: i for i, x in enumerate(self.sites)}

    def index(self, x) -> int:
        """Canonical index of a site given as coordinates or as an index."""
        if isinstance(x, (int, np.integer)):
            if not 0 <= x < self.size:
                raise DomainError(f"site index {x} outside lattice of {self.size} sites")
            return int(x)
        key = tuple(int(c) for c in x)
        try:
            return self._index[key]
        except KeyError:
            raise DomainError(f"site {key} is not in the lattice {self.side_lengths}") from None

    def is_bond(self, i: int, j: int) -> bool:
        a = np.subtract(self.sites[i], self.sites[j])
        if self.metric == "max":
            return int(np.max(np.abs(a))) == 1
        return int(np.sum(np.abs(a))) == 1

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        """Neighbor indices of every site, in canonical order."""
        L = self.size
        return tuple(tuple(j for j in range(L) if j != i and self.is_bond(i, j)) for i in range(L))

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """``(L, max_degree)`` array of neighbor indices padded with -1."""
        width = max((len(a) for a in self.adjacency), default=0)
        table = np.full((self.size, max(width, 1)), -1, dtype=np.int64)
        for i, nb in enumerate(self.adjacency):
            table[i, : len(nb)] = nb
        return table

    @cached_property
    def coordination(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=np.int64)

    def is_bipartite(self) -> bool:
        color = [-1] * self.size
        for start in range(self.size):
            if color[start] >= 0:
                continue
            color[start] = 0
            stack = [start]
            while stack:
                i = stack.pop()
                for j in self.adjacency[i]:
                    if color[j] < 0:
                        color[j] = 1 - color[i]
                        stack.append(j)
                    elif color[j] == color[i]:
                        return False
        return True


def neighbors(lat: Lattice, x) -> list[tuple[int, ...]]:
    """Coordinates of the sites joined to ``x`` (no periodic wrap)."""
    return [lat.sites[j] for j in lat.adjacency[lat.index(x)]]


# --------------------------------------------------------------------------
# Fields and flavors
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldVector:
    """External field ``(b_1, ..., b_{n-1})``."""

    b: tuple[float, ...]

    def __post_init__(self):
        b = tuple(float(v) for v in np.atleast_1d(np.asarray(self.b, dtype=float)))
        if not b:
            raise DomainError("a field vector needs at least one component (n >= 2)")
        object.__setattr__(self, "b", b)

    @classmethod
    def zero(cls, n: int) -> "FieldVector":
        return cls((0.0,) * (n - 1))

    @property
    def n(self) -> int:
        return len(self.b) + 1

    @cached_property
    def shifts(self) -> np.ndarray:
        """``f(σ)`` for σ = 1..n stored at positions 0..n-1.

        f(1) = b_1, f(σ) = b_σ - b_{σ-1}, f(n) = -b_{n-1}.
        """
        b = np.asarray(self.b)
        padded = np.concatenate([[0.0], b, [0.0]])
        return padded[1:] - padded[:-1]

    def shift(self, sigma: int) -> float:
        if not 1 <= sigma <= self.n:
            raise DomainError(f"flavor {sigma} outside 1..{self.n}")
        return float(self.shifts[sigma - 1])

    def as_array(self) -> np.ndarray:
        return np.asarray(self.b, dtype=float)


def as_field(b, n: int | None = None) -> FieldVector:
    """Coerce a scalar, sequence or FieldVector; check the length against ``n``."""
    fv = b if isinstance(b, FieldVector) else FieldVector(tuple(np.atleast_1d(b)))
    if n is not None and fv.n != n:
        raise DomainError(f"field has {len(fv.b)} components, expected n-1 = {n - 1}")
    return fv


def field_from_shifts(shifts: Sequence[float]) -> FieldVector:
    """Inverse of ``FieldVector.shifts`` for a zero-sum vector of length n."""
    f = np.asarray(shifts, dtype=float)
    if abs(f.sum()) > 1e-9 * max(1.0, np.abs(f).max()):
        raise DomainError("flavor shifts must sum to zero")
    return FieldVector(tuple(np.cumsum(f)[:-1]))


@dataclass(frozen=True)
class SiteFlavor:
    """A one-particle state ``X = (x, σ)`` with ``x`` a site index."""

    site: int
    flavor: int


def k_sigma(X: SiteFlavor, sigma: int, n: int | None = None) -> int:
    """+1 if X carries flavor σ, -1 if it carries σ+1, else 0."""
    if sigma < 1 or (n is not None and sigma > n - 1):
        raise DomainError(f"sigma={sigma} must lie in 1..n-1")
    if X.flavor == sigma:
        return 1
    if X.flavor == sigma + 1:
        return -1
    return 0


def field_potential(b, X: SiteFlavor, mu=0.0) -> float:
    """``v(X) = μ_x - Σ_σ b_σ k_σ(X)``.

    ``mu`` is either a scalar or an array indexed by site.
    """
    fv = as_field(b)
    if not 1 <= X.flavor <= fv.n:
        raise DomainError(f"flavor {X.flavor} outside 1..{fv.n}")
    mu_x = float(mu) if np.ndim(mu) == 0 else float(np.asarray(mu)[X.site])
    return mu_x - sum(bs * k_sigma(X, s) for s, bs in enumerate(fv.b, start=1))


# --------------------------------------------------------------------------
# Model specification
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ModelSpec:
    """SU(n) Hubbard model at U = ∞ with a single hole.

    ``offsite_coulomb`` maps unordered site-index pairs to ``U_{x,y}``; the
    interaction energy sums over *ordered* pairs, so each unordered pair
    contributes ``2 U_{x,y}`` when both sites are occupied.

    ``convention`` fixes the sign of the one-particle hopping element:
    ``"nagaoka"`` uses ``+t`` (the ``Σ t c*c`` form), ``"laplacian"`` uses
    ``-t`` (graph Laplacian).  Both share the diagonal ``d(x)``.
    """

    lattice: Lattice
    n_flavors: int = 2
    hop: float = 1.0
    onsite_potential: np.ndarray | None = None
    offsite_coulomb: dict = field(default_factory=dict)
    convention: str = "nagaoka"

    def __post_init__(self):
        if int(self.n_flavors) != self.n_flavors or self.n_flavors < 2:
            raise DomainError(f"n_flavors must be an integer >= 2, got {self.n_flavors}")
        if not self.hop > 0:
            raise DomainError(f"hopping t must be positive, got {self.hop}")
        if self.lattice.size < 2:
            raise DomainError("the lattice needs at least two sites")
        if self.convention not in CONVENTIONS:
            raise DomainError(f"convention must be one of {CONVENTIONS}")
        L = self.lattice.size
        mu = np.zeros(L) if self.onsite_potential is None else np.asarray(self.onsite_potential, float)
        if mu.ndim == 0:
            mu = np.full(L, float(mu))
        if mu.shape != (L,):
            raise DomainError(f"onsite potential must have one entry per site ({L})")
        mu.setflags(write=False)
        object.__setattr__(self, "onsite_potential", mu)
        coulomb = {}
        for pair, value in dict(self.offsite_coulomb).items():
            i, j = (self.lattice.index(p) for p in pair)
            if i == j:
                raise DomainError("offsite_coulomb only takes pairs of distinct sites")
            coulomb[(min(i, j), max(i, j))] = float(value)
        object.__setattr__(self, "offsite_coulomb", coulomb)

    @property
    def n(self) -> int:
        return self.n_flavors

    @property
    def N(self) -> int:
        return self.lattice.size - 1

    @property
    def hop_sign(self) -> int:
        return 1 if self.convention == "nagaoka" else -1

    @property
    def dimension(self) -> int:
        """Dimension of the one-hole space: ``|Λ| n^N``."""
        return self.lattice.size * self.n ** self.N

    @cached_property
    def degrees(self) -> np.ndarray:
        return self.hop * self.lattice.coordination.astype(float)

    @cached_property
    def coulomb_matrix(self) -> np.ndarray:
        L = self.lattice.size
        U = np.zeros((L, L))
        for (i, j), value in self.offsite_coulomb.items():
            U[i, j] = U[j, i] = value
        return U

    @cached_property
    def hole_energy(self) -> np.ndarray:
        """Field-free potential ``Σ_occ μ_x + V_o`` for each hole position."""
        mu, U = self.onsite_potential, self.coulomb_matrix
        total_U = U.sum()
        # drop both (h, y) and (y, h) ordered pairs
        return mu.sum() - mu + total_U - 2.0 * U.sum(axis=1)

    def with_(self, **changes) -> "ModelSpec":
        kw = dict(lattice=self.lattice, n_flavors=self.n_flavors, hop=self.hop,
                  onsite_potential=self.onsite_potential, offsite_coulomb=self.offsite_coulomb,
                  convention=self.convention)
        kw.update(changes)
        return ModelSpec(**kw)


def box(*sides: int, n: int = 2, metric: str = "max", **kw) -> ModelSpec:
    """Shorthand for a ModelSpec on an open box."""
    return ModelSpec(Lattice(tuple(sides), metric), n_flavors=n, **kw)


def degree(spec: ModelSpec, x) -> float:
    """``d(x) = Σ_y t_{x,y}``."""
    return float(spec.degrees[spec.lattice.index(x)])


# --------------------------------------------------------------------------
# Loop weights and the magnetization bound
# --------------------------------------------------------------------------

def G_beta(m: int, beta: float, b) -> float:
    """``Σ_σ exp(β m f(σ))``, the flavor sum attached to a loop of winding m."""
    if m < 1:
        raise DomainError("winding number must be >= 1")
    return float(np.exp(beta * m * as_field(b).shifts).sum())


@dataclass(frozen=True, order=True)
class NPartition:
    """Partition of N stored in non-increasing order."""

    parts: tuple[int, ...]

    def __post_init__(self):
        parts = tuple(sorted((int(p) for p in self.parts), reverse=True))
        if not parts or parts[-1] < 1:
            raise DomainError(f"a partition needs positive parts, got {self.parts}")
        object.__setattr__(self, "parts", parts)

    @classmethod
    def parse(cls, key: str) -> "NPartition":
        return cls(tuple(int(p) for p in key.split("-")))

    @property
    def total(self) -> int:
        return sum(self.parts)

    @property
    def length(self) -> int:
        return len(self.parts)

    @property
    def key(self) -> str:
        return "-".join(map(str, self.parts))

    def __str__(self) -> str:
        return self.key


def GG_beta(part: NPartition, beta: float, b) -> float:
    """Product of ``G_beta`` over the parts."""
    fv = as_field(b)
    return float(np.prod([G_beta(m, beta, fv) for m in part.parts]))


def enumerate_partitions(N: int) -> list[NPartition]:
    """All partitions of N in reverse-lexicographic order."""
    if N < 1:
        raise DomainError("N must be positive")

    def rec(rest: int, cap: int):
        if rest == 0:
            yield ()
            return
        for first in range(min(rest, cap), 0, -1):
            for tail in rec(rest - first, first):
                yield (first,) + tail

    return [NPartition(p) for p in rec(N, N)]


@dataclass(frozen=True)
class BoundTerms:
    f_val: float
    g_val: float
    rhs_per_particle: float
    dominant: bool
    n: int

    @property
    def corollary_per_particle(self) -> float:
        """The weaker ``f/(n-1)`` form of the bound."""
        return self.f_val / (self.n - 1)


def bound_terms(sigma: int, beta: float, b) -> BoundTerms:
    """``f_{β,σ}``, ``g_{β,σ}`` and ``f/(1+g)`` with ``B_τ ≡ f(τ)``.

    ``dominant`` reports whether ``B_σ > B_τ`` for every τ ≠ σ; the values are
    returned either way.
    """
    fv = as_field(b)
    n = fv.n
    if not 1 <= sigma <= n - 1:
        raise DomainError(f"sigma={sigma} must lie in 1..{n - 1}")
    B = fv.shifts
    s = sigma - 1
    gap = B[s] - B[s + 1]
    f_val = math.tanh(beta * gap / 2.0)  # (1-e^{-x})/(1+e^{-x})
    others = [t for t in range(n) if t not in (s, s + 1)]
    g_val = float(np.exp(beta * (B[others] - B[s])).sum()) if others else 0.0
    dominant = bool(all(B[s] > B[t] for t in range(n) if t != s))
    return BoundTerms(f_val, g_val, f_val / (1.0 + g_val), dominant, n)


def dominant_field(rng: np.random.Generator, n: int, sigma: int, scale: float = 1.0) -> FieldVector:
    """Random field whose flavor shift is strictly largest at ``sigma``."""
    while True:
        f = rng.normal(scale=scale, size=n)
        f -= f.mean()
        top = int(np.argmax(f))
        f[[top, sigma - 1]] = f[[sigma - 1, top]]
        if np.sum(f == f[sigma - 1]) == 1:
            return field_from_shifts(f)

