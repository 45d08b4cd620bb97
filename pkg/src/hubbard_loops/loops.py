"""Flavored loops, winding numbers and the loop expansion of Z.

An accepted path with endpoint permutation τ closes up into loops by
periodicity in time: each cycle of τ is one loop, its winding number is the
cycle length and its flavor is the common flavor of the member worldlines.
"""
from __future__ import annotations

import json
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .ed import EdBasisState
from .model import (DomainError, GG_beta, ModelSpec, NPartition, SiteFlavor, as_field,
                    enumerate_partitions, k_sigma)


class IntegrityError(RuntimeError):
    """A path and its claimed permutation disagree; indicates a sampler bug."""


@dataclass(frozen=True)
class FlavoredLoop:
    flavor: int
    members: tuple[int, ...]

    @property
    def winding(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class LoopDecomposition:
    loops: tuple[FlavoredLoop, ...]
    source_permutation: tuple[int, ...]

    @property
    def partition(self) -> NPartition:
        return NPartition(tuple(l.winding for l in self.loops))

    @property
    def flavors(self) -> tuple[int, ...]:
        return tuple(l.flavor for l in self.loops)

    def to_json(self) -> str:
        return json.dumps({
            "partition": self.partition.key,
            "permutation": list(self.source_permutation),
            "loops": [{"flavor": l.flavor, "winding": l.winding, "members": list(l.members)}
                      for l in self.loops],
        }, separators=(",", ":"))


def permutation_cycles(perm: Sequence[int]) -> list[tuple[int, ...]]:
    """Cycles of a 0-based permutation, each starting at its smallest element."""
    seen = [False] * len(perm)
    out = []
    for start in range(len(perm)):
        if seen[start]:
            continue
        cyc, j = [], start
        while not seen[j]:
            seen[j] = True
            cyc.append(j)
            j = perm[j]
        out.append(tuple(cyc))
    return out


def permutation_sign(perm: Sequence[int]) -> int:
    return -1 if (len(perm) - len(permutation_cycles(perm))) % 2 else 1


def extract_loops(path, perm: Sequence[int]) -> LoopDecomposition:
    """Decompose a periodic path into flavored loops.

    ``path`` is anything with ``initial_config``; when it also has
    ``final_config`` the endpoint is checked against τ.
    """
    initial = path.initial_config
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(len(initial))):
        raise IntegrityError(f"{perm} is not a permutation of {len(initial)} particles")
    final = getattr(path, "final_config", None)
    if final is not None and any(final[j] != initial[perm[j]] for j in range(len(perm))):
        raise IntegrityError("endpoint configuration is not τ applied to the initial one")
    loops = []
    for cyc in permutation_cycles(perm):
        flavors = {initial[j].flavor for j in cyc}
        if len(flavors) != 1:
            raise IntegrityError(f"loop {cyc} mixes flavors {sorted(flavors)}")
        loops.append(FlavoredLoop(flavors.pop(), cyc))
    return LoopDecomposition(tuple(loops), perm)


def loop_weight(loop: FlavoredLoop, beta: float, b) -> float:
    return math.exp(beta * loop.winding * as_field(b).shift(loop.flavor))


def verify_weight_identity(path, decomposition: LoopDecomposition, beta: float, b) -> float:
    """``|Σ_j ∫ Σ_σ b_σ k_σ(X^{(j)}_s) ds − Σ_γ β w_γ f(σ_γ)|``, both sides in log space."""
    fv = as_field(b)
    bvec = fv.as_array()
    lhs = 0.0
    for traj in path.particles:
        k = np.array([k_sigma(traj.start, s, fv.n) for s in range(1, fv.n)], dtype=float)
        rate = float(bvec @ k)
        for _, length in traj.sojourns():
            lhs += rate * length
    rhs = sum(beta * l.winding * fv.shift(l.flavor) for l in decomposition.loops)
    return abs(lhs - rhs)


# --------------------------------------------------------------------------
# Dynamically allowed permutations
# --------------------------------------------------------------------------

@dataclass
class AllowedPermutationReport:
    base_config: tuple[SiteFlavor, ...]
    allowed: frozenset
    method: str  # "bfs" or "mc-observed"
    nodes: int = 0

    @property
    def odd(self) -> list[tuple[int, ...]]:
        return sorted(p for p in self.allowed if permutation_sign(p) < 0)

    @property
    def all_even(self) -> bool:
        return not self.odd


def _as_config(spec: ModelSpec, X) -> tuple[SiteFlavor, ...]:
    if isinstance(X, EdBasisState):
        occ = [x for x in range(spec.lattice.size) if x != X.hole]
        return tuple(SiteFlavor(x, int(s)) for x, s in zip(occ, X.flavors))
    X = tuple(X)
    if len(X) != spec.N or len({p.site for p in X}) != spec.N:
        raise DomainError("need N particles on distinct sites")
    return X


def allowed_permutations_bfs(spec: ModelSpec, X, cap: int = 10**6) -> AllowedPermutationReport:
    """Permutations τ such that the labeled configuration τX is reachable by hole hops.

    Nodes are (hole, labels by site); hops preserve flavors, so reachability
    of labeled arrangements does not depend on the flavor assignment.
    """
    X = _as_config(spec, X)
    L, N = spec.lattice.size, spec.N
    if L * math.factorial(N) > cap:
        raise DomainError(f"configuration graph has {L * math.factorial(N)} nodes, over the cap {cap}")
    adj = spec.lattice.adjacency
    arrangement = [-1] * L
    for j, p in enumerate(X):
        arrangement[p.site] = j
    hole = arrangement.index(-1)
    start = (hole, tuple(arrangement))
    seen = {start}
    queue = deque([start])
    allowed = set()
    while queue:
        h, arr = queue.popleft()
        if h == hole:
            # entry i is the particle now sitting on X^{(i)}, i.e. the inverse of τ
            allowed.add(tuple(arr[X[j].site] for j in range(N)))
        for y in adj[h]:
            nxt = list(arr)
            nxt[h], nxt[y] = nxt[y], -1
            node = (y, tuple(nxt))
            if node not in seen:
                seen.add(node)
                queue.append(node)
    allowed = {tuple(np.argsort(p)) for p in allowed}
    allowed = frozenset(tuple(int(v) for v in p) for p in allowed)
    return AllowedPermutationReport(X, allowed, "bfs", len(seen))


def observed_permutations(paths: Iterable, hole: int) -> AllowedPermutationReport | None:
    """Permutations realized by accepted paths whose initial hole is ``hole``."""
    base, perms = None, set()
    for p in paths:
        sites = {q.site for q in p.initial_config}
        if hole in sites:
            continue
        base = base or tuple(p.initial_config)
        perms.add(tuple(p.permutation))
    if base is None:
        return None
    return AllowedPermutationReport(base, frozenset(perms), "mc-observed")


# --------------------------------------------------------------------------
# Loop-expansion coefficients
# --------------------------------------------------------------------------

@dataclass
class DEstimate:
    """Monte Carlo loop coefficients from b = 0 weighted accepted paths."""

    spec: ModelSpec
    beta: float
    samples: int
    accepted: int
    sums: dict = field(default_factory=dict)      # partition -> Σ weight
    squares: dict = field(default_factory=dict)   # partition -> Σ weight²
    counts: dict = field(default_factory=dict)    # partition -> number of paths
    flavor_counts: dict = field(default_factory=dict)  # partition -> Counter of loop flavor tuples
    _paths: list = field(default_factory=list, repr=False)

    def _scale(self, part: NPartition) -> float:
        return self.spec.dimension / self.spec.n ** part.length

    def D(self, part: NPartition) -> tuple[float, float]:
        """``(D_hat, std_error)``; unobserved partitions give ``(0, 0)``."""
        S = self.samples
        s, q = self.sums.get(part, 0.0), self.squares.get(part, 0.0)
        var = max(q - s * s / S, 0.0) / (S - 1) if S > 1 else 0.0
        c = self._scale(part)
        return c * s / S, c * math.sqrt(var / S)

    @property
    def table(self) -> dict:
        return {p: self.D(p) for p in enumerate_partitions(self.spec.N)}

    def Z(self, b) -> tuple[float, float]:
        """``Σ_n D_hat(n) 𝒢_β(n; b)`` with its standard error from the per-path values."""
        fv = as_field(b, self.spec.n)
        S = self.samples
        total = sum(self.sums.get(p, 0.0) * self._scale(p) * GG_beta(p, self.beta, fv)
                    for p in self.sums)
        mean = total / S
        # per-path value dim · w · e^{βΣ_j f(σ_j)}; recomputed from the stored paths
        y = np.array([self.spec.dimension * w * math.exp(self.beta * sum(fv.shift(q.flavor) for q in cfg))
                      for cfg, w in self._paths])
        sq = float(np.square(y).sum())
        var = max(sq - y.sum() ** 2 / S, 0.0) / (S - 1) if S > 1 else 0.0
        return mean, math.sqrt(var / S)

    def flavor_uniformity(self, part: NPartition) -> float:
        """χ² p-value for uniform loop flavors within one stratum."""
        k = part.length
        counter = self.flavor_counts.get(part, Counter())
        obs = np.array([counter.get(F, 0) for F in product(range(1, self.spec.n + 1), repeat=k)], dtype=float)
        if obs.sum() == 0:
            return float("nan")
        return float(stats.chisquare(obs).pvalue)

    def rows(self) -> list[dict]:
        out = []
        for p in enumerate_partitions(self.spec.N):
            d, se = self.D(p)
            out.append({"partition": p.key, "D_hat": d, "std_error": se, "count": self.counts.get(p, 0)})
        return out


def estimate_D(accepted_paths: Iterable, spec: ModelSpec, beta: float, samples: int) -> DEstimate:
    """Accumulate per-partition sums of b = 0 weights over the accepted stream.

    ``samples`` is the total number of draws behind the stream, accepted or not.
    """
    est = DEstimate(spec, beta, samples, 0)
    for path in accepted_paths:
        dec = extract_loops(path, path.permutation)
        part = dec.partition
        if part != path.partition:
            raise IntegrityError("sampler partition disagrees with the loop decomposition")
        w = path.weight
        est.accepted += 1
        est.sums[part] = est.sums.get(part, 0.0) + w
        est.squares[part] = est.squares.get(part, 0.0) + w * w
        est.counts[part] = est.counts.get(part, 0) + 1
        est.flavor_counts.setdefault(part, Counter())[dec.flavors] += 1
        est._paths.append((tuple(path.initial_config), w))
    if est.accepted == 0:
        raise DomainError("no accepted paths in the stream")
    return est
