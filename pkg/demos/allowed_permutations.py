"""
Which permutations can the hole produce?
========================================

Moving the hole around a closed circuit permutes the particles it passed.
On a bipartite graph every circuit has even length and the permutation is
even.  Including diagonal bonds turns the 2×2 box into the complete graph
K4, where a triangle circuit swaps two particles.
"""

from hubbard_loops import box, paths, loops
from hubbard_loops.model import SiteFlavor

for metric in ("l1", "max"):
    spec = box(2, 2, n=2, metric=metric)
    base = [SiteFlavor(x, 1) for x in (1, 2, 3)]
    report = loops.allowed_permutations_bfs(spec, base)
    accepted = list(paths.iter_accepted_paths(spec, 0.5, 200_000, seed=3, record=False))
    seen = loops.observed_permutations(accepted, hole=0)
    print(f"{metric}: bipartite={spec.lattice.is_bipartite()}, {report.nodes} labeled configurations")
    for perm in sorted(report.allowed):
        sign = "+" if loops.permutation_sign(perm) > 0 else "-"
        print(f"   {perm} {sign}  seen in sampling: {perm in seen.allowed}")
