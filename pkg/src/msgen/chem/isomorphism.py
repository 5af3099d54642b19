"""Label-preserving graph isomorphism by VF2-style backtracking."""

from __future__ import annotations

from collections import Counter, deque

import numpy as np

from msgen.chem.canon import initial_colors, refine
from msgen.chem.graph import MolecularGraph


def _joint_colors(g1: MolecularGraph, g2: MolecularGraph) -> tuple[list[int], list[int]]:
    # refine on the disjoint union so colours are comparable across graphs
    n1 = g1.n
    n = n1 + g2.n
    b = np.zeros((n, n), dtype=np.int8)
    b[:n1, :n1] = g1.bonds
    b[n1:, n1:] = g2.bonds
    union = MolecularGraph(g1.atoms + g2.atoms, b)
    colors = refine(union, initial_colors(union))
    return colors[:n1], colors[n1:]


def find_isomorphism(g1: MolecularGraph, g2: MolecularGraph) -> dict[int, int] | None:
    """Return an atom mapping ``g1 -> g2`` preserving elements and bond types, or None."""
    if g1.n != g2.n or g1.num_edges != g2.num_edges:
        return None
    if sorted(g1.atoms) != sorted(g2.atoms):
        return None
    if sorted(g1.bonds.ravel().tolist()) != sorted(g2.bonds.ravel().tolist()):
        return None
    if g1.n == 0:
        return {}
    c1, c2 = _joint_colors(g1, g2)
    if Counter(c1) != Counter(c2):
        return None

    n = g1.n
    nbrs1 = [g1.neighbors(i) for i in range(n)]
    freq = Counter(c1)
    # match order: BFS from rarest colour, rarer colours first among frontier ties
    order: list[int] = []
    seen = [False] * n
    for start in sorted(range(n), key=lambda i: (freq[c1[i]], c1[i], i)):
        if seen[start]:
            continue
        seen[start] = True
        q = deque([start])
        while q:
            u = q.popleft()
            order.append(u)
            for v in sorted(nbrs1[u], key=lambda i: (freq[c1[i]], c1[i], i)):
                if not seen[v]:
                    seen[v] = True
                    q.append(v)

    by_color: dict[int, list[int]] = {}
    for j, c in enumerate(c2):
        by_color.setdefault(c, []).append(j)
    b1, b2 = g1.bonds, g2.bonds
    mapping: dict[int, int] = {}
    used = [False] * n

    def feasible(u: int, v: int) -> bool:
        for w, x in mapping.items():
            if b1[u, w] != b2[v, x]:
                return False
        return True

    def extend(depth: int) -> bool:
        if depth == n:
            return True
        u = order[depth]
        # a mapped neighbour pins the candidate set to its image's neighbours
        anchor = next((w for w in nbrs1[u] if w in mapping), None)
        cands = by_color[c1[u]] if anchor is None else np.flatnonzero(b2[mapping[anchor]]).tolist()
        for v in cands:
            if used[v] or c2[v] != c1[u] or not feasible(u, v):
                continue
            mapping[u] = v
            used[v] = True
            if extend(depth + 1):
                return True
            del mapping[u]
            used[v] = False
        return False

    return dict(mapping) if extend(0) else None


def is_isomorphic(g1: MolecularGraph, g2: MolecularGraph) -> bool:
    return find_isomorphism(g1, g2) is not None
