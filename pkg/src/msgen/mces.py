"""Maximum common edge subgraph (MCES) distance between molecular graphs.

Two bonds can be matched when they have the same bond type and the same
unordered pair of end elements. The matched bonds must be induced by one
injective atom mapping. The search runs as a maximum clique problem on the
product of oriented bond pairs, where two pairs are adjacent when their atom
assignments agree.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from msgen.chem.graph import MolecularGraph, is_valid
from msgen.errors import InvalidGraph


@dataclass(frozen=True)
class McesResult:
    distance: float
    matched_edges: int
    exact: bool


def _edge_category(g: MolecularGraph, i: int, j: int, t: int) -> tuple[str, str, int]:
    a, b = sorted((g.atoms[i], g.atoms[j]))
    return a, b, int(t)


def edge_histogram(g: MolecularGraph) -> Counter:
    return Counter(_edge_category(g, i, j, t) for i, j, t in g.edges())


def mces_lower_bound(g1: MolecularGraph, g2: MolecularGraph) -> float:
    """Sum over bond categories of ``|h1[c] - h2[c]|``; never exceeds the distance."""
    h1, h2 = edge_histogram(g1), edge_histogram(g2)
    return float(sum(abs(h1[c] - h2[c]) for c in set(h1) | set(h2)))


def _product_graph(g1: MolecularGraph, g2: MolecularGraph):
    """Vertices are (atom-pair assignments) ``((a, c), (b, d))``; adjacency as bitsets."""
    verts: list[tuple[tuple[int, int], tuple[int, int], int, int]] = []
    e1 = g1.edges()
    e2 = g2.edges()
    for x, (a, b, t) in enumerate(e1):
        cat = _edge_category(g1, a, b, t)
        for y, (c, d, s) in enumerate(e2):
            if _edge_category(g2, c, d, s) != cat:
                continue
            if g1.atoms[a] == g2.atoms[c] and g1.atoms[b] == g2.atoms[d]:
                verts.append(((a, c), (b, d), x, y))
            if g1.atoms[a] == g2.atoms[d] and g1.atoms[b] == g2.atoms[c]:
                verts.append(((a, d), (b, c), x, y))
    m = len(verts)
    adj = [0] * m
    for p in range(m):
        mp = dict((verts[p][0], verts[p][1]))
        inv_p = {v: k for k, v in mp.items()}
        for q in range(p + 1, m):
            if verts[p][2] == verts[q][2] or verts[p][3] == verts[q][3]:
                continue
            ok = True
            for u, v in (verts[q][0], verts[q][1]):
                if (u in mp and mp[u] != v) or (v in inv_p and inv_p[v] != u):
                    ok = False
                    break
            if ok:
                adj[p] |= 1 << q
                adj[q] |= 1 << p
    return verts, adj


def _popcount(x: int) -> int:
    return bin(x).count("1")


def max_clique_size(adj: list[int], lower: int = 0) -> int:
    """Maximum clique size by branch and bound with greedy colouring bounds."""
    best = lower

    def color_sort(cand: int) -> list[tuple[int, int]]:
        # returns (vertex, colour) in increasing colour order
        out = []
        color = 0
        uncolored = cand
        while uncolored:
            color += 1
            avail = uncolored
            while avail:
                v = (avail & -avail).bit_length() - 1
                avail &= ~(1 << v)
                avail &= ~adj[v]
                uncolored &= ~(1 << v)
                out.append((v, color))
        return out

    def expand(size: int, cand: int) -> None:
        nonlocal best
        order = color_sort(cand)
        for v, c in reversed(order):
            if size + c <= best:
                return
            new_cand = cand & adj[v]
            if new_cand:
                expand(size + 1, new_cand)
            elif size + 1 > best:
                best = size + 1
            cand &= ~(1 << v)

    if adj:
        expand(0, (1 << len(adj)) - 1)
    return best


def mces_distance(
    g1: MolecularGraph, g2: MolecularGraph, threshold: float | None = None
) -> McesResult:
    """``|E1| + |E2| - 2 * matched`` for the maximum common edge subgraph.

    With ``threshold`` set, a histogram lower bound at or above the threshold
    short-circuits the search and the bound is returned with ``exact=False``;
    ``matched_edges`` then holds the histogram upper bound on matched bonds.

    Raises:
        InvalidGraph: either graph fails :func:`is_valid`.
    """
    for g in (g1, g2):
        v = is_valid(g)
        if not v:
            raise InvalidGraph(f"MCES needs valid graphs: {v!r}")
    if threshold is not None and threshold < 0:
        raise ValueError("threshold must be non-negative")
    n_e1, n_e2 = g1.num_edges, g2.num_edges
    if threshold is not None:
        lb = mces_lower_bound(g1, g2)
        if lb >= threshold:
            h1, h2 = edge_histogram(g1), edge_histogram(g2)
            most = sum(min(h1[c], h2[c]) for c in h1)
            return McesResult(lb, most, False)
    verts, adj = _product_graph(g1, g2)
    matched = max_clique_size(adj)
    return McesResult(float(n_e1 + n_e2 - 2 * matched), matched, True)
