"""Canonical atom ranking and canonical keys.

Ranks come from iterated neighbourhood refinement; remaining ties are broken
by individualizing each member of the first ambiguous class in turn and
keeping the labelling whose serialized adjacency is lexicographically
smallest. The key is the DFS SMILES written in that order.
"""

from __future__ import annotations

import numpy as np

from msgen.chem.graph import MolecularGraph

CanonicalKey = bytes


def _densify(keys: list) -> list[int]:
    uniq = {k: r for r, k in enumerate(sorted(set(keys)))}
    return [uniq[k] for k in keys]


def initial_colors(g: MolecularGraph) -> list[int]:
    codes = g.atom_codes()
    keys = []
    for i in range(g.n):
        row = g.bonds[i]
        bt = tuple(sorted(int(t) for t in row[row > 0]))
        keys.append((int(codes[i]), len(bt), bt))
    return _densify(keys)


def refine(g: MolecularGraph, colors: list[int], nbrs: list[list[int]] | None = None) -> list[int]:
    """Refine a colouring until neighbour signatures stop splitting classes."""
    if nbrs is None:
        nbrs = [g.neighbors(i) for i in range(g.n)]
    bonds = g.bonds
    colors = list(colors)
    ncls = len(set(colors))
    while True:
        sigs = [
            (colors[i], tuple(sorted((int(bonds[i, j]), colors[j]) for j in nbrs[i])))
            for i in range(g.n)
        ]
        new = _densify(sigs)
        k = len(set(new))
        colors = new
        if k == ncls:
            return colors
        ncls = k


def _serialize(g: MolecularGraph, colors: list[int], codes: np.ndarray) -> tuple:
    order = np.argsort(colors)
    atoms = tuple(int(codes[i]) for i in order)
    iu, ju = np.nonzero(np.triu(g.bonds, 1))
    edges = tuple(sorted(
        (min(colors[i], colors[j]), max(colors[i], colors[j]), int(g.bonds[i, j]))
        for i, j in zip(iu, ju)
    ))
    return atoms, edges


def canonical_ranks(g: MolecularGraph) -> list[int]:
    """A canonical rank in ``0..n-1`` for every atom (isomorphism-invariant labelling)."""
    n = g.n
    if n == 0:
        return []
    nbrs = [g.neighbors(i) for i in range(n)]
    codes = g.atom_codes()
    best: list = [None, None]  # serialization, colors

    def search(colors: list[int]) -> None:
        colors = refine(g, colors, nbrs)
        counts: dict[int, int] = {}
        for c in colors:
            counts[c] = counts.get(c, 0) + 1
        ambiguous = [c for c, k in counts.items() if k > 1]
        if not ambiguous:
            ser = _serialize(g, colors, codes)
            if best[0] is None or ser < best[0]:
                best[0], best[1] = ser, colors
            return
        target = min(ambiguous)
        for v in range(n):
            if colors[v] != target:
                continue
            split = [(c, 0 if (c != target or i == v) else 1) for i, c in enumerate(colors)]
            search(_densify(split))

    search(initial_colors(g))
    return list(best[1])


def canonical_order(g: MolecularGraph) -> list[int]:
    """Atom indices sorted by canonical rank."""
    ranks = canonical_ranks(g)
    return sorted(range(g.n), key=lambda i: ranks[i])


def canonical_key(g: MolecularGraph) -> CanonicalKey:
    """Byte key equal for two graphs exactly when they are isomorphic."""
    from msgen.chem.smiles import dfs_smiles

    return dfs_smiles(g, canonical_ranks(g)).encode("utf-8")
