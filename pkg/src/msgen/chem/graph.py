"""Heavy-atom molecular graphs with typed bonds."""

from __future__ import annotations

from collections.abc import Iterable, Sequence

import numpy as np

from msgen.chem.elements import (
    BOND_ORDER_X2,
    ELEMENT_INDEX,
    MAX_VALENCE,
    NUM_BOND_TYPES,
    NUM_ELEMENTS,
    BondType,
    check_element,
)
from msgen.chem.formula import ChemicalFormula
from msgen.errors import InvalidGraph


class MolecularGraph:
    """Immutable heavy-atom graph.

    ``atoms`` is a tuple of element symbols and ``bonds`` a symmetric
    ``(n, n)`` int8 array of :class:`BondType` codes with a ``NONE`` diagonal.
    Equality is structural (same atom order, same matrix); use
    :func:`msgen.chem.is_isomorphic` for chemical identity.
    """

    __slots__ = ("atoms", "bonds", "_hash")

    def __init__(self, atoms: Sequence[str], bonds: np.ndarray | None = None):
        atoms = tuple(check_element(a) for a in atoms)
        n = len(atoms)
        if bonds is None:
            bonds = np.zeros((n, n), dtype=np.int8)
        b = np.array(bonds, dtype=np.int8, copy=True)
        if b.shape != (n, n):
            raise InvalidGraph(f"bond matrix shape {b.shape} does not match {n} atoms")
        if (b < 0).any() or (b >= NUM_BOND_TYPES).any():
            raise InvalidGraph("bond codes out of range")
        if not np.array_equal(b, b.T):
            raise InvalidGraph("bond matrix is not symmetric")
        if n and np.diagonal(b).any():
            raise InvalidGraph("self bonds are not allowed")
        b.setflags(write=False)
        self.atoms = atoms
        self.bonds = b
        self._hash = None

    @classmethod
    def from_edges(
        cls, atoms: Sequence[str], edges: Iterable[tuple[int, int, int]]
    ) -> MolecularGraph:
        n = len(atoms)
        b = np.zeros((n, n), dtype=np.int8)
        for i, j, t in edges:
            if i == j:
                raise InvalidGraph("self bonds are not allowed")
            b[i, j] = b[j, i] = int(t)
        return cls(atoms, b)

    @property
    def n(self) -> int:
        return len(self.atoms)

    def __len__(self) -> int:
        return len(self.atoms)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MolecularGraph):
            return NotImplemented
        return self.atoms == other.atoms and np.array_equal(self.bonds, other.bonds)

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.atoms, self.bonds.tobytes()))
        return self._hash

    def __repr__(self) -> str:
        return f"MolecularGraph(atoms={''.join(self.atoms)!r}, edges={len(self.edges())})"

    def edges(self) -> list[tuple[int, int, BondType]]:
        """Bonds as ``(i, j, type)`` with ``i < j``, in row-major order."""
        iu, ju = np.nonzero(np.triu(self.bonds, 1))
        return [(int(i), int(j), BondType(int(self.bonds[i, j]))) for i, j in zip(iu, ju)]

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(self.bonds)) // 2

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.bonds[i])]

    def degrees(self) -> np.ndarray:
        return np.count_nonzero(self.bonds, axis=1)

    def atom_codes(self) -> np.ndarray:
        return np.array([ELEMENT_INDEX[a] for a in self.atoms], dtype=np.int64)

    def one_hot_atoms(self) -> np.ndarray:
        x = np.zeros((self.n, NUM_ELEMENTS))
        x[np.arange(self.n), self.atom_codes()] = 1.0
        return x

    def one_hot_bonds(self) -> np.ndarray:
        return np.eye(NUM_BOND_TYPES)[self.bonds]

    def formula(self, hydrogens: int = 0) -> ChemicalFormula:
        counts: dict[str, int] = {}
        for a in self.atoms:
            counts[a] = counts.get(a, 0) + 1
        return ChemicalFormula(counts, hydrogens)

    def permute(self, perm: Sequence[int]) -> MolecularGraph:
        """Relabel so that new atom ``k`` is old atom ``perm[k]``."""
        p = np.asarray(perm, dtype=np.int64)
        if sorted(p.tolist()) != list(range(self.n)):
            raise ValueError("perm is not a permutation")
        return MolecularGraph([self.atoms[i] for i in p], self.bonds[np.ix_(p, p)])

    def with_bonds(self, bonds: np.ndarray) -> MolecularGraph:
        return MolecularGraph(self.atoms, bonds)

    def subgraph(self, nodes: Sequence[int]) -> MolecularGraph:
        idx = list(nodes)
        return MolecularGraph([self.atoms[i] for i in idx], self.bonds[np.ix_(idx, idx)])


def implicit_hydrogens(g: MolecularGraph) -> list[int]:
    """Per-atom ``max_valence - floor(total bond order)``; may be negative.

    Aromatic bonds count 1.5, so a carbon with three aromatic bonds has
    total order 4.5 and deficit 0.
    """
    total_x2 = BOND_ORDER_X2[g.bonds.astype(np.int64)].sum(axis=1)
    return [MAX_VALENCE[a] - int(t) // 2 for a, t in zip(g.atoms, total_x2)]


def connected_components(g: MolecularGraph) -> list[list[int]]:
    seen = [False] * g.n
    comps = []
    for s in range(g.n):
        if seen[s]:
            continue
        comp, stack = [], [s]
        seen[s] = True
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in g.neighbors(u):
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        comps.append(sorted(comp))
    return comps


def bridges(n: int, adjacency: Sequence[Sequence[int]]) -> set[tuple[int, int]]:
    """Bridge edges ``(i, j)`` with ``i < j`` of a simple undirected graph."""
    disc = [-1] * n
    low = [0] * n
    out: set[tuple[int, int]] = set()
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        # iterative DFS: (node, parent, neighbor iterator)
        stack = [(root, -1, iter(adjacency[root]))]
        while stack:
            u, parent, it = stack[-1]
            advanced = False
            for v in it:
                if v == parent:
                    continue
                if disc[v] == -1:
                    disc[v] = low[v] = timer
                    timer += 1
                    stack.append((v, u, iter(adjacency[v])))
                    advanced = True
                    break
                low[u] = min(low[u], disc[v])
            if not advanced:
                stack.pop()
                if stack:
                    p = stack[-1][0]
                    low[p] = min(low[p], low[u])
                    if low[u] > disc[p]:
                        out.add((min(p, u), max(p, u)))
    return out


def ring_bonds(g: MolecularGraph, bond_types: Iterable[int] | None = None) -> set[tuple[int, int]]:
    """Edges lying on a cycle, optionally restricted to the subgraph of given bond types."""
    allowed = None if bond_types is None else {int(t) for t in bond_types}
    adj: list[list[int]] = [[] for _ in range(g.n)]
    edges = []
    for i, j, t in g.edges():
        if allowed is None or int(t) in allowed:
            adj[i].append(j)
            adj[j].append(i)
            edges.append((i, j))
    br = bridges(g.n, adj)
    return {e for e in edges if e not in br}


def ring_atoms(g: MolecularGraph) -> list[bool]:
    flags = [False] * g.n
    for i, j in ring_bonds(g):
        flags[i] = flags[j] = True
    return flags


class Validity:
    """Outcome of :func:`is_valid`; truthy when the graph is valid."""

    __slots__ = ("ok", "reason", "where")

    def __init__(self, ok: bool, reason: str | None = None, where: tuple[int, ...] = ()):
        self.ok = ok
        self.reason = reason
        self.where = where

    def __bool__(self) -> bool:
        return self.ok

    def __repr__(self) -> str:
        if self.ok:
            return "Validity(ok)"
        return f"Validity({self.reason}{self.where})"


def is_valid(g: MolecularGraph) -> Validity:
    """Check connectivity, valence and that aromatic bonds sit on aromatic cycles.

    Returns a :class:`Validity` with reason ``"Disconnected"``,
    ``"ValenceExceeded"`` (atom index) or ``"DanglingAromatic"`` (bond ends).
    """
    if g.n == 0:
        return Validity(False, "Disconnected")
    if len(connected_components(g)) > 1:
        return Validity(False, "Disconnected")
    for i, h in enumerate(implicit_hydrogens(g)):
        if h < 0:
            return Validity(False, "ValenceExceeded", (i,))
    arom = [(i, j) for i, j, t in g.edges() if t == BondType.AROMATIC]
    if arom:
        on_cycle = ring_bonds(g, [BondType.AROMATIC])
        for e in arom:
            if e not in on_cycle:
                return Validity(False, "DanglingAromatic", e)
    return Validity(True)
