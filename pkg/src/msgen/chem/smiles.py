"""A SMILES reader and writer for the heavy-atom graph model.

Only the subset needed for the supported elements is handled: organic and
bracket atoms, aromatic lowercase atoms, ``- = # :`` bonds, branches and
ring closures (including ``%nn``). Charges, isotopes, chirality, atom classes
and ``/ \\`` bond directions are dropped with a logged warning; explicit
hydrogens are removed from the graph.
"""

from __future__ import annotations

import logging
import re

import numpy as np

from msgen.chem.elements import ELEMENT_INDEX, BondType
from msgen.chem.graph import MolecularGraph, implicit_hydrogens, is_valid, ring_bonds
from msgen.errors import InvalidGraph, ParseError, UnknownElement, UnsupportedFeature

log = logging.getLogger(__name__)

_ORGANIC = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
_AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
_BRACKET = re.compile(
    r"\[(?P<iso>\d+)?"
    r"(?P<sym>se|as|te|[bcnops]|[A-Z][a-z]?|\*)"
    r"(?P<chiral>@(?:@|TH[12]|AL[12]|SP[123]|TB\d{1,2}|OH\d{1,2})?)?"
    r"(?P<h>H\d?)?"
    r"(?P<charge>[+-](?:\d+|[+-]*))?"
    r"(?P<cls>:\d+)?\]"
)
_BOND_SYMBOLS = {"-": BondType.SINGLE, "=": BondType.DOUBLE, "#": BondType.TRIPLE,
                 ":": BondType.AROMATIC, "/": BondType.SINGLE, "\\": BondType.SINGLE}
_WRITE_BOND = {BondType.SINGLE: "-", BondType.DOUBLE: "=", BondType.TRIPLE: "#",
               BondType.AROMATIC: ":"}
_LOWERCASE_OK = {"B", "C", "N", "O", "P", "S", "Se"}
_BARE_OK = set(_ORGANIC)


def _resolve_symbol(sym: str) -> tuple[str, bool]:
    aromatic = sym[0].islower()
    element = sym.capitalize() if aromatic else sym
    if element == "H":
        return element, aromatic
    if element not in ELEMENT_INDEX:
        raise UnknownElement(f"element {sym!r} is not supported")
    return element, aromatic


def parse_smiles(text: str) -> MolecularGraph:
    """Parse SMILES into a heavy-atom :class:`MolecularGraph`.

    Unmarked bonds between two aromatic atoms become aromatic when they lie
    on a ring and single otherwise (as in ``c1ccccc1c1ccccc1``).

    Raises:
        ParseError: unbalanced branches, unclosed rings, stray characters.
        UnsupportedFeature: wildcard atoms and quadruple bonds.
        UnknownElement: atoms outside the supported set.
    """
    s = text.strip()
    if not s:
        raise ParseError("empty SMILES")
    elements: list[str] = []
    aromatic: list[bool] = []
    bonds: dict[tuple[int, int], tuple[BondType, bool]] = {}
    rings: dict[int, tuple[int, str | None]] = {}
    branch_stack: list[int] = []
    prev: int | None = None
    pending: str | None = None
    stripped: set[str] = set()
    i = 0

    def add_bond(a: int, b: int, symbol: str | None) -> None:
        if a == b:
            raise ParseError(f"atom {a} bonded to itself in {text!r}")
        key = (min(a, b), max(a, b))
        if key in bonds:
            raise ParseError(f"duplicate bond {key} in {text!r}")
        if symbol is None:
            implicit = aromatic[a] and aromatic[b]
            bonds[key] = (BondType.AROMATIC if implicit else BondType.SINGLE, implicit)
        else:
            if symbol in "/\\":
                stripped.add("bond direction")
            bonds[key] = (_BOND_SYMBOLS[symbol], False)

    def add_atom(sym: str) -> None:
        nonlocal prev, pending
        element, arom = _resolve_symbol(sym)
        elements.append(element)
        aromatic.append(arom)
        idx = len(elements) - 1
        if prev is not None:
            add_bond(prev, idx, pending)
        elif pending is not None:
            raise ParseError(f"bond symbol without a preceding atom in {text!r}")
        pending = None
        prev = idx

    while i < len(s):
        ch = s[i]
        if ch == "[":
            m = _BRACKET.match(s, i)
            if m is None:
                raise ParseError(f"malformed bracket atom at {i} in {text!r}")
            if m.group("sym") == "*":
                raise UnsupportedFeature("wildcard atoms are not supported")
            for part, label in (("iso", "isotope"), ("chiral", "chirality"),
                                ("charge", "charge"), ("cls", "atom class")):
                if m.group(part):
                    stripped.add(label)
            add_atom(m.group("sym"))
            i = m.end()
        elif ch == "*":
            raise UnsupportedFeature("wildcard atoms are not supported")
        elif s.startswith(("Cl", "Br"), i):
            add_atom(s[i:i + 2])
            i += 2
        elif ch in "BCNOPSFI" or ch in _AROMATIC_ORGANIC:
            add_atom(ch)
            i += 1
        elif ch in _BOND_SYMBOLS:
            if pending is not None:
                raise ParseError(f"two bond symbols in a row at {i} in {text!r}")
            pending = ch
            i += 1
        elif ch == "$":
            raise UnsupportedFeature("quadruple bonds are not supported")
        elif ch == "(":
            if prev is None or pending is not None:
                raise ParseError(f"branch without an anchor atom at {i} in {text!r}")
            if i + 1 < len(s) and s[i + 1] == ")":
                raise ParseError(f"empty branch at {i} in {text!r}")
            branch_stack.append(prev)
            i += 1
        elif ch == ")":
            if not branch_stack or pending is not None:
                raise ParseError(f"unbalanced ')' at {i} in {text!r}")
            prev = branch_stack.pop()
            i += 1
        elif ch == "." :
            if pending is not None or prev is None:
                raise ParseError(f"misplaced '.' at {i} in {text!r}")
            prev = None
            i += 1
        elif ch.isdigit() or ch == "%":
            if ch == "%":
                if not s[i + 1:i + 3].isdigit() or len(s[i + 1:i + 3]) != 2:
                    raise ParseError(f"bad %nn ring label at {i} in {text!r}")
                label, i = int(s[i + 1:i + 3]), i + 3
            else:
                label, i = int(ch), i + 1
            if prev is None:
                raise ParseError(f"ring label without an atom in {text!r}")
            if label in rings:
                other, sym = rings.pop(label)
                if sym is not None and pending is not None and sym != pending:
                    raise ParseError(f"conflicting ring bond symbols for label {label}")
                add_bond(other, prev, pending if pending is not None else sym)
            else:
                rings[label] = (prev, pending)
            pending = None
        else:
            raise ParseError(f"unexpected character {ch!r} at {i} in {text!r}")

    if branch_stack:
        raise ParseError(f"unclosed branch in {text!r}")
    if rings:
        raise ParseError(f"unclosed ring label(s) {sorted(rings)} in {text!r}")
    if pending is not None:
        raise ParseError(f"dangling bond symbol in {text!r}")
    if stripped:
        log.warning("stripped %s from %s", ", ".join(sorted(stripped)), text)

    heavy = [k for k, e in enumerate(elements) if e != "H"]
    if not heavy:
        raise ParseError(f"no heavy atoms in {text!r}")
    remap = {old: new for new, old in enumerate(heavy)}
    n = len(heavy)
    b = np.zeros((n, n), dtype=np.int8)
    implicit_arom = []
    for (a, c), (t, implicit) in bonds.items():
        if a in remap and c in remap:
            x, y = remap[a], remap[c]
            b[x, y] = b[y, x] = int(t)
            if implicit:
                implicit_arom.append((min(x, y), max(x, y)))
    g = MolecularGraph([elements[k] for k in heavy], b)
    if implicit_arom:
        cyclic = ring_bonds(g)
        demote = [e for e in implicit_arom if e not in cyclic]
        if demote:
            b = g.bonds.copy()
            for x, y in demote:
                b[x, y] = b[y, x] = int(BondType.SINGLE)
            g = MolecularGraph(g.atoms, b)
    return g


def _atom_text(element: str, lower: bool, hcount: int) -> str:
    if lower:
        return "[se]" if element == "Se" else element.lower()
    if element in _BARE_OK:
        return element
    if hcount > 0:
        return f"[{element}H{hcount if hcount > 1 else ''}]"
    return f"[{element}]"


def dfs_smiles(g: MolecularGraph, rank: list[int] | np.ndarray) -> str:
    """Serialize ``g`` by depth-first traversal, preferring lower-ranked atoms.

    ``rank`` gives each atom a priority; the lowest-ranked atom of each
    component is the root and neighbours are visited in rank order, so a
    canonical ranking yields a canonical string. No validity check is done:
    disconnected graphs are written with ``.`` and aromatic bonds outside
    rings with explicit ``:``.
    """
    n = g.n
    rank = list(rank)
    arom = [False] * n
    for i, j, t in g.edges():
        if t == BondType.AROMATIC:
            arom[i] = arom[j] = True
    lower = [arom[i] and g.atoms[i] in _LOWERCASE_OK for i in range(n)]
    hs = implicit_hydrogens(g)
    nbrs = [sorted(g.neighbors(i), key=lambda j: rank[j]) for i in range(n)]
    cyclic = ring_bonds(g)

    # first pass: DFS order, tree children, ring closures
    order_index = [-1] * n
    children: list[list[int]] = [[] for _ in range(n)]
    ring_open: list[list[int]] = [[] for _ in range(n)]   # partner atoms closing later
    ring_close: list[list[int]] = [[] for _ in range(n)]  # partner atoms opened earlier
    roots = []
    counter = 0
    for start in sorted(range(n), key=lambda i: rank[i]):
        if order_index[start] != -1:
            continue
        roots.append(start)
        order_index[start] = counter
        counter += 1
        stack = [(start, -1, iter(nbrs[start]))]
        while stack:
            u, parent, it = stack[-1]
            for v in it:
                if v == parent:
                    continue
                if order_index[v] == -1:
                    order_index[v] = counter
                    counter += 1
                    children[u].append(v)
                    stack.append((v, u, iter(nbrs[v])))
                    break
                if order_index[v] < order_index[u] and u not in ring_open[v]:
                    ring_open[v].append(u)
                    ring_close[u].append(v)
            else:
                stack.pop()

    def bond_text(a: int, c: int) -> str:
        t = BondType(int(g.bonds[a, c]))
        both_lower = lower[a] and lower[c]
        if t == BondType.SINGLE:
            return "-" if both_lower else ""
        if t == BondType.AROMATIC:
            return "" if both_lower and (min(a, c), max(a, c)) in cyclic else ":"
        return _WRITE_BOND[t]

    out: list[str] = []
    free_digits: list[int] = []
    next_digit = 1
    digit_of: dict[tuple[int, int], int] = {}

    def ring_label(d: int) -> str:
        return str(d) if d < 10 else f"%{d:02d}"

    def emit(u: int) -> None:
        nonlocal next_digit
        out.append(_atom_text(g.atoms[u], lower[u], hs[u]))
        for v in sorted(ring_close[u], key=lambda v: order_index[v]):
            d = digit_of.pop((v, u))
            out.append(ring_label(d))
            free_digits.append(d)
            free_digits.sort()
        for v in sorted(ring_open[u], key=lambda v: order_index[v]):
            if free_digits:
                d = free_digits.pop(0)
            else:
                d, next_digit = next_digit, next_digit + 1
            digit_of[(u, v)] = d
            out.append(bond_text(u, v) + ring_label(d))
        kids = children[u]
        for k, v in enumerate(kids):
            last = k == len(kids) - 1
            if not last:
                out.append("(")
            out.append(bond_text(u, v))
            emit(v)
            if not last:
                out.append(")")

    pieces = []
    for r in roots:
        out = []
        emit(r)
        pieces.append("".join(out))
    return ".".join(pieces)


def write_smiles(g: MolecularGraph, check: bool = True) -> str:
    """Canonical SMILES for ``g``.

    Raises:
        InvalidGraph: if ``check`` and the graph fails :func:`is_valid`.
    """
    from msgen.chem.canon import canonical_ranks

    if check:
        v = is_valid(g)
        if not v:
            raise InvalidGraph(f"cannot write invalid graph: {v!r}")
    if g.n == 0:
        return ""
    return dfs_smiles(g, canonical_ranks(g))
