"""Circular (Morgan/ECFP-style) fingerprints and Tanimoto similarity.

Hashing is 64-bit FNV-1a over little-endian integer tuples, so bit vectors
are reproducible across runs and platforms. Bits are not meant to match any
other toolkit's Morgan implementation.
"""

from __future__ import annotations

import struct
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from msgen.chem.elements import BOND_ORDER_X2, ELEMENT_INDEX
from msgen.chem.graph import MolecularGraph, implicit_hydrogens, is_valid, ring_atoms
from msgen.errors import DataError, InvalidGraph, WidthMismatch

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK
    return h


def hash_ints(values: Sequence[int]) -> int:
    return fnv1a64(struct.pack(f"<{len(values)}Q", *(v & _MASK for v in values)))


@dataclass(frozen=True, eq=False)
class Fingerprint:
    """Fixed-width bit vector; ``bits`` is a read-only boolean array."""

    bits: np.ndarray
    radius: int = 2

    def __post_init__(self) -> None:
        b = np.asarray(self.bits, dtype=bool).copy()
        w = b.shape[0] if b.ndim == 1 else 0
        if b.ndim != 1 or w == 0 or w & (w - 1):
            raise ValueError(f"fingerprint width must be a power of two, got {b.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def width(self) -> int:
        return self.bits.shape[0]

    @property
    def on_bits(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    def popcount(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Fingerprint):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash(self.bits.tobytes())

    def as_float(self) -> np.ndarray:
        return self.bits.astype(np.float64)

    def to_hex(self) -> str:
        """Hex of the integer ``sum(2**i for set bit i)``, most-significant nibble first."""
        value = 0
        for i in self.on_bits[::-1]:
            value |= 1 << int(i)
        return format(value, f"0{self.width // 4}x")

    @classmethod
    def from_hex(cls, text: str, radius: int = 2) -> Fingerprint:
        text = text.strip()
        width = 4 * len(text)
        value = int(text, 16)
        bits = np.array([(value >> i) & 1 for i in range(width)], dtype=bool)
        return cls(bits, radius)

    @classmethod
    def from_indices(cls, indices: Iterable[int], width: int, radius: int = 2) -> Fingerprint:
        bits = np.zeros(width, dtype=bool)
        bits[list(indices)] = True
        return cls(bits, radius)


def atom_invariants(g: MolecularGraph) -> list[tuple[int, ...]]:
    """(element, degree, implicit H, doubled total bond order, in-ring) per atom."""
    deg = g.degrees()
    hs = implicit_hydrogens(g)
    order_x2 = BOND_ORDER_X2[g.bonds.astype(np.int64)].sum(axis=1)
    ring = ring_atoms(g)
    return [
        (ELEMENT_INDEX[a], int(deg[i]), max(hs[i], 0), int(order_x2[i]), int(ring[i]))
        for i, a in enumerate(g.atoms)
    ]


def environments(g: MolecularGraph, radius: int) -> list[tuple[int, int, frozenset]]:
    """Deduplicated ``(radius, hash, bond set)`` environments, ECFP-style.

    Radius-0 environments (one per atom) are always kept. At larger radii an
    environment is dropped when its bond set was already seen at a smaller
    radius, or at the same radius with a smaller hash.
    """
    n = g.n
    nbrs = [g.neighbors(i) for i in range(n)]
    hashes = [hash_ints(inv) for inv in atom_invariants(g)]
    envs = [(0, h, frozenset()) for h in hashes]
    seen: set[frozenset] = set()
    atom_bonds = [frozenset() for _ in range(n)]
    for r in range(1, radius + 1):
        new_hashes = []
        new_bonds = []
        for i in range(n):
            pairs = sorted((int(g.bonds[i, j]), hashes[j]) for j in nbrs[i])
            flat = [r, hashes[i]]
            for bt, h in pairs:
                flat.extend((bt, h))
            new_hashes.append(hash_ints(flat))
            grown = set(atom_bonds[i])
            for j in nbrs[i]:
                grown.add((min(i, j), max(i, j)))
                grown.update(atom_bonds[j])
            new_bonds.append(frozenset(grown))
        candidates = sorted(
            ((tuple(sorted(new_bonds[i])), new_hashes[i], i) for i in range(n))
        )
        layer = []
        for bonds_key, h, i in candidates:
            bs = new_bonds[i]
            if not bs or bs in seen:
                continue
            seen.add(bs)
            layer.append((r, h, bs))
        envs.extend(layer)
        hashes, atom_bonds = new_hashes, new_bonds
    return envs


def morgan_fingerprint(g: MolecularGraph, width: int = 2048, radius: int = 2) -> Fingerprint:
    """Circular fingerprint of a valid graph.

    Raises:
        InvalidGraph: the graph fails :func:`is_valid`.
    """
    if width <= 0 or width & (width - 1):
        raise ValueError(f"width must be a power of two, got {width}")
    if radius < 0:
        raise ValueError("radius must be non-negative")
    v = is_valid(g)
    if not v:
        raise InvalidGraph(f"cannot fingerprint invalid graph: {v!r}")
    bits = np.zeros(width, dtype=bool)
    for _, h, _ in environments(g, radius):
        bits[h % width] = True
    return Fingerprint(bits, radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|a & b| / |a | b|, with two empty fingerprints scoring 1."""
    if a.width != b.width:
        raise WidthMismatch(f"{a.width} != {b.width}")
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a.bits & b.bits)) / union


def write_fingerprints(path: str | Path, records: Iterable[tuple[str, Fingerprint]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for fid, fp in records:
            fh.write(f"{fid}\t{fp.to_hex()}\n")


def read_fingerprints(path: str | Path, radius: int = 2) -> list[tuple[str, Fingerprint]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected '<id>\\t<hex>'")
            out.append((parts[0], Fingerprint.from_hex(parts[1], radius)))
    return out
