"""Chemical formulae over the supported heavy atoms plus a separate hydrogen count."""

from __future__ import annotations

import re
from collections.abc import Mapping
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from msgen.chem.elements import ELEMENTS, ELEMENT_INDEX, MONOISOTOPIC_MASS, NUM_ELEMENTS
from msgen.errors import MalformedFormula, NegativeLoss, UnknownElement

_TOKEN = re.compile(r"([A-Z][a-z]?)(\d*)")


@dataclass(frozen=True)
class ChemicalFormula:
    """Heavy-atom counts keyed by element symbol, hydrogens kept apart.

    Zero counts are dropped, so two formulae compare equal whenever they
    describe the same composition.
    """

    counts: Mapping[str, int]
    hydrogens: int = 0
    _key: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        cleaned = {}
        for sym, c in self.counts.items():
            if sym not in ELEMENT_INDEX:
                raise UnknownElement(f"element {sym!r} is not supported")
            if c < 0:
                raise MalformedFormula(f"negative count for {sym}")
            if c:
                cleaned[sym] = int(c)
        if self.hydrogens < 0:
            raise MalformedFormula("negative hydrogen count")
        ordered = {s: cleaned[s] for s in ELEMENTS if s in cleaned}
        object.__setattr__(self, "counts", MappingProxyType(ordered))
        object.__setattr__(self, "hydrogens", int(self.hydrogens))
        object.__setattr__(self, "_key", (tuple(ordered.items()), int(self.hydrogens)))

    def __reduce__(self):
        return (ChemicalFormula, (dict(self.counts), self.hydrogens))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ChemicalFormula):
            return NotImplemented
        return self._key == other._key

    def __hash__(self) -> int:
        return hash(self._key)

    @property
    def heavy_atoms(self) -> int:
        return sum(self.counts.values())

    def atoms(self) -> list[str]:
        """Heavy atoms sorted by element symbol, the node order used for sampling."""
        return [s for s in sorted(self.counts) for _ in range(self.counts[s])]

    def vector(self, with_hydrogens: bool = True) -> np.ndarray:
        v = np.zeros(NUM_ELEMENTS + int(with_hydrogens))
        for sym, c in self.counts.items():
            v[ELEMENT_INDEX[sym]] = c
        if with_hydrogens:
            v[-1] = self.hydrogens
        return v

    def mass(self) -> float:
        m = sum(MONOISOTOPIC_MASS[s] * c for s, c in self.counts.items())
        return m + MONOISOTOPIC_MASS["H"] * self.hydrogens

    def contains(self, other: ChemicalFormula) -> bool:
        return other.hydrogens <= self.hydrogens and all(
            self.counts.get(s, 0) >= c for s, c in other.counts.items()
        )

    def __sub__(self, other: ChemicalFormula) -> ChemicalFormula:
        if not self.contains(other):
            raise NegativeLoss(f"{other} is not a subformula of {self}")
        counts = {s: self.counts.get(s, 0) - other.counts.get(s, 0) for s in self.counts}
        return ChemicalFormula(counts, self.hydrogens - other.hydrogens)

    def __add__(self, other: ChemicalFormula) -> ChemicalFormula:
        counts = dict(self.counts)
        for s, c in other.counts.items():
            counts[s] = counts.get(s, 0) + c
        return ChemicalFormula(counts, self.hydrogens + other.hydrogens)

    def __str__(self) -> str:
        # Hill order: C, H, then the rest alphabetically
        parts = []

        def emit(sym: str, c: int) -> None:
            if c:
                parts.append(sym if c == 1 else f"{sym}{c}")

        if "C" in self.counts:
            emit("C", self.counts["C"])
            emit("H", self.hydrogens)
            rest = sorted(s for s in self.counts if s != "C")
        else:
            rest = sorted(list(self.counts) + (["H"] if self.hydrogens else []))
        for sym in rest:
            emit(sym, self.hydrogens if sym == "H" else self.counts[sym])
        return "".join(parts)


def parse_formula(text: str) -> ChemicalFormula:
    """Parse a formula string such as ``"C6H12O6"``.

    Symbols may repeat and appear in any order; counts default to 1.

    Raises:
        MalformedFormula: empty input, stray characters or dangling digits.
        UnknownElement: a symbol outside the supported set.
    """
    text = text.strip()
    if not text:
        raise MalformedFormula("empty formula")
    pos = 0
    counts: dict[str, int] = {}
    hydrogens = 0
    for m in _TOKEN.finditer(text):
        if m.start() != pos:
            raise MalformedFormula(f"unexpected {text[pos:m.start()]!r} in {text!r}")
        pos = m.end()
        sym, num = m.group(1), m.group(2)
        n = int(num) if num else 1
        if sym == "H":
            hydrogens += n
        elif sym in ELEMENT_INDEX:
            counts[sym] = counts.get(sym, 0) + n
        else:
            raise UnknownElement(f"element {sym!r} is not supported")
    if pos != len(text):
        raise MalformedFormula(f"unexpected {text[pos:]!r} in {text!r}")
    if not any(counts.values()):
        raise MalformedFormula(f"{text!r} has no heavy atoms")
    return ChemicalFormula(counts, hydrogens)
