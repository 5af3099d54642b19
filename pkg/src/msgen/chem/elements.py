"""Supported elements and bond types.

The element ordering fixes the one-hot node dimension used by the models,
and the bond ordering fixes the k=5 edge categories.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

from msgen.errors import UnknownElement

ELEMENTS: tuple[str, ...] = ("C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "B", "Si", "Se")
ELEMENT_INDEX: dict[str, int] = {s: i for i, s in enumerate(ELEMENTS)}
NUM_ELEMENTS = len(ELEMENTS)

MAX_VALENCE: dict[str, int] = {
    "C": 4, "N": 3, "O": 2, "S": 6, "P": 5,
    "F": 1, "Cl": 1, "Br": 1, "I": 1,
    "B": 3, "Si": 4, "Se": 6,
}

# monoisotopic masses, used only for synthetic spectra and m/z bookkeeping
MONOISOTOPIC_MASS: dict[str, float] = {
    "H": 1.00782503207, "C": 12.0, "N": 14.0030740048, "O": 15.99491461956,
    "S": 31.97207100, "P": 30.97376163, "F": 18.99840322, "Cl": 34.96885268,
    "Br": 78.9183371, "I": 126.904473, "B": 11.0093054, "Si": 27.9769265325,
    "Se": 79.9165213,
}
PROTON_MASS = 1.00727646688


class BondType(IntEnum):
    NONE = 0
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def order(self) -> float:
        return BOND_ORDER[self]


NUM_BOND_TYPES = len(BondType)
BOND_ORDER: tuple[float, ...] = (0.0, 1.0, 2.0, 3.0, 1.5)
# bond orders doubled, so valence sums stay in integers
BOND_ORDER_X2 = np.array([0, 2, 4, 6, 3], dtype=np.int64)


def check_element(symbol: str) -> str:
    if symbol not in ELEMENT_INDEX:
        raise UnknownElement(f"element {symbol!r} is not supported")
    return symbol
