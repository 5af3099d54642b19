"""Molecular graphs, formulae, SMILES and graph identity."""

from msgen.chem.canon import CanonicalKey, canonical_key, canonical_order, canonical_ranks
from msgen.chem.elements import (
    BOND_ORDER,
    ELEMENTS,
    MAX_VALENCE,
    NUM_BOND_TYPES,
    NUM_ELEMENTS,
    BondType,
)
from msgen.chem.formula import ChemicalFormula, parse_formula
from msgen.chem.graph import (
    MolecularGraph,
    Validity,
    connected_components,
    implicit_hydrogens,
    is_valid,
    ring_atoms,
    ring_bonds,
)
from msgen.chem.io import read_molecules, write_molecules
from msgen.chem.isomorphism import find_isomorphism, is_isomorphic
from msgen.chem.smiles import dfs_smiles, parse_smiles, write_smiles

__all__ = [
    "BOND_ORDER", "ELEMENTS", "MAX_VALENCE", "NUM_BOND_TYPES", "NUM_ELEMENTS",
    "BondType", "CanonicalKey", "ChemicalFormula", "MolecularGraph", "Validity",
    "canonical_key", "canonical_order", "canonical_ranks", "connected_components",
    "dfs_smiles", "find_isomorphism", "implicit_hydrogens", "is_isomorphic", "is_valid",
    "parse_formula", "parse_smiles", "read_molecules", "ring_atoms", "ring_bonds",
    "write_molecules", "write_smiles",
]
