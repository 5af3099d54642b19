"""Molecule corpus files: one ``<id>\\t<SMILES>`` record per line, ``#`` comments."""

from __future__ import annotations

import logging
from collections.abc import Iterable
from pathlib import Path

from msgen.chem.graph import MolecularGraph, is_valid
from msgen.chem.smiles import parse_smiles, write_smiles
from msgen.errors import ChemError, DataError

log = logging.getLogger(__name__)


def read_molecule_records(path: str | Path) -> list[tuple[str, str]]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise DataError(f"{path}:{lineno}: expected '<id>\\t<SMILES>'")
            records.append((parts[0], parts[1].strip()))
    return records


def read_molecules(
    path: str | Path, require_valid: bool = True
) -> list[tuple[str, MolecularGraph]]:
    """Load a corpus, dropping records that fail to parse (or fail validity).

    The number of dropped records is logged at WARNING level.
    """
    out = []
    dropped = 0
    for mid, smi in read_molecule_records(path):
        try:
            g = parse_smiles(smi)
        except ChemError as exc:
            log.debug("dropping %s (%s): %s", mid, smi, exc)
            dropped += 1
            continue
        if require_valid and not is_valid(g):
            dropped += 1
            continue
        out.append((mid, g))
    if dropped:
        log.warning("%s: dropped %d of %d molecules", path, dropped, dropped + len(out))
    return out


def write_molecules(path: str | Path, records: Iterable[tuple[str, MolecularGraph]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for mid, g in records:
            fh.write(f"{mid}\t{write_smiles(g, check=False)}\n")
