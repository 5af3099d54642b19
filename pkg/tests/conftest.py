import logging
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from msgen.chem import parse_smiles
from msgen.chem.io import read_molecule_records

DATA = Path(__file__).parent / "data"

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

SMALL = {
    "ethanol": "CCO",
    "propanol": "CCCO",
    "dme": "COC",
    "benzene": "c1ccccc1",
    "leucine": "CC(C)CC(N)C(=O)O",
    "isoleucine": "CCC(C)C(N)C(=O)O",
    "phenol": "Oc1ccccc1",
    "acetic": "CC(=O)O",
    "pyridine": "c1ccncc1",
    "acetonitrile": "CC#N",
}


@pytest.fixture(scope="session")
def corpus_records():
    logging.getLogger("msgen").setLevel(logging.ERROR)
    return read_molecule_records(DATA / "corpus1000.tsv")


@pytest.fixture(scope="session")
def corpus(corpus_records):
    return [(mid, parse_smiles(s)) for mid, s in corpus_records]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def mol(name_or_smiles: str):
    return parse_smiles(SMALL.get(name_or_smiles, name_or_smiles))


@pytest.fixture
def criterion(request):
    """Record an acceptance criterion's verdict; the summary hook prints one line per criterion."""

    def record(name: str, ok: bool, detail: str) -> None:
        request.node.user_properties.append(("criterion", (name, detail)))
        assert ok, f"{name}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" not in rep.nodeid or getattr(rep, "when", "call") != "call" and outcome != "error":
                continue
            props = dict(rep.user_properties)
            name, detail = props.get("criterion", (rep.nodeid.split("::")[-1], "did not complete"))
            lines.append((rep.location[1], f"{'PASS' if rep.passed else 'FAIL'}  {name}: {detail}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
