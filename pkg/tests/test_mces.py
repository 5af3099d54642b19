import itertools

import numpy as np
import pytest

from conftest import mol
from mces_oracle import brute_distance, brute_matched_edges
from msgen.chem import MolecularGraph, is_isomorphic, parse_smiles
from msgen.errors import InvalidGraph
from msgen.mces import max_clique_size, mces_distance, mces_lower_bound

SMALL_CORPUS = (
    "CC(C)CC(N)C(=O)O CCC(C)C(N)C(=O)O CCCCC(N)C(=O)O CCO CCCO COC c1ccccc1 Oc1ccccc1 Cc1ccccc1 "
    "c1ccncc1 CC(=O)O CC#N OCC(O)CO CCOC(C)=O CC(C)(C)O CCCCO C1CCCCC1 C1CCCCC1O NCCO NCC(=O)O "
    "CSCC(N)C(=O)O ClCCCl FC(F)(F)C O=C=O C=CC=CC=C C1=CC=CC=C1 OC(=O)CCC(=O)O CC(O)C(=O)O c1ccsc1 C1CCNC1"
).split()

# leucine vs isoleucine, computed once with the exhaustive oracle in mces_oracle.py
LEU_ILE_MATCHED = 7
LEU_ILE_DISTANCE = 2.0


@pytest.fixture(scope="module")
def small():
    gs = [parse_smiles(s) for s in SMALL_CORPUS]
    assert len(gs) == 30 and max(g.num_edges for g in gs) <= 8
    return gs


def test_leucine_isoleucine_frozen():
    leu, ile = mol("leucine"), mol("isoleucine")
    assert brute_matched_edges(leu, ile) == LEU_ILE_MATCHED
    r = mces_distance(leu, ile)
    assert r.exact and r.matched_edges == LEU_ILE_MATCHED and r.distance == LEU_ILE_DISTANCE
    assert mces_lower_bound(leu, ile) <= LEU_ILE_DISTANCE


def test_identity():
    g = mol("leucine")
    r = mces_distance(g, g)
    assert r.distance == 0 and r.matched_edges == g.num_edges and r.exact


def test_type_disjoint():
    a = parse_smiles("CCCCCC")
    b = mol("benzene")
    r = mces_distance(a, b)
    assert r.matched_edges == 0 and r.distance == a.num_edges + b.num_edges
    assert mces_lower_bound(a, b) == a.num_edges + b.num_edges


def test_oracle_equivalence_all_pairs(small):
    for a, b in itertools.combinations_with_replacement(range(len(small)), 2):
        g1, g2 = small[a], small[b]
        assert mces_distance(g1, g2).distance == brute_distance(g1, g2), (SMALL_CORPUS[a], SMALL_CORPUS[b])


def test_symmetry_and_bound(small):
    for g1, g2 in itertools.combinations(small, 2):
        d12, d21 = mces_distance(g1, g2), mces_distance(g2, g1)
        assert d12.distance == d21.distance
        assert d12.distance == g1.num_edges + g2.num_edges - 2 * d12.matched_edges
        assert mces_lower_bound(g1, g2) <= d12.distance


def test_threshold_short_circuit():
    a, b = parse_smiles("CCCCCC"), mol("benzene")
    r = mces_distance(a, b, threshold=3)
    assert not r.exact and r.distance == mces_lower_bound(a, b)
    r = mces_distance(mol("leucine"), mol("isoleucine"), threshold=100)
    assert r.exact and r.distance == LEU_ILE_DISTANCE


def test_zero_distance_iff_isomorphic(corpus):
    rng = np.random.default_rng(3)
    pool = [g for _, g in corpus if g.n <= 14]
    checked = 0
    for _ in range(200):
        g1 = pool[rng.integers(len(pool))]
        g2 = g1.permute(rng.permutation(g1.n)) if rng.random() < 0.5 else pool[rng.integers(len(pool))]
        if g1.num_edges != g2.num_edges:
            continue
        zero = mces_distance(g1, g2).distance == 0
        assert zero == is_isomorphic(g1, g2)
        checked += 1
    assert checked > 80


def test_clique_on_known_graphs():
    # adjacency bitsets: a 4-clique plus a pendant vertex
    n = 5
    adj = [0] * n
    for i, j in itertools.combinations(range(4), 2):
        adj[i] |= 1 << j
        adj[j] |= 1 << i
    adj[3] |= 1 << 4
    adj[4] |= 1 << 3
    assert max_clique_size(adj) == 4
    assert max_clique_size([0, 0, 0]) == 1


def test_invalid_rejected():
    with pytest.raises(InvalidGraph):
        mces_distance(MolecularGraph(["C", "C"]), mol("ethanol"))
