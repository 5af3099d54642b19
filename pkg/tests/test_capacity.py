"""Capacity of the denoiser on the 20-molecule overfit set.

The target "2000 steps bring the mean training loss below 5% of its initial
value" sits under the loss floor of any permutation-equivariant denoiser
(see ``loss_floor``). The training run is kept as an expected failure.
"""

import math

import numpy as np
import pytest

from loss_floor import bayes_loss, loss_floor, relabeling_count
from msgen.chem import MolecularGraph, parse_smiles
from msgen.denoiser import GraphTransformer, TrainItem, loss_and_grad
from msgen.diffusion import NoiseSchedule, TransitionModel, make_transition
from msgen.fingerprint import morgan_fingerprint
from test_acceptance import OVERFIT_MODEL, OVERFIT_SET, OVERFIT_T, train_overfit_decoder

CAPACITY_STEPS = 2000
CAPACITY_RATIO = 0.05


def pure_noise_model(m) -> TransitionModel:
    sched = NoiseSchedule(1, 0.0, np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    return TransitionModel(np.asarray(m, dtype=float), sched)


def test_floor_zero_without_same_element_atoms():
    tm = pure_noise_model([0.5, 0.5, 0, 0, 0])
    for smi in ("CN", "CNO", "CC"):
        assert bayes_loss(parse_smiles(smi), 1, tm, np.random.default_rng(0), draws=5) == pytest.approx(0.0, abs=1e-12)


def test_floor_propane_pure_noise():
    # three labelings of propane are equally likely; two of them bond a given pair
    tm = pure_noise_model([0.5, 0.5, 0, 0, 0])
    g = MolecularGraph.from_edges(["C"] * 3, [(0, 1, 1), (1, 2, 1)])
    expect = 2 * math.log(1.5) + math.log(3)
    assert bayes_loss(g, 1, tm, np.random.default_rng(0), draws=5) == pytest.approx(expect, abs=1e-12)


def test_floor_vanishes_without_noise():
    g = parse_smiles("CC(C)CC(N)C(=O)O")
    sched = NoiseSchedule(1, 0.0, np.array([1.0, 1.0]), np.array([0.0, 0.0]))
    tm = TransitionModel(np.array([0.6, 0.4, 0, 0, 0]), sched)
    assert bayes_loss(g, 1, tm, np.random.default_rng(0)) == pytest.approx(0.0, abs=1e-12)


def _overfit_data():
    graphs = [parse_smiles(s) for s in OVERFIT_SET]
    fps = [morgan_fingerprint(g).as_float() for g in graphs]
    return graphs, fps


def test_capacity_target_below_loss_floor():
    graphs, fps = _overfit_data()
    tm = make_transition("marginal", NoiseSchedule.cosine(OVERFIT_T), graphs)
    model = GraphTransformer.create(OVERFIT_MODEL, OVERFIT_T, np.random.default_rng(0))
    initial, _ = loss_and_grad(model, [TrainItem(g, f) for g, f in zip(graphs, fps)], tm, np.random.default_rng(1))
    # the four molecules with more than 20k relabelings count as zero, so this stays a lower bound
    floor = loss_floor(graphs, tm, np.random.default_rng(2), max_relabelings=20_000)
    assert sum(relabeling_count(g) > 20_000 for g in graphs) == 4
    assert floor > CAPACITY_RATIO * initial, (floor, initial)


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="target lies below the equivariant loss floor; see test_capacity_target_below_loss_floor")
def test_capacity_two_thousand_steps():
    graphs, fps = _overfit_data()
    _, _, losses = train_overfit_decoder(graphs, fps, steps=CAPACITY_STEPS)
    assert np.mean(losses[-50:]) < CAPACITY_RATIO * losses[0]
