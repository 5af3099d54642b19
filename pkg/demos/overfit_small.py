"""Train a small decoder on six molecules and check it recovers each from its fingerprint.

A scaled-down version of the overfit acceptance run; takes about two minutes on one core.
Leucine and isoleucine share a formula and are the usual confusion at this size.

    python demos/overfit_small.py
"""

import time

import numpy as np

from msgen.chem import is_isomorphic, parse_smiles, write_smiles
from msgen.denoiser import DenoiserConfig, GraphTransformer, TrainItem, loss_and_grad
from msgen.diffusion import NoiseSchedule, make_transition, sample_molecules
from msgen.evalmetrics import rank_samples
from msgen.fingerprint import morgan_fingerprint
from msgen.optim import AdamState, adamw_step, clip_grad, cosine_lr

SMILES = ["CC(C)CC(N)C(=O)O", "CCC(C)C(N)C(=O)O", "Oc1ccccc1", "CCOC(C)=O", "CCCC(=O)OC", "OCC(O)CO"]
T, STEPS, LR, WIDTH = 50, 3000, 2e-3, 512

graphs = [parse_smiles(s) for s in SMILES]
fps = [morgan_fingerprint(g, WIDTH).as_float() for g in graphs]
tm = make_transition("marginal", NoiseSchedule.cosine(T), graphs)
cfg = DenoiserConfig(layers=3, hidden_node=48, hidden_edge=24, hidden_global=48, heads=4, time_dim=16,
                     cond_dim=WIDTH, triangle=True)
model = GraphTransformer.create(cfg, T, np.random.default_rng(0))
items = [TrainItem(g, f) for g, f in zip(graphs, fps)] * 2
state, rng = AdamState.zeros(model.params.size), np.random.default_rng(1)
print(f"{model.params.size} parameters")

t0 = time.time()
for step in range(STEPS):
    loss, grad = loss_and_grad(model, items, tm, rng)
    clip_grad(grad, 1.0)
    adamw_step(model.params.flat, grad, state, cosine_lr(step, STEPS, LR, 1e-5), 0.0)
    if step % 500 == 0 or step == STEPS - 1:
        print(f"step {step:4d}  loss {loss:7.3f}  {time.time() - t0:5.0f} s")

for s, g, fp in zip(SMILES, graphs, fps):
    ranked = rank_samples(sample_molecules(g.formula(), fp, model, tm, np.random.default_rng(7), 50))
    top = ranked.entries[0] if len(ranked) else None
    guess = write_smiles(ranked.graphs[0]) if top else "-"
    hit = bool(top) and is_isomorphic(ranked.graphs[0], g)
    print(f"{s:20s} -> {guess:20s} ({top.count if top else 0}/50, {ranked.num_valid} valid) {'match' if hit else 'miss'}")
