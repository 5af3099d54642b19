"""Noise a molecule's bond matrix forward, then run the reverse chain with two stand-in denoisers.

    python demos/diffusion_walkthrough.py
"""

import numpy as np

from msgen.chem import canonical_key, is_valid, parse_smiles, write_smiles
from msgen.diffusion import K, NoiseSchedule, forward_sample, make_transition, posterior_probs, sample_molecules

CORPUS = ["CC(C)CC(N)C(=O)O", "Oc1ccccc1", "CCOC(C)=O", "NCC(=O)O", "OCC(O)CO"]
NAMES = ["none", "single", "double", "triple", "aromatic"]

rng = np.random.default_rng(0)
graphs = [parse_smiles(s) for s in CORPUS]
leucine = graphs[0]
tm = make_transition("marginal", NoiseSchedule.cosine(100), graphs)
print("bond-type marginal m:", {k: round(float(v), 3) for k, v in zip(NAMES, tm.m)})

iu = np.triu_indices(leucine.n, 1)
for t in (1, 10, 50, 90, 100):
    noised = forward_sample(leucine, t, tm, rng)
    changed = int((noised.bonds[iu] != leucine.bonds[iu]).sum())
    print(f"t={t:3d}  alpha_bar={tm.schedule.alpha_bar[t]:.4f}  pairs changed {changed}/{len(iu[0])}")

# the posterior for one pair at t=50, when the denoiser is certain of the clean single bond
noised = forward_sample(leucine, 50, tm, rng)
post = posterior_probs(leucine.one_hot_bonds().astype(float), noised.bonds, 50, tm)
i, j = 0, 1
print(f"pair ({i},{j}) clean={NAMES[leucine.bonds[i, j]]} noised={NAMES[noised.bonds[i, j]]} "
      f"posterior={np.round(post[i, j], 3)}")

# order the atoms as the sampler does (sorted symbols) so the stand-in prediction lines up
order = sorted(range(leucine.n), key=lambda a: (leucine.atoms[a], a))
target = leucine.permute(order)
onehot = target.one_hot_bonds().astype(float)


def oracle(atoms, bonds, y, t):
    return np.broadcast_to(onehot, bonds.shape + (K,)).copy()


def prior_only(atoms, bonds, y, t):
    return np.broadcast_to(tm.m, bonds.shape + (K,)).copy()


formula = leucine.formula()
for name, fn in [("knows the answer", oracle), ("predicts m everywhere", prior_only)]:
    out = sample_molecules(formula, np.zeros(1), fn, tm, np.random.default_rng(1), 200)
    valid = [g for g in out if is_valid(g)]
    hits = sum(canonical_key(g) == canonical_key(leucine) for g in valid)
    print(f"denoiser that {name}: {len(valid)}/200 valid, {hits} are leucine")
    if valid:
        print("   e.g.", write_smiles(valid[0]))
