"""Lower bound on the diffusion loss of any permutation-equivariant denoiser.

An equivariant network cannot tell apart atoms of the same element except
through the noisy bonds it is shown. Its expected loss on a molecule is
therefore at least the Bayes loss of a predictor that knows the molecule up
to a same-element relabeling and sees ``A_t``: the posterior over relabelings
is proportional to ``prod_{i<j} Qbar_t[A0_sigma[i, j], A_t[i, j]]``, and each
pair is scored by its posterior marginal.
"""

import itertools
import math

import numpy as np

from msgen.chem import MolecularGraph
from msgen.diffusion import TransitionModel, forward_sample


def relabelings(g: MolecularGraph) -> np.ndarray:
    """Every permutation mapping each atom to an atom of the same element, as rows."""
    groups: dict[str, list[int]] = {}
    for i, a in enumerate(g.atoms):
        groups.setdefault(a, []).append(i)
    rows = []
    for choice in itertools.product(*(itertools.permutations(idx) for idx in groups.values())):
        perm = np.empty(g.n, dtype=np.int64)
        for idx, img in zip(groups.values(), choice):
            perm[idx] = img
        rows.append(perm)
    return np.array(rows)


def relabeling_count(g: MolecularGraph) -> int:
    counts: dict[str, int] = {}
    for a in g.atoms:
        counts[a] = counts.get(a, 0) + 1
    return math.prod(math.factorial(c) for c in counts.values())


def relabeled_pairs(g: MolecularGraph) -> tuple[np.ndarray, np.ndarray]:
    """Distinct relabeled upper-triangle bond vectors and their multiplicities."""
    perms = relabelings(g)
    iu = np.triu_indices(g.n, 1)
    pairs = g.bonds[perms[:, iu[0]], perms[:, iu[1]]].astype(np.int64)
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    return uniq, counts


def bayes_loss(g: MolecularGraph, t: int, tm: TransitionModel, rng: np.random.Generator, draws: int = 1) -> float:
    """Monte Carlo mean over ``A_t`` of the per-molecule Bayes loss at step ``t``."""
    uniq, counts = relabeled_pairs(g)
    iu = np.triu_indices(g.n, 1)
    truth = g.bonds[iu].astype(np.int64)
    own = np.flatnonzero((uniq == truth).all(axis=1))[0]
    with np.errstate(divide="ignore"):
        logq = np.log(tm.qbar(t))
    total = 0.0
    for _ in range(draws):
        at = forward_sample(g, t, tm, rng).bonds[iu].astype(np.int64)
        ll = logq[uniq, at].sum(axis=1) + np.log(counts)
        w = np.exp(ll - ll.max())
        w /= w.sum()
        # posterior mass on the true bond of each pair
        p_true = w @ (uniq == truth[None, :])
        assert w[own] > 0
        total += float(-np.log(p_true).sum())
    return total / draws


def loss_floor(graphs, tm: TransitionModel, rng: np.random.Generator, max_relabelings: int = 100_000) -> float:
    """Mean over molecules and uniform ``t`` of :func:`bayes_loss`, one draw per step.

    Molecules with more relabelings than ``max_relabelings`` contribute zero,
    which keeps the result a lower bound.
    """
    per_mol = []
    for g in graphs:
        if relabeling_count(g) > max_relabelings:
            per_mol.append(0.0)
            continue
        per_mol.append(np.mean([bayes_loss(g, t, tm, rng) for t in range(1, tm.T + 1)]))
    return float(np.mean(per_mol))
