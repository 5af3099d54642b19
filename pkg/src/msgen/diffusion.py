"""Discrete diffusion over bond types.

Each unordered atom pair carries a categorical bond variable with
``k = 5`` states. The forward process mixes the one-hot bond with a prior
``m`` using ``Qbar_t = abar_t I + (1 - abar_t) 1 m^T``, and the reverse
sampler marginalizes the exact posterior over the denoiser's prediction of
the clean bond.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from msgen.chem.elements import NUM_BOND_TYPES, BondType
from msgen.chem.formula import ChemicalFormula
from msgen.chem.graph import MolecularGraph
from msgen.errors import DegeneratePosterior, EmptyCorpus, ShapeMismatch

K = NUM_BOND_TYPES
PRIOR_KINDS = ("marginal", "empty", "full")
ALPHA_FLOOR = 1e-12
LOG_FLOOR = 1e-30

# (atoms, bonds_t (B, n, n) int, y, t) -> probabilities (B, n, n, K)
Denoiser = Callable[[Sequence[str], np.ndarray, np.ndarray, int], np.ndarray]


def cosine_alpha_bar(t: int, T: int, epsilon: float = 0.008) -> float:
    """``cos(pi (t/T + eps) / (2 (1 + eps)))**2``.

    Evaluated as ``(1 + cos(2 theta)) / 2`` so that the endpoints and the
    midpoint (``t = T/2`` with ``eps = 0``) come out exact in floating point.
    """
    if not 0 <= t <= T:
        raise ValueError(f"t={t} outside [0, {T}]")
    x = (t / T + epsilon) / (1.0 + epsilon)
    return 0.5 * (1.0 + math.cos(math.pi * x))


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    T: int
    epsilon: float
    alpha_bar: np.ndarray
    beta_bar: np.ndarray

    @classmethod
    def cosine(cls, T: int = 500, epsilon: float = 0.008) -> NoiseSchedule:
        if T < 1:
            raise ValueError("T must be positive")
        ab = np.array([cosine_alpha_bar(t, T, epsilon) for t in range(T + 1)])
        ab.setflags(write=False)
        bb = 1.0 - ab
        bb.setflags(write=False)
        return cls(T, float(epsilon), ab, bb)

    def alpha(self, t: int) -> float:
        """Single-step retention ``alpha_t`` with ``alpha_1 * ... * alpha_t = abar_t``.

        The chain starts from the clean graph (``Qbar_0 = I``), so ``alpha_1``
        is ``abar_1`` itself rather than ``abar_1 / abar_0``.
        """
        if not 1 <= t <= self.T:
            raise ValueError(f"t={t} outside [1, {self.T}]")
        if t == 1:
            return float(self.alpha_bar[1])
        return float(self.alpha_bar[t] / max(self.alpha_bar[t - 1], ALPHA_FLOOR))


@dataclass(frozen=True, eq=False)
class TransitionModel:
    """Transition matrices for a fixed prior ``m`` and schedule."""

    m: np.ndarray
    schedule: NoiseSchedule

    def __post_init__(self) -> None:
        m = np.asarray(self.m, dtype=np.float64).copy()
        if m.shape != (K,) or (m < 0).any() or abs(m.sum() - 1.0) > 1e-9:
            raise ValueError(f"m must be a probability vector of length {K}")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @property
    def T(self) -> int:
        return self.schedule.T

    def _mix(self, a: float) -> np.ndarray:
        return a * np.eye(K) + (1.0 - a) * np.outer(np.ones(K), self.m)

    def qbar(self, t: int) -> np.ndarray:
        """Cumulative ``Qbar_t``; ``Qbar_0`` is the identity."""
        if t == 0:
            return np.eye(K)
        if not 1 <= t <= self.T:
            raise ValueError(f"t={t} outside [0, {self.T}]")
        return self._mix(float(self.schedule.alpha_bar[t]))

    def q(self, t: int) -> np.ndarray:
        """Single-step ``Q_t`` with rows ``q(a_t | a_{t-1})``."""
        return self._mix(self.schedule.alpha(t))


def build_marginal(source: str | Iterable[MolecularGraph]) -> np.ndarray:
    """Prior over bond types.

    ``source`` is a prior kind (``"empty"``: all mass on no-bond, ``"full"``:
    all mass on single bonds) or a corpus of graphs, in which case the
    empirical frequency over all unordered atom pairs of every molecule is
    returned.

    Raises:
        EmptyCorpus: the corpus has no atom pairs.
    """
    if isinstance(source, str):
        kind = source.lower()
        if kind == "empty":
            return np.eye(K)[BondType.NONE]
        if kind == "full":
            return np.eye(K)[BondType.SINGLE]
        raise ValueError(f"unknown prior kind {source!r}; corpus required for 'marginal'")
    counts = np.zeros(K)
    for g in source:
        iu = np.triu_indices(g.n, 1)
        counts += np.bincount(g.bonds[iu].astype(np.int64), minlength=K)
    total = counts.sum()
    if total == 0:
        raise EmptyCorpus("no atom pairs to estimate the bond marginal from")
    return counts / total


def make_transition(
    prior: str, schedule: NoiseSchedule, corpus: Iterable[MolecularGraph] | None = None
) -> TransitionModel:
    if prior == "marginal":
        if corpus is None:
            raise EmptyCorpus("the marginal prior needs a training corpus")
        return TransitionModel(build_marginal(corpus), schedule)
    if prior in PRIOR_KINDS:
        return TransitionModel(build_marginal(prior), schedule)
    raise ValueError(f"unknown prior {prior!r}")


@dataclass(frozen=True, eq=False)
class NoisedGraph:
    """Atoms plus a noised bond matrix at step ``t``; bonds may carry a batch axis."""

    atoms: tuple[str, ...]
    bonds: np.ndarray
    t: int


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one index per row of the last axis by inverse CDF."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1] + (1,)) * cdf[..., -1:]
    idx = (cdf <= u).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def symmetrize_upper(upper: np.ndarray) -> np.ndarray:
    """Mirror the strict upper triangle of ``(..., n, n)`` codes; zero the diagonal."""
    n = upper.shape[-1]
    tri = np.triu(np.ones((n, n), dtype=bool), 1)
    out = np.where(tri, upper, 0)
    return (out + np.swapaxes(out, -1, -2)).astype(np.int8)


def forward_sample(
    g: MolecularGraph, t: int, tm: TransitionModel, rng: np.random.Generator
) -> NoisedGraph:
    """Draw ``A_t ~ A_0 Qbar_t`` independently for each pair ``i < j``."""
    if not 1 <= t <= tm.T:
        raise ValueError(f"t={t} outside [1, {tm.T}]")
    rows = tm.qbar(t)[g.bonds.astype(np.int64)]
    return NoisedGraph(g.atoms, symmetrize_upper(sample_categorical(rows, rng)), t)


def sample_prior(n: int, m: np.ndarray, rng: np.random.Generator, batch: int | None = None) -> np.ndarray:
    shape = (n, n) if batch is None else (batch, n, n)
    probs = np.broadcast_to(m, shape + (K,))
    return symmetrize_upper(sample_categorical(probs, rng))


def posterior_probs(pred: np.ndarray, bonds_t: np.ndarray, t: int, tm: TransitionModel) -> np.ndarray:
    """``p(a_{t-1} | M_t)`` for every pair, marginalizing over the predicted clean bond.

    ``q(a_{t-1} = v | a_0 = k, a_t) = Q_t[v, a_t] Qbar_{t-1}[k, v] / Qbar_t[k, a_t]``,
    and clean states with ``Qbar_t[k, a_t] = 0`` contribute nothing. The
    result is renormalized over ``v``.

    Raises:
        DegeneratePosterior: some pair ends up with no probability mass.
    """
    if pred.shape != bonds_t.shape + (K,):
        raise ShapeMismatch(f"pred {pred.shape} vs bonds {bonds_t.shape}")
    at = bonds_t.astype(np.int64)
    qt = tm.q(t)
    qbar_prev = tm.qbar(t - 1)
    qbar_t = tm.qbar(t)
    col = np.moveaxis(qt[:, at], 0, -1)          # (..., v) = Q_t[v, a_t]
    den = np.moveaxis(qbar_t[:, at], 0, -1)      # (..., k) = Qbar_t[k, a_t]
    num = qbar_prev * col[..., None, :]          # (..., k, v)
    safe = np.where(den > 0, den, 1.0)
    ratio = np.where((den > 0)[..., None], num / safe[..., None], 0.0)
    post = np.einsum("...k,...kv->...v", pred, ratio)
    total = post.sum(axis=-1, keepdims=True)
    n = bonds_t.shape[-1]
    upper = np.triu(np.ones((n, n), dtype=bool), 1)
    if (total[..., 0][..., upper] <= 0).any():
        raise DegeneratePosterior(f"no posterior mass at step {t}")
    return post / np.where(total > 0, total, 1.0)


def posterior_step(
    pred: np.ndarray, noised: NoisedGraph, tm: TransitionModel, rng: np.random.Generator
) -> NoisedGraph:
    if noised.t < 1:
        raise ValueError("cannot step below t=0")
    post = posterior_probs(pred, noised.bonds, noised.t, tm)
    return NoisedGraph(noised.atoms, symmetrize_upper(sample_categorical(post, rng)), noised.t - 1)


def diffusion_loss(pred: np.ndarray, truth: MolecularGraph) -> float:
    """Summed cross-entropy ``-sum_{i<j} log p[i, j, a_ij]`` with a 1e-30 floor."""
    n = truth.n
    if pred.shape != (n, n, K):
        raise ShapeMismatch(f"pred {pred.shape} vs {n} atoms")
    iu, ju = np.triu_indices(n, 1)
    p = pred[iu, ju, truth.bonds[iu, ju].astype(np.int64)]
    return float(-np.log(np.maximum(p, LOG_FLOOR)).sum())


def batch_diffusion_loss(preds: Sequence[np.ndarray], truths: Sequence[MolecularGraph]) -> float:
    """Mean over batch items of :func:`diffusion_loss`."""
    if len(preds) != len(truths) or not preds:
        raise ShapeMismatch("preds and truths must be non-empty and of equal length")
    return float(np.mean([diffusion_loss(p, g) for p, g in zip(preds, truths)]))


def sample_molecules(
    formula: ChemicalFormula,
    y: np.ndarray,
    denoiser: Denoiser,
    tm: TransitionModel,
    rng: np.random.Generator,
    num_samples: int = 1,
) -> list[MolecularGraph]:
    """Run ``num_samples`` reverse chains in parallel for one formula.

    Atoms are fixed by the formula in sorted-symbol order. Validity is not
    enforced here.
    """
    atoms = tuple(formula.atoms())
    n = len(atoms)
    if n < 2:
        raise ValueError("a formula with fewer than two heavy atoms has no bonds to generate")
    bonds = sample_prior(n, tm.m, rng, batch=num_samples)
    for t in range(tm.T, 0, -1):
        pred = denoiser(atoms, bonds, y, t)
        post = posterior_probs(pred, bonds, t, tm)
        bonds = symmetrize_upper(sample_categorical(post, rng))
    return [MolecularGraph(atoms, b) for b in bonds]


def sample_molecule(
    formula: ChemicalFormula,
    y: np.ndarray,
    denoiser: Denoiser,
    tm: TransitionModel,
    rng: np.random.Generator,
) -> MolecularGraph:
    return sample_molecules(formula, y, denoiser, tm, rng, 1)[0]
