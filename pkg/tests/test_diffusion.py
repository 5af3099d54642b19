import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

import diffusion_oracle as oracle
from conftest import mol
from msgen.chem import BondType, MolecularGraph, parse_formula
from msgen.diffusion import (
    K,
    NoiseSchedule,
    TransitionModel,
    batch_diffusion_loss,
    build_marginal,
    cosine_alpha_bar,
    diffusion_loss,
    forward_sample,
    make_transition,
    posterior_probs,
    posterior_step,
    sample_molecule,
    sample_molecules,
    sample_prior,
)
from msgen.errors import DegeneratePosterior, EmptyCorpus, ShapeMismatch

# closed form at t=0, eps=0.008, evaluated with mpmath at 40 digits
ALPHA_BAR_0 = 0.9998445910004081420771533824475549590146
# t=T/4, eps=0.008, same evaluation
ALPHA_BAR_QUARTER = 0.8468805280142707828252870533561970116391

TOY_ALPHA_BAR = np.array([1.0, 0.8, 0.5, 0.1])  # hand-set T=3 chain
TOY_M2 = np.array([0.7, 0.3])
TOY_A0 = (1, 1, 0)  # pairs (0,1), (0,2), (1,2) of a 3-atom path


def toy_model(alpha_bar=TOY_ALPHA_BAR, m2=TOY_M2) -> TransitionModel:
    """Two-state chain embedded in the 5-state model: m has support on no-bond and single only."""
    ab = np.asarray(alpha_bar, dtype=float)
    sched = NoiseSchedule(len(ab) - 1, 0.0, ab, 1.0 - ab)
    return TransitionModel(np.array([m2[0], m2[1], 0, 0, 0]), sched)


# ---- schedule

def test_cosine_examples():
    assert cosine_alpha_bar(500, 500) == pytest.approx(0.0, abs=1e-15)
    assert cosine_alpha_bar(50, 100, 0.0) == 0.5
    assert cosine_alpha_bar(0, 500) == pytest.approx(ALPHA_BAR_0, rel=1e-14)
    assert cosine_alpha_bar(125, 500) == pytest.approx(ALPHA_BAR_QUARTER, rel=1e-14)
    with pytest.raises(ValueError):
        cosine_alpha_bar(501, 500)
    with pytest.raises(ValueError):
        cosine_alpha_bar(-1, 500)


@pytest.mark.parametrize("T,eps", [(1, 0.008), (3, 0.008), (100, 0.008), (500, 0.008), (1000, 0.0)])
def test_schedule_invariants(T, eps):
    s = NoiseSchedule.cosine(T, eps)
    assert s.alpha_bar.shape == (T + 1,)
    assert np.all(np.diff(s.alpha_bar) <= 0)
    assert s.alpha_bar[T] <= 1e-9
    assert s.alpha_bar[0] >= 1 - 1e-3
    assert np.array_equal(s.beta_bar, 1.0 - s.alpha_bar)


@pytest.mark.parametrize("prior", ["marginal", "empty", "full"])
def test_transition_rows_and_telescoping(prior):
    corpus = [mol("leucine"), mol("benzene"), mol("acetonitrile")]
    tm = make_transition(prior, NoiseSchedule.cosine(100), corpus)
    running = np.eye(K)
    for t in range(1, tm.T + 1):
        q, qb = tm.q(t), tm.qbar(t)
        assert (q >= 0).all() and (qb >= 0).all()
        assert np.abs(q.sum(1) - 1).max() <= 1e-12
        assert np.abs(qb.sum(1) - 1).max() <= 1e-12
        assert np.abs(tm.qbar(t - 1) @ q - qb).max() <= 1e-10
        running = running @ q
        assert np.abs(running - qb).max() <= 1e-10


def test_qbar_zero_is_identity():
    tm = toy_model()
    assert np.array_equal(tm.qbar(0), np.eye(K))
    assert tm.q(1) == pytest.approx(tm.qbar(1))


# ---- marginals and priors

def test_build_marginal_examples():
    assert build_marginal([mol("CC")]).tolist() == [0, 1, 0, 0, 0]
    assert build_marginal("empty").tolist() == [1, 0, 0, 0, 0]
    assert build_marginal("full").tolist() == [0, 1, 0, 0, 0]
    assert build_marginal([mol("benzene")]) == pytest.approx([9 / 15, 0, 0, 0, 6 / 15])
    with pytest.raises(EmptyCorpus):
        build_marginal([])
    with pytest.raises(EmptyCorpus):
        make_transition("marginal", NoiseSchedule.cosine(10))


def test_marginal_counts_per_molecule_without_padding():
    # CC: 1 single pair; benzene: 9 none + 6 aromatic; no cross-molecule pairs
    m = build_marginal([mol("CC"), mol("benzene")])
    assert m == pytest.approx(np.array([9, 1, 0, 0, 6]) / 16)


def prior_draws(m: np.ndarray, n_draws: int, rng) -> np.ndarray:
    # 10^5 upper-triangle draws: 5 atoms give 10 pairs per graph
    bonds = sample_prior(5, m, rng, batch=n_draws // 10)
    iu = np.triu_indices(5, 1)
    return bonds[:, iu[0], iu[1]].ravel()


@pytest.mark.parametrize("prior", ["marginal", "empty", "full"])
def test_prior_chi_square(prior, corpus):
    tm = make_transition(prior, NoiseSchedule.cosine(10), [g for _, g in corpus[:200]])
    draws = prior_draws(tm.m, 100_000, np.random.default_rng(11))
    counts = np.bincount(draws, minlength=K)
    support = tm.m > 0
    assert counts[~support].sum() == 0
    if support.sum() > 1:
        p = chisquare(counts[support], tm.m[support] * counts.sum()).pvalue
        assert p > 0.01
    else:
        assert counts[support][0] == 100_000


# ---- forward process

def test_forward_identity_and_full_noise(rng):
    g = mol("leucine")
    sched = NoiseSchedule(2, 0.0, np.array([1.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0]))
    tm = TransitionModel(np.array([0.5, 0.2, 0.1, 0.1, 0.1]), sched)
    assert np.array_equal(forward_sample(g, 1, tm, rng).bonds, g.bonds)
    # alpha_bar = 0: every pair iid from m, regardless of the clean bond
    draws = []
    for _ in range(100_000 // 36):
        b = forward_sample(g, 2, tm, rng).bonds
        draws.append(b[np.triu_indices(g.n, 1)])
    draws = np.concatenate(draws)
    freq = np.bincount(draws, minlength=K) / len(draws)
    sigma = np.sqrt(tm.m * (1 - tm.m) / len(draws))
    assert np.all(np.abs(freq - tm.m) <= 3 * sigma)
    with pytest.raises(ValueError):
        forward_sample(g, 0, tm, rng)


@given(seed=st.integers(0, 2**32 - 1), t=st.integers(1, 50))
def test_forward_output_symmetric(seed, t):
    g = mol("leucine")
    tm = make_transition("marginal", NoiseSchedule.cosine(50), [g])
    b = forward_sample(g, t, tm, np.random.default_rng(seed)).bonds
    assert np.array_equal(b, b.T) and np.all(np.diag(b) == 0)


# ---- posterior

def test_posterior_at_t1_equals_prediction():
    # Qbar_0 = I makes the last step copy the prediction wherever a_1 is reachable from every state
    sched = NoiseSchedule(2, 0.0, np.array([1.0, 0.6, 0.2]), np.array([0.0, 0.4, 0.8]))
    tm = TransitionModel(np.array([0.4, 0.3, 0.1, 0.1, 0.1]), sched)
    rng = np.random.default_rng(0)
    pred = rng.dirichlet(np.ones(K), size=(4, 4))
    pred = (pred + pred.transpose(1, 0, 2)) / 2
    iu = np.triu_indices(4, 1)
    for _ in range(5):
        bonds = sample_prior(4, tm.m, rng)
        post = posterior_probs(pred, bonds, 1, tm)
        assert np.abs(post[iu] - pred[iu]).max() <= 1e-12


def test_posterior_matches_enumeration_k2():
    """Hand-set T=3 two-state chain: posterior with a one-hot clean prediction equals enumerated Bayes."""
    tm = toy_model()
    for t in (1, 2, 3):
        rk = oracle.reverse_kernel(TOY_A0, TOY_ALPHA_BAR, TOY_M2, t)
        for at, dist in rk.items():
            bonds = np.zeros((3, 3), dtype=np.int8)
            bonds[0, 1], bonds[0, 2], bonds[1, 2] = at
            bonds = bonds + bonds.T
            truth = MolecularGraph.from_edges(["C"] * 3, [(0, 1, 1), (0, 2, 1)])
            post = posterior_probs(truth.one_hot_bonds().astype(float), bonds, t, tm)
            pairs = [(0, 1), (0, 2), (1, 2)]
            for v, p in dist.items():
                ours = math.prod(post[i, j, v[e]] for e, (i, j) in enumerate(pairs))
                assert ours == pytest.approx(p, abs=1e-12)


def test_posterior_mixture_matches_enumeration_k2():
    """A soft prediction mixes the per-clean-state kernels with weights from the prediction."""
    tm = toy_model()
    w = np.array([0.25, 0.75])
    for t in (2, 3):
        for at in (0, 1):
            # one pair: average the enumerated kernels for a0 = 0 and a0 = 1
            expect = np.zeros(2)
            for a0 in (0, 1):
                rk = oracle.reverse_kernel((a0,), TOY_ALPHA_BAR, TOY_M2, t)[(at,)]
                expect += w[a0] * np.array([rk.get((0,), 0.0), rk.get((1,), 0.0)])
            pred = np.zeros((2, 2, K))
            pred[0, 1, :2] = pred[1, 0, :2] = w
            bonds = np.array([[0, at], [at, 0]], dtype=np.int8)
            post = posterior_probs(pred, bonds, t, tm)
            assert post[0, 1, :2] == pytest.approx(expect / expect.sum(), abs=1e-12)


def test_forward_posterior_consistency_k2():
    """sum over a_t of q(a_{t-1} | a_0, a_t) q(a_t | a_0) equals q(a_{t-1} | a_0)."""
    tm = toy_model()
    truth = MolecularGraph.from_edges(["C"] * 3, [(0, 1, 1), (0, 2, 1)])
    onehot = truth.one_hot_bonds().astype(float)
    pairs = [(0, 1), (0, 2), (1, 2)]
    for t in (1, 2, 3):
        marg_t = oracle.state_marginal(TOY_A0, TOY_ALPHA_BAR, TOY_M2, t)
        marg_prev = oracle.state_marginal(TOY_A0, TOY_ALPHA_BAR, TOY_M2, t - 1)
        total: dict[tuple, float] = {}
        for at, pt in marg_t.items():
            bonds = np.zeros((3, 3), dtype=np.int8)
            for e, (i, j) in enumerate(pairs):
                bonds[i, j] = bonds[j, i] = at[e]
            post = posterior_probs(onehot, bonds, t, tm)
            for v in np.ndindex(2, 2, 2):
                p = math.prod(post[i, j, v[e]] for e, (i, j) in enumerate(pairs))
                total[v] = total.get(v, 0.0) + p * pt
        for v, p in total.items():
            assert p == pytest.approx(marg_prev.get(v, 0.0), abs=1e-12)
        # the code's closed-form Qbar agrees with the enumerated marginal of each pair
        for e in range(3):
            p1 = sum(p for s, p in marg_t.items() if s[e] == 1)
            assert tm.qbar(t)[TOY_A0[e], 1] == pytest.approx(p1, abs=1e-12)


def test_posterior_step_reproduces_reverse_kernel():
    tm = toy_model()
    truth = MolecularGraph.from_edges(["C"] * 3, [(0, 1, 1), (0, 2, 1)])
    onehot = truth.one_hot_bonds().astype(float)
    rng = np.random.default_rng(5)
    draws = 20_000
    t, at = 2, (0, 1, 1)
    exact = oracle.reverse_kernel(TOY_A0, TOY_ALPHA_BAR, TOY_M2, t)[at]
    bonds = np.zeros((draws, 3, 3), dtype=np.int8)
    for e, (i, j) in enumerate([(0, 1), (0, 2), (1, 2)]):
        bonds[:, i, j] = bonds[:, j, i] = at[e]
    from msgen.diffusion import NoisedGraph
    out = posterior_step(np.broadcast_to(onehot, (draws, 3, 3, K)), NoisedGraph(truth.atoms, bonds, t), tm, rng)
    assert out.t == t - 1
    states = [tuple(b[[0, 0, 1], [1, 2, 2]]) for b in out.bonds]
    for v, p in exact.items():
        freq = sum(s == v for s in states) / draws
        assert abs(freq - p) <= 4 * math.sqrt(p * (1 - p) / draws) + 1e-9
    assert sum(s not in exact for s in states) == 0


@given(seed=st.integers(0, 2**32 - 1), t=st.integers(1, 20))
def test_posterior_normalized_and_symmetric(seed, t):
    rng = np.random.default_rng(seed)
    tm = make_transition("marginal", NoiseSchedule.cosine(20), [mol("leucine"), mol("benzene")])
    n = 6
    pred = rng.dirichlet(np.ones(K), size=(n, n))
    pred = (pred + pred.transpose(1, 0, 2)) / 2
    bonds = sample_prior(n, tm.m, rng)
    post = posterior_probs(pred, bonds, t, tm)
    iu = np.triu_indices(n, 1)
    assert np.abs(post[iu].sum(-1) - 1).max() <= 1e-9
    assert np.allclose(post, post.transpose(1, 0, 2), atol=1e-12)


def test_degenerate_posterior():
    # empty prior with a_t = single: only a clean single bond can explain it, and pred rules it out
    tm = make_transition("empty", NoiseSchedule.cosine(10))
    pred = np.zeros((2, 2, K))
    pred[..., BondType.DOUBLE] = 1.0
    bonds = np.array([[0, 1], [1, 0]], dtype=np.int8)
    with pytest.raises(DegeneratePosterior):
        posterior_probs(pred, bonds, 5, tm)


# ---- loss

def test_loss_examples():
    g = mol("CCO")
    assert diffusion_loss(g.one_hot_bonds().astype(float), g) == 0.0
    assert diffusion_loss(np.full((3, 3, K), 0.2), g) == pytest.approx(3 * math.log(5))
    bad = np.zeros((3, 3, K))
    loss = diffusion_loss(bad, g)
    assert math.isfinite(loss) and loss == pytest.approx(-3 * math.log(1e-30))
    with pytest.raises(ShapeMismatch):
        diffusion_loss(np.zeros((2, 2, K)), g)
    assert batch_diffusion_loss([np.full((3, 3, K), 0.2)] * 2, [g, g]) == pytest.approx(3 * math.log(5))


# ---- sampler

def fixed_target(target: MolecularGraph):
    onehot = target.one_hot_bonds().astype(float)

    def denoise(atoms, bonds, y, t):
        return np.broadcast_to(onehot, bonds.shape + (K,)).copy()

    return denoise


def test_sampler_fixed_target_empty_prior_t1():
    target = mol("CCO")
    formula = parse_formula("C2H6O")
    # sampler atoms are in sorted-symbol order: C, C, O, same as the target's
    tm = make_transition("empty", NoiseSchedule.cosine(1))
    for seed in range(10):
        g = sample_molecule(formula, np.zeros(4), fixed_target(target), tm, np.random.default_rng(seed))
        assert np.array_equal(g.bonds, target.bonds)


def test_sampler_fixed_target_long_chain():
    target = mol("leucine")
    order = np.argsort(target.atoms, kind="stable")
    target = target.permute(np.argsort(order))
    assert list(target.atoms) == sorted(target.atoms)
    tm = make_transition("marginal", NoiseSchedule.cosine(30), [mol("benzene"), target])
    out = sample_molecules(target.formula(), np.zeros(4), fixed_target(target), tm, np.random.default_rng(1), 5)
    assert all(np.array_equal(g.bonds, target.bonds) for g in out)


def test_sampler_rejects_single_atom():
    tm = make_transition("empty", NoiseSchedule.cosine(3))
    with pytest.raises(ValueError):
        sample_molecule(parse_formula("CH4"), np.zeros(1), fixed_target(mol("CC")), tm, np.random.default_rng(0))


def test_sampler_uninformed_denoiser_reproduces_prior():
    tm = make_transition("marginal", NoiseSchedule.cosine(10), [mol("benzene"), mol("leucine"), mol("CC#N")])

    def uninformed(atoms, bonds, y, t):
        return np.broadcast_to(tm.m, bonds.shape + (K,)).copy()

    gs = sample_molecules(parse_formula("C4H10"), np.zeros(1), uninformed, tm, np.random.default_rng(2), 10_000)
    iu = np.triu_indices(4, 1)
    draws = np.concatenate([g.bonds[iu] for g in gs])
    freq = np.bincount(draws, minlength=K) / len(draws)
    sigma = np.sqrt(tm.m * (1 - tm.m) / len(draws))
    assert np.all(np.abs(freq - tm.m) <= 4 * sigma + 1e-12)


def test_sampler_deterministic_and_symmetric():
    tm = make_transition("marginal", NoiseSchedule.cosine(20), [mol("benzene"), mol("leucine")])

    def noisy(atoms, bonds, y, t):
        r = np.random.default_rng(t).dirichlet(np.ones(K), size=bonds.shape[-2:])
        r = (r + r.transpose(1, 0, 2)) / 2
        return np.broadcast_to(r, bonds.shape + (K,)).copy()

    f = parse_formula("C6H6O")
    a = sample_molecules(f, np.zeros(1), noisy, tm, np.random.default_rng(9), 8)
    b = sample_molecules(f, np.zeros(1), noisy, tm, np.random.default_rng(9), 8)
    for x, y in zip(a, b):
        assert np.array_equal(x.bonds, y.bonds)
        assert np.array_equal(x.bonds, x.bonds.T) and np.all(np.diag(x.bonds) == 0)
