"""Graph transformer that predicts clean bond types from a noised graph.

Inputs are the one-hot atoms with a sinusoidal embedding of ``t/T``, the
one-hot noised bonds and a condition vector ``y``. Each layer runs
multi-head attention over atoms with logits shifted by a per-head
projection of the edge states, updates every edge from its two end atoms,
and adds a per-layer projection of the global state to node and edge
states. With ``triangle`` set, each edge also receives a projection of the
two-hop products ``sum_k e_ik * e_kj``, which lets a layer see paths of
length two. A learned linear map of the noised one-hot bonds is added to
the output logits (``edge_skip``). Output logits are averaged with their
transpose before the softmax so predictions are symmetric.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import asdict, dataclass

import numpy as np

from msgen import autograd as ag
from msgen.autograd import Tensor
from msgen.chem.elements import ELEMENT_INDEX, NUM_BOND_TYPES, NUM_ELEMENTS
from msgen.chem.graph import MolecularGraph
from msgen.diffusion import LOG_FLOOR, NoisedGraph, TransitionModel, forward_sample
from msgen.errors import NonFiniteActivation, NonFiniteGradient, ShapeMismatch
from msgen.nn import ParamSet, layer_norm, linear, linear_specs, mlp, mlp_specs, norm_specs, sinusoidal

K = NUM_BOND_TYPES


@dataclass(frozen=True)
class DenoiserConfig:
    layers: int = 4
    hidden_node: int = 128
    hidden_edge: int = 64
    hidden_global: int = 128
    heads: int = 8
    time_dim: int = 16
    cond_dim: int = 2048
    ffn_mult: int = 2
    edge_skip: bool = True
    triangle: bool = False

    def __post_init__(self) -> None:
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if self.hidden_node % self.heads or self.hidden_edge % self.heads:
            raise ValueError("node and edge widths must be divisible by the head count")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")

    def to_dict(self) -> dict:
        return asdict(self)


def param_specs(cfg: DenoiserConfig) -> list:
    dx, de, dg, h = cfg.hidden_node, cfg.hidden_edge, cfg.hidden_global, cfg.heads
    specs = mlp_specs("in_node", [NUM_ELEMENTS + cfg.time_dim, dx, dx])
    specs += mlp_specs("in_edge", [K, de, de])
    specs += mlp_specs("in_glob", [cfg.cond_dim, dg, dg])
    for l in range(cfg.layers):
        p = f"layer{l}"
        for name in ("q", "k", "v", "o"):
            specs += linear_specs(f"{p}.{name}", dx, dx)
        specs += linear_specs(f"{p}.edge_bias", de, h)
        specs += linear_specs(f"{p}.glob_node", dg, dx)
        specs += norm_specs(f"{p}.norm1", dx)
        specs += mlp_specs(f"{p}.ffn", [dx, cfg.ffn_mult * dx, dx])
        specs += norm_specs(f"{p}.norm2", dx)
        specs += linear_specs(f"{p}.edge_in", de, de)
        specs += [(f"{p}.node_edge.w", (dx, de), "weight")]
        specs += [(f"{p}.glob_edge.w", (dg, de), "weight")]
        specs += linear_specs(f"{p}.edge_out", de, de)
        specs += norm_specs(f"{p}.norm_edge", de)
        if cfg.triangle:
            specs += [(f"{p}.tri_in.w", (de, de), "weight")]
            specs += linear_specs(f"{p}.tri_out", de, de)
    specs += mlp_specs("out", [de, de, K])
    if cfg.edge_skip:
        specs += [("out_skip.w", (K, K), "zeros")]
    return specs


def time_features(t: np.ndarray | int, T: int, dim: int) -> np.ndarray:
    return sinusoidal(np.asarray(t, dtype=np.float64) / T, dim, 100.0)


def atom_one_hot(atoms: Sequence[str]) -> np.ndarray:
    x = np.zeros((len(atoms), NUM_ELEMENTS))
    x[np.arange(len(atoms)), [ELEMENT_INDEX[a] for a in atoms]] = 1.0
    return x


class GraphTransformer:
    """The bond denoiser; parameters live in ``self.params`` (a :class:`ParamSet`)."""

    def __init__(self, config: DenoiserConfig, T: int, params: ParamSet | None = None):
        self.config = config
        self.T = T
        self.params = params if params is not None else ParamSet(param_specs(config))

    @classmethod
    def create(cls, config: DenoiserConfig, T: int, rng: np.random.Generator) -> GraphTransformer:
        model = cls(config, T)
        model.params.initialize(rng)
        return model

    def logits(
        self,
        p: dict[str, Tensor],
        atoms_onehot: np.ndarray,
        bonds_t: np.ndarray,
        y: Tensor | np.ndarray,
        t: np.ndarray,
    ) -> Tensor:
        """Symmetric edge logits ``(B, n, n, K)``.

        ``atoms_onehot`` is ``(B, n, d)``, ``bonds_t`` ``(B, n, n)`` integer
        codes, ``y`` ``(B, c)`` and ``t`` ``(B,)`` step indices.
        """
        cfg = self.config
        B, n = bonds_t.shape[0], bonds_t.shape[1]
        if atoms_onehot.shape != (B, n, NUM_ELEMENTS) or bonds_t.shape != (B, n, n):
            raise ShapeMismatch(f"atoms {atoms_onehot.shape} vs bonds {bonds_t.shape}")
        y = ag.as_tensor(y)
        if y.shape != (B, cfg.cond_dim):
            raise ShapeMismatch(f"condition shape {y.shape}, expected {(B, cfg.cond_dim)}")
        H, dx, de = cfg.heads, cfg.hidden_node, cfg.hidden_edge
        dh = dx // H

        temb = time_features(t, self.T, cfg.time_dim)
        node_in = np.concatenate([atoms_onehot, np.broadcast_to(temb[:, None, :], (B, n, cfg.time_dim))], -1)
        x = mlp(p, "in_node", Tensor(node_in), 2)
        e_in = Tensor(np.eye(K)[bonds_t.astype(np.int64)])
        e = mlp(p, "in_edge", e_in, 2)
        g = mlp(p, "in_glob", y, 2)
        scale = 1.0 / np.sqrt(dh)

        for l in range(cfg.layers):
            pre = f"layer{l}"

            def heads(z: Tensor) -> Tensor:
                return z.reshape(B, n, H, dh).transpose(0, 2, 1, 3)

            q = heads(linear(p, f"{pre}.q", x))
            k = heads(linear(p, f"{pre}.k", x))
            v = heads(linear(p, f"{pre}.v", x))
            scores = ag.matmul(q, k.transpose(0, 1, 3, 2)) * scale
            bias = linear(p, f"{pre}.edge_bias", e).transpose(0, 3, 1, 2)
            attn = ag.softmax(scores + bias, axis=-1)
            o = ag.matmul(attn, v).transpose(0, 2, 1, 3).reshape(B, n, dx)
            gx = linear(p, f"{pre}.glob_node", g).reshape(B, 1, dx)
            x = layer_norm(p, f"{pre}.norm1", x + linear(p, f"{pre}.o", o) + gx)
            x = layer_norm(p, f"{pre}.norm2", x + mlp(p, f"{pre}.ffn", x, 2))

            pn = ag.matmul(x, p[f"{pre}.node_edge.w"])
            ge = ag.matmul(g, p[f"{pre}.glob_edge.w"]).reshape(B, 1, 1, de)
            u = linear(p, f"{pre}.edge_in", e) + pn.reshape(B, n, 1, de) + pn.reshape(B, 1, n, de) + ge
            e = layer_norm(p, f"{pre}.norm_edge", e + linear(p, f"{pre}.edge_out", ag.silu(u)))
            if cfg.triangle:
                # two-hop mixing: sum_k a_ik * a_kj, symmetric because e is
                a = ag.matmul(e, p[f"{pre}.tri_in.w"]).transpose(0, 3, 1, 2)
                tri = (ag.matmul(a, a) * (1.0 / n)).transpose(0, 2, 3, 1)
                e = e + linear(p, f"{pre}.tri_out", tri)

        z = mlp(p, "out", e, 2)
        if cfg.edge_skip:
            z = z + ag.matmul(e_in, p["out_skip.w"])
        z = (z + z.transpose(0, 2, 1, 3)) * 0.5
        if not np.isfinite(z.data).all():
            raise NonFiniteActivation("denoiser produced non-finite logits")
        return z

    def predict(self, atoms: Sequence[str], bonds_t: np.ndarray, y: np.ndarray, t: int | np.ndarray) -> np.ndarray:
        """Edge probabilities for one atom list and a batch (or single) bond matrix."""
        single = bonds_t.ndim == 2
        b = bonds_t[None] if single else bonds_t
        B = b.shape[0]
        x = np.broadcast_to(atom_one_hot(atoms), (B, len(atoms), NUM_ELEMENTS))
        yy = np.asarray(y, dtype=np.float64)
        yy = np.broadcast_to(yy, (B, yy.shape[-1]))
        tt = np.broadcast_to(np.asarray(t), (B,))
        with ag.no_grad():
            z = self.logits(self.params_tensors(), x, b, yy, tt)
            probs = ag.softmax(z, axis=-1).data
        return probs[0] if single else probs

    __call__ = predict

    def params_tensors(self) -> dict[str, Tensor]:
        return self.params.tensors()


def denoise(model: GraphTransformer, noised: NoisedGraph, y: np.ndarray) -> np.ndarray:
    """Predicted ``p(A_0 | M_t)`` for a noised graph; shape ``(n, n, K)`` or batched."""
    return model.predict(noised.atoms, noised.bonds, y, noised.t)


def edge_loss(logits: Tensor, truth: np.ndarray) -> Tensor:
    """Per-item summed cross-entropy over ``i < j``; ``truth`` is ``(B, n, n)`` codes."""
    B, n = truth.shape[0], truth.shape[1]
    logp = ag.clamp_min(ag.log_softmax(logits, axis=-1), float(np.log(LOG_FLOOR)))
    mask = np.eye(K)[truth.astype(np.int64)] * np.triu(np.ones((n, n)), 1)[None, :, :, None]
    return -ag.tsum((logp * mask).reshape(B, -1), axis=1)


@dataclass
class TrainItem:
    graph: MolecularGraph
    y: np.ndarray | Tensor


def noise_batch(items: Sequence[TrainItem], tm: TransitionModel, rng: np.random.Generator) -> list[NoisedGraph]:
    """Draw ``t ~ U{1..T}`` and a forward sample for each item, in order."""
    out = []
    for it in items:
        t = int(rng.integers(1, tm.T + 1))
        out.append(forward_sample(it.graph, t, tm, rng))
    return out


def batch_loss(
    model: GraphTransformer,
    p: dict[str, Tensor],
    items: Sequence[TrainItem],
    noised: Sequence[NoisedGraph],
) -> Tensor:
    """Mean over items of the summed pair cross-entropy; items are grouped by size."""
    groups: dict[int, list[int]] = {}
    for idx, it in enumerate(items):
        groups.setdefault(it.graph.n, []).append(idx)
    total = None
    for n in sorted(groups):
        idx = groups[n]
        x = np.stack([atom_one_hot(items[i].graph.atoms) for i in idx])
        b = np.stack([noised[i].bonds for i in idx])
        t = np.array([noised[i].t for i in idx])
        ys = [ag.as_tensor(items[i].y) for i in idx]
        y = ag.stack(ys, 0) if any(v.requires_grad for v in ys) else Tensor(np.stack([v.data for v in ys]))
        truth = np.stack([items[i].graph.bonds for i in idx])
        s = ag.tsum(edge_loss(model.logits(p, x, b, y, t), truth))
        total = s if total is None else total + s
    return total * (1.0 / len(items))


def loss_and_grad(
    model: GraphTransformer,
    items: Sequence[TrainItem],
    tm: TransitionModel,
    rng: np.random.Generator,
) -> tuple[float, np.ndarray]:
    """Training loss on a batch and its exact gradient w.r.t. the flat parameters.

    Raises:
        NonFiniteGradient: the gradient has non-finite entries.
    """
    noised = noise_batch(items, tm, rng)
    model.params.zero_grad()
    p = model.params_tensors()
    loss = batch_loss(model, p, items, noised)
    ag.backward(loss)
    grad = model.params.grad.copy()
    if not np.isfinite(grad).all():
        raise NonFiniteGradient("denoiser gradient is not finite")
    return float(loss.data), grad
