"""Flat parameter storage and the few layers the models are built from."""

from __future__ import annotations

from collections.abc import Iterable

import numpy as np

from msgen import autograd as ag
from msgen.autograd import Tensor

LN_EPS = 1e-5


class ParamSet:
    """Named parameter views over one flat vector, with a matching gradient buffer.

    ``specs`` is a list of ``(name, shape, init)`` where ``init`` is
    ``"weight"`` (scaled normal, std ``1/sqrt(fan_in)``), ``"zeros"`` or
    ``"ones"``. Shapes depend only on the specs, so a vector saved from one
    instance loads into any other built from the same config.
    """

    def __init__(self, specs: Iterable[tuple[str, tuple[int, ...], str]]):
        self.specs = [(name, tuple(shape), init) for name, shape, init in specs]
        self.size = int(sum(np.prod(s) for _, s, _ in self.specs))
        self.flat = np.zeros(self.size)
        self.grad = np.zeros(self.size)
        self._rebind()

    def _rebind(self) -> None:
        self.views: dict[str, np.ndarray] = {}
        self.grad_views: dict[str, np.ndarray] = {}
        off = 0
        for name, shape, _ in self.specs:
            k = int(np.prod(shape))
            self.views[name] = self.flat[off:off + k].reshape(shape)
            self.grad_views[name] = self.grad[off:off + k].reshape(shape)
            off += k

    def initialize(self, rng: np.random.Generator) -> ParamSet:
        for name, shape, init in self.specs:
            view = self.views[name]
            if init == "weight":
                view[...] = rng.standard_normal(shape) / np.sqrt(shape[0])
            elif init == "ones":
                view[...] = 1.0
            elif init == "zeros":
                view[...] = 0.0
            else:
                raise ValueError(f"unknown init {init!r}")
        return self

    def load(self, flat: np.ndarray) -> ParamSet:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.size,):
            raise ValueError(f"expected {self.size} parameters, got {flat.shape}")
        self.flat[...] = flat
        return self

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def tensors(self) -> dict[str, Tensor]:
        """Fresh leaf tensors sharing memory with the flat vector and gradient."""
        return {name: Tensor.param(self.views[name], self.grad_views[name]) for name in self.views}

    def group_slices(self) -> dict[str, slice]:
        """Slices of the flat vector per parameter name."""
        out, off = {}, 0
        for name, shape, _ in self.specs:
            k = int(np.prod(shape))
            out[name] = slice(off, off + k)
            off += k
        return out


def linear_specs(prefix: str, fan_in: int, fan_out: int) -> list[tuple[str, tuple[int, ...], str]]:
    return [(f"{prefix}.w", (fan_in, fan_out), "weight"), (f"{prefix}.b", (fan_out,), "zeros")]


def mlp_specs(prefix: str, dims: list[int]) -> list[tuple[str, tuple[int, ...], str]]:
    out = []
    for k in range(len(dims) - 1):
        out += linear_specs(f"{prefix}.{k}", dims[k], dims[k + 1])
    return out


def norm_specs(prefix: str, dim: int) -> list[tuple[str, tuple[int, ...], str]]:
    return [(f"{prefix}.g", (dim,), "ones"), (f"{prefix}.b", (dim,), "zeros")]


def linear(p: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    return ag.matmul(x, p[f"{prefix}.w"]) + p[f"{prefix}.b"]


def mlp(p: dict[str, Tensor], prefix: str, x: Tensor, depth: int) -> Tensor:
    for k in range(depth):
        x = linear(p, f"{prefix}.{k}", x)
        if k < depth - 1:
            x = ag.silu(x)
    return x


def layer_norm(p: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    mu = ag.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = ag.mean(xc * xc, axis=-1, keepdims=True)
    return xc * ag.rsqrt(var + LN_EPS) * p[f"{prefix}.g"] + p[f"{prefix}.b"]


def sinusoidal(values: np.ndarray, dim: int, max_period: float) -> np.ndarray:
    """``[sin(v w_k), cos(v w_k)]`` with ``w_k`` geometric from 1 to ``max_period``."""
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(max_period), half)) if half > 1 else np.ones(half)
    ang = np.asarray(values, dtype=np.float64)[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
