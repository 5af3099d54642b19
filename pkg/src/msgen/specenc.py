"""Formula-annotated spectra and a set-attention spectrum encoder.

Each peak is embedded from its annotated formula, the neutral loss to the
precursor, its intensity and a sinusoidal code of its m/z. Self-attention
layers without positional information mix the peaks, and the final state of
the precursor peak, projected to ``out_dim``, is the condition vector. A
sigmoid fingerprint head on top of it is used for pretraining.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from msgen import autograd as ag
from msgen.autograd import Tensor
from msgen.chem.formula import ChemicalFormula, parse_formula
from msgen.chem.elements import NUM_ELEMENTS, PROTON_MASS
from msgen.chem.graph import MolecularGraph, bridges, implicit_hydrogens
from msgen.errors import ChemError, DataError, NegativeLoss, NonFiniteGradient
from msgen.fingerprint import Fingerprint
from msgen.nn import ParamSet, layer_norm, linear, linear_specs, mlp, mlp_specs, norm_specs, sinusoidal
from msgen.optim import AdamState, OptimizerConfig, adamw_step, clip_grad, cosine_lr

log = logging.getLogger(__name__)

COUNT_DIM = NUM_ELEMENTS + 1


@dataclass(frozen=True)
class Peak:
    mz: float
    intensity: float
    formula: ChemicalFormula
    precursor: bool = False

    def __post_init__(self) -> None:
        if not self.mz > 0:
            raise DataError(f"peak m/z must be positive, got {self.mz}")
        if not self.intensity >= 0:
            raise DataError(f"peak intensity must be non-negative, got {self.intensity}")


@dataclass(frozen=True)
class Spectrum:
    id: str
    precursor_formula: ChemicalFormula
    peaks: tuple[Peak, ...]
    target_smiles: str | None = None

    def __post_init__(self) -> None:
        peaks = tuple(self.peaks)
        if not peaks:
            raise DataError(f"spectrum {self.id} has no peaks")
        if sum(p.precursor for p in peaks) != 1:
            raise DataError(f"spectrum {self.id} must flag exactly one precursor peak")
        for p in peaks:
            if not self.precursor_formula.contains(p.formula):
                raise NegativeLoss(f"spectrum {self.id}: peak {p.formula} exceeds {self.precursor_formula}")
        object.__setattr__(self, "peaks", peaks)

    @property
    def precursor_index(self) -> int:
        return next(i for i, p in enumerate(self.peaks) if p.precursor)

    def normalized(self) -> Spectrum:
        """Copy with intensities scaled to a maximum of 1 (idempotent)."""
        top = max(p.intensity for p in self.peaks)
        if top <= 0:
            return self
        return replace(self, peaks=tuple(replace(p, intensity=p.intensity / top) for p in self.peaks))


def read_spectra(path: str | Path) -> list[Spectrum]:
    """Read ``>>`` blocks: header ``id, precursor formula, target SMILES or -``,
    then ``mz, intensity, formula, P|F`` peak lines.

    Peaks without a formula annotation (``-`` or empty) are dropped with a
    warning. Intensities are normalized to a maximum of 1.
    """
    spectra: list[Spectrum] = []
    header: list[str] | None = None
    peaks: list[Peak] = []
    dropped = 0

    def flush() -> None:
        nonlocal header, peaks
        if header is not None:
            sid, pf, target = header
            spectra.append(Spectrum(sid, parse_formula(pf), tuple(peaks),
                                    None if target in ("", "-") else target).normalized())
        header, peaks = None, []

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                flush()
                continue
            if line.startswith("#"):
                continue
            if line.startswith(">>"):
                flush()
                parts = line[2:].strip().split("\t")
                if len(parts) != 3:
                    raise DataError(f"{path}:{lineno}: header needs id, formula and SMILES")
                header = parts
                continue
            if header is None:
                raise DataError(f"{path}:{lineno}: peak line before a '>>' header")
            parts = line.split("\t")
            if len(parts) != 4 or parts[3] not in ("P", "F"):
                raise DataError(f"{path}:{lineno}: expected mz, intensity, formula, P|F")
            if parts[2].strip() in ("", "-"):
                dropped += 1
                continue
            try:
                peaks.append(Peak(float(parts[0]), float(parts[1]), parse_formula(parts[2]), parts[3] == "P"))
            except (ValueError, ChemError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    flush()
    if dropped:
        log.warning("%s: dropped %d unannotated peaks", path, dropped)
    return spectra


def write_spectra(path: str | Path, spectra: Iterable[Spectrum]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in spectra:
            fh.write(f">> {s.id}\t{s.precursor_formula}\t{s.target_smiles or '-'}\n")
            for p in s.peaks:
                fh.write(f"{p.mz:.6f}\t{p.intensity:.6f}\t{p.formula}\t{'P' if p.precursor else 'F'}\n")
            fh.write("\n")


@dataclass(frozen=True)
class EncoderConfig:
    hidden: int = 64
    layers: int = 2
    heads: int = 4
    mz_dim: int = 16
    out_dim: int = 256
    fp_width: int = 2048

    def __post_init__(self) -> None:
        if self.hidden % self.heads:
            raise ValueError("hidden width must be divisible by the head count")
        if self.mz_dim % 2:
            raise ValueError("mz_dim must be even")

    @property
    def feature_dim(self) -> int:
        return 2 * COUNT_DIM + 1 + self.mz_dim

    def to_dict(self) -> dict:
        return asdict(self)


def peak_features(peak: Peak, precursor: ChemicalFormula, mz_dim: int = 16) -> np.ndarray:
    """``[formula counts | neutral-loss counts | intensity | sinusoidal m/z]``.

    Count vectors cover the supported elements followed by hydrogen.

    Raises:
        NegativeLoss: the peak formula is not contained in the precursor.
    """
    loss = precursor - peak.formula
    return np.concatenate([
        peak.formula.vector(),
        loss.vector(),
        [peak.intensity],
        sinusoidal(np.array(peak.mz / 1000.0), mz_dim, 1000.0),
    ])


def encoder_specs(cfg: EncoderConfig) -> list:
    h = cfg.hidden
    specs = mlp_specs("embed", [cfg.feature_dim, h, h])
    for l in range(cfg.layers):
        p = f"layer{l}"
        for name in ("q", "k", "v", "o"):
            specs += linear_specs(f"{p}.{name}", h, h)
        specs += norm_specs(f"{p}.norm1", h)
        specs += mlp_specs(f"{p}.ffn", [h, 2 * h, h])
        specs += norm_specs(f"{p}.norm2", h)
    specs += linear_specs("proj", h, cfg.out_dim)
    specs += linear_specs("fp_head", cfg.out_dim, cfg.fp_width)
    return specs


class SpectrumEncoder:
    def __init__(self, config: EncoderConfig, params: ParamSet | None = None):
        self.config = config
        self.params = params if params is not None else ParamSet(encoder_specs(config))

    @classmethod
    def create(cls, config: EncoderConfig, rng: np.random.Generator) -> SpectrumEncoder:
        enc = cls(config)
        enc.params.initialize(rng)
        return enc

    def features(self, s: Spectrum) -> np.ndarray:
        return np.stack([peak_features(p, s.precursor_formula, self.config.mz_dim) for p in s.peaks])

    def embed_peaks(self, p: dict[str, Tensor], feats: np.ndarray) -> Tensor:
        return mlp(p, "embed", Tensor(feats), 2)

    def forward(self, p: dict[str, Tensor], s: Spectrum) -> Tensor:
        """Condition vector ``(out_dim,)`` for one spectrum."""
        cfg = self.config
        x = self.embed_peaks(p, self.features(s))
        P, h, H = len(s.peaks), cfg.hidden, cfg.heads
        dh = h // H
        for l in range(cfg.layers):
            pre = f"layer{l}"

            def heads(z: Tensor) -> Tensor:
                return z.reshape(P, H, dh).transpose(1, 0, 2)

            q, k, v = (heads(linear(p, f"{pre}.{nm}", x)) for nm in ("q", "k", "v"))
            attn = ag.softmax(ag.matmul(q, k.transpose(0, 2, 1)) * (1.0 / np.sqrt(dh)), axis=-1)
            o = ag.matmul(attn, v).transpose(1, 0, 2).reshape(P, h)
            x = layer_norm(p, f"{pre}.norm1", x + linear(p, f"{pre}.o", o))
            x = layer_norm(p, f"{pre}.norm2", x + mlp(p, f"{pre}.ffn", x, 2))
        return linear(p, "proj", ag.index(x, s.precursor_index))

    def fingerprint_logits(self, p: dict[str, Tensor], y: Tensor) -> Tensor:
        return linear(p, "fp_head", y)

    def encode(self, s: Spectrum) -> np.ndarray:
        with ag.no_grad():
            return self.forward(self.params.tensors(), s).data

    def predict_fingerprint(self, s: Spectrum) -> np.ndarray:
        with ag.no_grad():
            p = self.params.tensors()
            return ag.sigmoid(self.fingerprint_logits(p, self.forward(p, s))).data


def embed_peak(encoder: SpectrumEncoder, peak: Peak, precursor: ChemicalFormula) -> np.ndarray:
    """Embedding of a single peak before any attention layer."""
    feats = peak_features(peak, precursor, encoder.config.mz_dim)[None]
    with ag.no_grad():
        return encoder.embed_peaks(encoder.params.tensors(), feats).data[0]


def encode_spectrum(encoder: SpectrumEncoder, s: Spectrum) -> np.ndarray:
    return encoder.encode(s)


def bce_from_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean per-bit binary cross-entropy, ``softplus(z) - t z``."""
    return ag.mean(ag.softplus(logits) - logits * targets)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def fingerprint_loss_and_grad(
    encoder: SpectrumEncoder, batch: Sequence[tuple[Spectrum, Fingerprint]]
) -> tuple[float, np.ndarray]:
    """Mean per-bit BCE over a batch and its gradient w.r.t. the encoder parameters."""
    encoder.params.zero_grad()
    p = encoder.params.tensors()
    total = None
    for s, fp in batch:
        z = encoder.fingerprint_logits(p, encoder.forward(p, s))
        l = bce_from_logits(z, fp.as_float())
        total = l if total is None else total + l
    total = total * (1.0 / len(batch))
    ag.backward(total)
    grad = encoder.params.grad.copy()
    if not np.isfinite(grad).all():
        raise NonFiniteGradient("encoder gradient is not finite")
    return float(total.data), grad


@dataclass
class PretrainResult:
    losses: list[float] = field(default_factory=list)
    cosine: float = 0.0


def pretrain_encoder(
    encoder: SpectrumEncoder,
    data: Sequence[tuple[Spectrum, Fingerprint]],
    steps: int,
    opt: OptimizerConfig,
    rng: np.random.Generator,
    batch_size: int = 32,
    validation: Sequence[tuple[Spectrum, Fingerprint]] | None = None,
) -> PretrainResult:
    """Train the encoder and fingerprint head to predict fingerprint bits.

    Reports mean cosine similarity between predicted bit probabilities and the
    true bits on ``validation`` (the training data when not given).
    """
    widths = {fp.width for _, fp in data}
    if widths != {encoder.config.fp_width}:
        raise DataError(f"fingerprint widths {sorted(widths)} do not match the head ({encoder.config.fp_width})")
    state = AdamState.zeros(encoder.params.size)
    result = PretrainResult()
    for step in range(steps):
        if len(data) <= batch_size:
            batch = list(data)
        else:
            batch = [data[i] for i in sorted(rng.choice(len(data), batch_size, replace=False))]
        loss, grad = fingerprint_loss_and_grad(encoder, batch)
        if opt.clip_norm:
            clip_grad(grad, opt.clip_norm)
        lr = cosine_lr(step, steps, opt.lr, opt.lr_min)
        adamw_step(encoder.params.flat, grad, state, lr, opt.weight_decay, opt.betas, opt.eps)
        result.losses.append(loss)
    val = validation if validation is not None else data
    result.cosine = float(np.mean([cosine_similarity(encoder.predict_fingerprint(s), fp.as_float()) for s, fp in val]))
    return result


def synthetic_spectrum(
    g: MolecularGraph,
    sid: str,
    rng: np.random.Generator,
    target_smiles: str | None = None,
    max_fragments: int = 12,
) -> Spectrum:
    """A spectrum whose fragment peaks are true subformulae of ``g``.

    Fragments are the pieces left after cutting one or two acyclic bonds;
    each piece keeps the implicit hydrogens its atoms carry in ``g``.
    """
    hs = implicit_hydrogens(g)
    precursor = g.formula(sum(max(h, 0) for h in hs))
    adj = [g.neighbors(i) for i in range(g.n)]
    cuts = sorted(bridges(g.n, adj))
    pieces: set[frozenset] = set()

    def components(removed: set) -> list[frozenset]:
        seen, out = set(), []
        for s0 in range(g.n):
            if s0 in seen:
                continue
            comp, stack = {s0}, [s0]
            seen.add(s0)
            while stack:
                u = stack.pop()
                for v in adj[u]:
                    if (min(u, v), max(u, v)) in removed or v in seen:
                        continue
                    seen.add(v)
                    comp.add(v)
                    stack.append(v)
            out.append(frozenset(comp))
        return out

    for a in range(len(cuts)):
        pieces.update(components({cuts[a]}))
        for b in range(a + 1, len(cuts)):
            pieces.update(components({cuts[a], cuts[b]}))
    frags = sorted(pieces, key=lambda c: (len(c), sorted(c)))
    frags = [c for c in frags if len(c) < g.n]
    if len(frags) > max_fragments:
        keep = rng.choice(len(frags), max_fragments, replace=False)
        frags = [frags[i] for i in sorted(keep)]
    formulas = {}
    for c in frags:
        counts: dict[str, int] = {}
        for i in c:
            counts[g.atoms[i]] = counts.get(g.atoms[i], 0) + 1
        f = ChemicalFormula(counts, sum(max(hs[i], 0) for i in c))
        formulas[str(f)] = f
    peaks = [Peak(precursor.mass() + PROTON_MASS, float(rng.uniform(0.1, 1.0)), precursor, True)]
    for key in sorted(formulas):
        f = formulas[key]
        peaks.append(Peak(f.mass() + PROTON_MASS, float(rng.uniform(0.05, 1.0)), f, False))
    return Spectrum(sid, precursor, tuple(peaks), target_smiles).normalized()
