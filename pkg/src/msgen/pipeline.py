"""Training, sampling and evaluation stages behind the command-line tool.

Every stage takes a :class:`RunConfig` and an output directory, writes its
artifacts there and finishes by atomically writing ``<stage>.manifest.json``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from multiprocessing import get_context
from pathlib import Path
from typing import Any

import numpy as np

from msgen import autograd as ag
from msgen.autograd import Tensor
from msgen.checkpoint import Checkpoint, load_checkpoint, round_f32, save_checkpoint
from msgen.chem.canon import canonical_key
from msgen.chem.formula import ChemicalFormula, parse_formula
from msgen.chem.graph import MolecularGraph, implicit_hydrogens, is_valid
from msgen.chem.io import read_molecule_records, read_molecules
from msgen.chem.isomorphism import is_isomorphic
from msgen.chem.smiles import parse_smiles, write_smiles
from msgen.config import RunConfig
from msgen.denoiser import DenoiserConfig, GraphTransformer, TrainItem, batch_loss, loss_and_grad, noise_batch, param_specs
from msgen.diffusion import NoiseSchedule, TransitionModel, build_marginal, sample_molecules
from msgen.errors import ChemError, ConfigError, DataError, EmptyAfterExclusion, MissingTruth, NonFiniteError, NonFiniteGradient
from msgen.evalmetrics import MetricsReport, evaluate_spectrum
from msgen.fingerprint import Fingerprint, morgan_fingerprint
from msgen.nn import ParamSet
from msgen.optim import AdamState, OptimizerConfig, adamw_step, clip_grad, cosine_lr
from msgen.specenc import EncoderConfig, Spectrum, SpectrumEncoder, encoder_specs, pretrain_encoder, read_spectra

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- manifests

def content_hash(path: str | Path) -> str:
    """Git blob hash (SHA-1 over ``b"blob <size>\\0" + content``)."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict[str, Any]
    config_hash: str
    seed: int
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    wall_clock_s: float = 0.0
    metrics: dict[str, Any] = field(default_factory=dict)

    def write(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / f"{self.command}.manifest.json"
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, path)
        return path

    @classmethod
    def read(cls, path: str | Path) -> RunManifest:
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


class _Run:
    """Collects inputs/outputs of one stage and writes the manifest at the end."""

    def __init__(self, command: str, cfg: RunConfig, out_dir: str | Path):
        self.command, self.cfg = command, cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.t0 = time.time()
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        self.metrics: dict[str, Any] = {}

    def input(self, path: Path | None) -> Path | None:
        if path is not None:
            self.inputs[str(path)] = content_hash(path)
        return path

    def output(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(p)
        return p

    def finish(self) -> RunManifest:
        man = RunManifest(
            self.command, self.cfg.snapshot(), self.cfg.hash(), self.cfg.seed, self.inputs,
            {p.name: content_hash(p) for p in self.outputs if p.exists()},
            round(time.time() - self.t0, 3), self.metrics,
        )
        man.write(self.out)
        return man


# ---------------------------------------------------------------- datasets

def write_dataset(path: str | Path, rows: Sequence[tuple[str, MolecularGraph, Fingerprint]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for mid, g, fp in rows:
            fh.write(f"{mid}\t{write_smiles(g)}\t{fp.to_hex()}\n")


def read_dataset(path: str | Path, radius: int = 2) -> list[tuple[str, MolecularGraph, Fingerprint]]:
    """Pretraining pairs, ``<id>\\t<SMILES>\\t<hex fingerprint>`` per line."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected id, SMILES, fingerprint")
            try:
                rows.append((parts[0], parse_smiles(parts[1]), Fingerprint.from_hex(parts[2], radius)))
            except (ChemError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty dataset")
    return rows


class IsomorphismIndex:
    """Set of graphs queried by canonical key, with isomorphism confirmation."""

    def __init__(self, graphs: Sequence[MolecularGraph] = ()):
        self._by_key: dict[bytes, list[MolecularGraph]] = {}
        for g in graphs:
            self.add(g)

    def add(self, g: MolecularGraph) -> None:
        self._by_key.setdefault(canonical_key(g), []).append(g)

    def __contains__(self, g: MolecularGraph) -> bool:
        return any(is_isomorphic(g, h) for h in self._by_key.get(canonical_key(g), ()))


def build_dataset(
    corpus: Sequence[tuple[str, MolecularGraph]],
    exclusion: Sequence[MolecularGraph] = (),
    width: int = 2048,
    radius: int = 2,
) -> tuple[list[tuple[str, MolecularGraph, Fingerprint]], int]:
    """Fingerprint every corpus molecule not isomorphic to an exclusion molecule.

    Returns the kept rows and the number excluded.

    Raises:
        EmptyAfterExclusion: nothing is left.
    """
    index = IsomorphismIndex(exclusion)
    rows, excluded = [], 0
    for mid, g in corpus:
        if g in index:
            excluded += 1
            continue
        rows.append((mid, g, morgan_fingerprint(g, width, radius)))
    log.info("excluded %d of %d molecules", excluded, len(corpus))
    if not rows:
        raise EmptyAfterExclusion("no molecules left after exclusion")
    return rows, excluded


def run_build_dataset(cfg: RunConfig, out_dir: str | Path) -> RunManifest:
    run = _Run("build-dataset", cfg, out_dir)
    corpus = read_molecules(run.input(cfg.path("corpus")))
    excl_path = run.input(cfg.path("exclusion", required=False))
    exclusion = [g for _, g in read_molecules(excl_path)] if excl_path else []
    rows, excluded = build_dataset(corpus, exclusion, cfg["fingerprint.width"], cfg["fingerprint.radius"])
    write_dataset(run.output("dataset.tsv"), rows)
    run.metrics.update(kept=len(rows), excluded=excluded)
    return run.finish()


# ---------------------------------------------------------------- models <-> checkpoints

def _schedule(cfg: RunConfig) -> NoiseSchedule:
    return NoiseSchedule.cosine(cfg["diffusion.T"], cfg["diffusion.epsilon"])


def _transition(cfg: RunConfig, graphs: Sequence[MolecularGraph]) -> TransitionModel:
    prior = cfg["diffusion.prior"]
    m = build_marginal(list(graphs)) if prior == "marginal" else build_marginal(prior)
    return TransitionModel(m, _schedule(cfg))


def _diffusion_block(tm: TransitionModel, eps: float) -> dict[str, Any]:
    return {"T": tm.T, "epsilon": eps, "marginal": [float(x) for x in tm.m]}


def _load_decoder(ckpt: Checkpoint) -> tuple[GraphTransformer, TransitionModel]:
    dcfg = DenoiserConfig(**ckpt.config["denoiser"])
    diff = ckpt.config["diffusion"]
    tm = TransitionModel(np.array(diff["marginal"]), NoiseSchedule.cosine(diff["T"], diff["epsilon"]))
    params = ParamSet(param_specs(dcfg)).load(ckpt.params["decoder"])
    return GraphTransformer(dcfg, tm.T, params), tm


def _load_encoder(ckpt: Checkpoint) -> SpectrumEncoder:
    ecfg = EncoderConfig(**ckpt.config["encoder"])
    return SpectrumEncoder(ecfg, ParamSet(encoder_specs(ecfg)).load(ckpt.params["encoder"]))


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


# ---------------------------------------------------------------- training loop

def train_loop(
    steps: int,
    start: int,
    step_fn: Callable[[int], float],
    save_fn: Callable[[int], None],
    every: int,
    loss_path: Path,
) -> list[float]:
    """Run ``step_fn(step)`` for ``step`` in ``[start, steps)``.

    Checkpoints after every ``every`` steps and at the end. On a non-finite
    gradient or update the current (last good) state is saved and the error
    re-raised. The loss curve is appended to ``loss_path``.
    """
    losses = []
    mode = "a" if start > 0 and loss_path.exists() else "w"
    with open(loss_path, mode, encoding="utf-8") as fh:
        if mode == "w":
            fh.write("step\tloss\n")
        for step in range(start, steps):
            try:
                loss = step_fn(step)
            except NonFiniteError:
                save_fn(step)
                raise
            losses.append(loss)
            fh.write(f"{step}\t{loss:.10g}\n")
            if every > 0 and (step + 1) % every == 0 and step + 1 < steps:
                fh.flush()
                save_fn(step + 1)
    save_fn(steps)
    return losses


def _pick(rng: np.random.Generator, total: int, batch: int) -> list[int]:
    if total <= batch:
        return list(range(total))
    return sorted(int(i) for i in rng.choice(total, batch, replace=False))


def run_pretrain_decoder(cfg: RunConfig, out_dir: str | Path) -> RunManifest:
    """Train the denoiser on fingerprint-molecule pairs."""
    run = _Run("pretrain-decoder", cfg, out_dir)
    rows = read_dataset(run.input(cfg.path("dataset")), cfg["fingerprint.radius"])
    dcfg = cfg.denoiser()
    widths = {fp.width for _, _, fp in rows}
    if widths != {dcfg.cond_dim}:
        raise ConfigError(f"denoiser.cond_dim={dcfg.cond_dim} but dataset fingerprints have width {sorted(widths)}")
    items = [TrainItem(g, fp.as_float()) for _, g, fp in rows]
    opt = cfg.optimizer()
    steps, batch, reps = cfg["train.steps"], cfg["train.batch"], cfg["train.replicas"]
    resume = run.input(cfg.path("resume", required=False))
    if resume:
        ckpt = load_checkpoint(resume)
        if ckpt.kind != "decoder":
            raise ConfigError(f"cannot resume decoder training from a {ckpt.kind} checkpoint")
        model, tm = _load_decoder(ckpt)
        state = ckpt.optimizer or AdamState.zeros(model.params.size)
        rng, start = _restore_rng(ckpt.extra["rng"]), ckpt.step
    else:
        tm = _transition(cfg, [g for _, g, _ in rows])
        rng = np.random.default_rng(cfg.seed)
        model = GraphTransformer.create(dcfg, tm.T, rng)
        state, start = AdamState.zeros(model.params.size), 0
    ckpt_path = run.output("decoder.ckpt")
    model_cfg = {"denoiser": dcfg.to_dict(), "diffusion": _diffusion_block(tm, cfg["diffusion.epsilon"]),
                 "fingerprint": {"width": dcfg.cond_dim, "radius": cfg["fingerprint.radius"]}}
    if resume:
        model_cfg["diffusion"] = ckpt.config["diffusion"]

    def step_fn(step: int) -> float:
        chosen = [items[i] for i in _pick(rng, len(items), batch)] * reps
        loss, grad = loss_and_grad(model, chosen, tm, rng)
        if opt.clip_norm:
            clip_grad(grad, opt.clip_norm)
        adamw_step(model.params.flat, grad, state, cosine_lr(step, steps, opt.lr, opt.lr_min),
                   opt.weight_decay, opt.betas, opt.eps)
        return loss

    def save_fn(step: int) -> None:
        for arr in (model.params.flat, state.m, state.v):
            round_f32(arr)
        save_checkpoint(ckpt_path, Checkpoint("decoder", model_cfg, {"decoder": model.params.flat}, step,
                                              state, {"rng": _rng_state(rng)}))

    losses = train_loop(steps, start, step_fn, save_fn, cfg["train.checkpoint_every"], run.output("decoder_loss.tsv"))
    run.metrics.update(steps=steps, final_loss=losses[-1] if losses else None)
    return run.finish()


def _labeled_spectra(path: Path) -> list[tuple[Spectrum, MolecularGraph]]:
    out = []
    for s in read_spectra(path):
        if s.target_smiles is None:
            raise DataError(f"spectrum {s.id} has no target SMILES")
        try:
            out.append((s, parse_smiles(s.target_smiles)))
        except ChemError as exc:
            raise DataError(f"spectrum {s.id}: {exc}") from exc
    if not out:
        raise DataError(f"{path}: no spectra")
    return out


def run_pretrain_encoder(cfg: RunConfig, out_dir: str | Path) -> RunManifest:
    """Train the spectrum encoder to predict fingerprints of the target molecules."""
    run = _Run("pretrain-encoder", cfg, out_dir)
    data = _labeled_spectra(run.input(cfg.path("spectra")))
    ecfg = cfg.encoder()
    pairs = [(s, morgan_fingerprint(g, ecfg.fp_width, cfg["fingerprint.radius"])) for s, g in data]
    rng = np.random.default_rng(cfg.seed)
    enc = SpectrumEncoder.create(ecfg, rng)
    res = pretrain_encoder(enc, pairs, cfg["train.steps"], cfg.optimizer(), rng, cfg["train.batch"])
    with open(run.output("encoder_loss.tsv"), "w", encoding="utf-8") as fh:
        fh.write("step\tloss\n")
        for i, l in enumerate(res.losses):
            fh.write(f"{i}\t{l:.10g}\n")
    round_f32(enc.params.flat)
    save_checkpoint(run.output("encoder.ckpt"),
                    Checkpoint("encoder", {"encoder": ecfg.to_dict()}, {"encoder": enc.params.flat}, len(res.losses)))
    run.metrics.update(final_loss=res.losses[-1] if res.losses else None, cosine=res.cosine)
    return run.finish()


# ---------------------------------------------------------------- finetuning

def joint_loss_and_grad(
    encoder: SpectrumEncoder,
    decoder: GraphTransformer,
    batch: Sequence[tuple[Spectrum, MolecularGraph]],
    tm: TransitionModel,
    rng: np.random.Generator,
    freeze_encoder: bool = False,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Diffusion loss with ``y`` produced by the encoder; returns (loss, enc grad, dec grad)."""
    encoder.params.zero_grad()
    decoder.params.zero_grad()
    pe, pd = encoder.params.tensors(), decoder.params.tensors()
    items = []
    for s, g in batch:
        y = encoder.forward(pe, s)
        items.append(TrainItem(g, Tensor(y.data) if freeze_encoder else y))
    noised = noise_batch(items, tm, rng)
    loss = batch_loss(decoder, pd, items, noised)
    ag.backward(loss)
    ge, gd = encoder.params.grad.copy(), decoder.params.grad.copy()
    if not (np.isfinite(ge).all() and np.isfinite(gd).all()):
        raise NonFiniteGradient("finetuning gradient is not finite")
    return float(loss.data), ge, gd


def run_finetune(cfg: RunConfig, out_dir: str | Path) -> RunManifest:
    """Train encoder and decoder jointly on labeled spectra with the diffusion loss.

    Without ``paths.encoder`` the encoder starts from random weights.
    ``train.freeze_encoder`` keeps the encoder fixed.
    """
    run = _Run("finetune", cfg, out_dir)
    data = _labeled_spectra(run.input(cfg.path("spectra")))
    rng = np.random.default_rng(cfg.seed)
    dck = load_checkpoint(run.input(cfg.path("decoder")))
    if dck.kind != "decoder":
        raise ConfigError(f"paths.decoder holds a {dck.kind} checkpoint")
    decoder, tm = _load_decoder(dck)
    enc_path = run.input(cfg.path("encoder", required=False))
    encoder = _load_encoder(load_checkpoint(enc_path)) if enc_path else SpectrumEncoder.create(cfg.encoder(), rng)
    if encoder.config.out_dim != decoder.config.cond_dim:
        raise ConfigError(f"encoder out_dim {encoder.config.out_dim} != decoder cond_dim {decoder.config.cond_dim}")
    freeze = cfg["train.freeze_encoder"]
    opt = cfg.optimizer()
    steps, batch = cfg["train.steps"], cfg["train.batch"]
    se, sd = AdamState.zeros(encoder.params.size), AdamState.zeros(decoder.params.size)
    ckpt_path = run.output("model.ckpt")
    model_cfg = {"encoder": encoder.config.to_dict(), "denoiser": decoder.config.to_dict(),
                 "diffusion": dck.config["diffusion"]}
    first_enc_norm: list[float] = []

    def step_fn(step: int) -> float:
        chosen = [data[i] for i in _pick(rng, len(data), batch)]
        loss, ge, gd = joint_loss_and_grad(encoder, decoder, chosen, tm, rng, freeze)
        if not first_enc_norm:
            first_enc_norm.append(float(np.linalg.norm(ge)))
        if opt.clip_norm:
            total = float(np.sqrt(np.sum(gd * gd) + (0.0 if freeze else np.sum(ge * ge))))
            if total > opt.clip_norm:
                gd *= opt.clip_norm / total
                ge *= opt.clip_norm / total
        lr = cosine_lr(step, steps, opt.lr, opt.lr_min)
        adamw_step(decoder.params.flat, gd, sd, lr, opt.weight_decay, opt.betas, opt.eps)
        if not freeze:
            adamw_step(encoder.params.flat, ge, se, lr, opt.weight_decay, opt.betas, opt.eps)
        return loss

    def save_fn(step: int) -> None:
        for arr in (encoder.params.flat, decoder.params.flat):
            round_f32(arr)
        save_checkpoint(ckpt_path, Checkpoint(
            "joint", model_cfg, {"encoder": encoder.params.flat, "decoder": decoder.params.flat}, step))

    losses = train_loop(steps, 0, step_fn, save_fn, cfg["train.checkpoint_every"], run.output("finetune_loss.tsv"))
    run.metrics.update(final_loss=losses[-1] if losses else None,
                       encoder_grad_norm_step1=first_enc_norm[0] if first_enc_norm else None)
    return run.finish()


# ---------------------------------------------------------------- sampling

@dataclass(frozen=True)
class SampleJob:
    id: str
    formulas: tuple[ChemicalFormula, ...]
    y: np.ndarray


def split_count(count: int, parts: int) -> list[int]:
    """Split ``count`` samples over ``parts`` formulas; the first ones take the remainder."""
    if parts < 1:
        raise ValueError("need at least one formula")
    base, rem = divmod(count, parts)
    return [base + (i < rem) for i in range(parts)]


def read_formula_candidates(path: str | Path) -> dict[str, list[ChemicalFormula]]:
    """``<id>\\t<formula>[,<formula>...]`` per line."""
    out: dict[str, list[ChemicalFormula]] = {}
    for mid, text in read_molecule_records(path):
        try:
            out[mid] = [parse_formula(f.strip()) for f in text.split(",") if f.strip()]
        except ChemError as exc:
            raise DataError(f"{path}: {mid}: {exc}") from exc
    return out


def hydrogen_delta(g: MolecularGraph, formula: ChemicalFormula) -> int:
    """Implicit hydrogens of ``g`` minus the formula's hydrogen count."""
    return int(sum(implicit_hydrogens(g))) - formula.hydrogens


def sample_job(
    job: SampleJob, model: GraphTransformer, tm: TransitionModel, count: int, seed: int, index: int
) -> list[tuple[str, str, str, int, int]]:
    """Rows ``(id, formula, SMILES, valid, h_delta)`` for one spectrum."""
    rng = np.random.default_rng([seed, index])
    rows = []
    for formula, c in zip(job.formulas, split_count(count, len(job.formulas))):
        if c == 0:
            continue
        if formula.heavy_atoms < 2:
            raise DataError(f"{job.id}: formula {formula} has fewer than two heavy atoms")
        for g in sample_molecules(formula, job.y, model, tm, rng, c):
            ok = is_valid(g)
            rows.append((job.id, str(formula), write_smiles(g, check=False), int(bool(ok)), hydrogen_delta(g, formula)))
    return rows


_WORKER: dict[str, Any] = {}


def _worker_init(state: dict[str, Any]) -> None:
    _WORKER.update(state)


def _worker_sample(arg: tuple[int, SampleJob]):
    idx, job = arg
    return sample_job(job, _WORKER["model"], _WORKER["tm"], _WORKER["count"], _WORKER["seed"], idx)


def _worker_eval(arg):
    sid, samples, truth = arg
    return evaluate_spectrum(sid, samples, truth)


def parallel_map(fn: Callable, args: Sequence, workers: int, state: dict[str, Any] | None = None) -> list:
    """Ordered map; with ``workers > 1`` runs in forked processes."""
    state = state or {}
    if workers <= 1 or len(args) <= 1:
        _worker_init(state)
        return [fn(a) for a in args]
    with ProcessPoolExecutor(workers, mp_context=get_context("fork"), initializer=_worker_init,
                             initargs=(state,)) as ex:
        return list(ex.map(fn, args))


def sampling_jobs(cfg: RunConfig, ckpt: Checkpoint) -> tuple[list[SampleJob], list[Path]]:
    """Conditions for sampling: spectra for joint models, fingerprints for decoders."""
    cands_path = cfg.path("formulae", required=False)
    cands = read_formula_candidates(cands_path) if cands_path else {}
    inputs = [p for p in [cands_path] if p]
    jobs = []
    if ckpt.kind == "joint":
        encoder = _load_encoder(ckpt)
        path = cfg.path("spectra")
        inputs.append(path)
        for s in read_spectra(path):
            jobs.append(SampleJob(s.id, tuple(cands.get(s.id, [s.precursor_formula])), encoder.encode(s)))
    elif ckpt.kind == "decoder":
        path = cfg.path("dataset")
        inputs.append(path)
        for mid, g, fp in read_dataset(path, ckpt.config["fingerprint"]["radius"]):
            formula = g.formula(int(sum(implicit_hydrogens(g))))
            jobs.append(SampleJob(mid, tuple(cands.get(mid, [formula])), fp.as_float()))
    else:
        raise ConfigError(f"cannot sample from a {ckpt.kind} checkpoint")
    return jobs, inputs


SAMPLES_HEADER = "#id\tformula\tSMILES\tvalid\th_delta\n"


def run_sample(cfg: RunConfig, out_dir: str | Path, workers: int = 1) -> RunManifest:
    run = _Run("sample", cfg, out_dir)
    ckpt = load_checkpoint(run.input(cfg.path("model")))
    model, tm = _load_decoder(ckpt)
    jobs, inputs = sampling_jobs(cfg, ckpt)
    for p in inputs:
        run.input(p)
    count = cfg["sample.count"]
    state = {"model": model, "tm": tm, "count": count, "seed": cfg.seed}
    results = parallel_map(_worker_sample, list(enumerate(jobs)), workers, state)
    rows = [r for rs in results for r in rs]
    with open(run.output("samples.tsv"), "w", encoding="utf-8") as fh:
        fh.write(SAMPLES_HEADER)
        for r in rows:
            fh.write("\t".join(str(v) for v in r) + "\n")
    run.metrics.update(spectra=len(jobs), samples=len(rows), valid=sum(r[3] for r in rows))
    return run.finish()


# ---------------------------------------------------------------- evaluation

def read_samples(path: str | Path) -> dict[str, list[MolecularGraph | None]]:
    """Samples grouped by id in file order; unparseable SMILES become ``None``."""
    out: dict[str, list[MolecularGraph | None]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 columns")
            try:
                g = parse_smiles(parts[2])
            except ChemError:
                g = None
            out.setdefault(parts[0], []).append(g)
    return out


def read_truth(path: str | Path) -> dict[str, MolecularGraph]:
    """Truth molecules from a spectrum file, a dataset file or a molecule file."""
    with open(path, encoding="utf-8") as fh:
        first = next((l for l in fh if l.strip() and not l.startswith("#")), "")
    if first.startswith(">>"):
        out = {}
        for s in read_spectra(path):
            if s.target_smiles is not None:
                out[s.id] = parse_smiles(s.target_smiles)
        return out
    return {mid: parse_smiles(smi) for mid, smi in read_molecule_records(path)}


def _invalid_placeholder() -> MolecularGraph:
    return MolecularGraph(("C", "C"), np.zeros((2, 2), dtype=np.int8))


def check_manifest(samples_path: Path, cfg: RunConfig) -> RunManifest:
    """Refuse samples whose run manifest is missing or was made with another config."""
    man_path = samples_path.parent / "sample.manifest.json"
    if not man_path.exists():
        raise DataError(f"no sample manifest next to {samples_path}")
    man = RunManifest.read(man_path)
    if man.config_hash != cfg.hash():
        raise DataError("samples were produced under a different configuration")
    digest = man.outputs.get(samples_path.name)
    if digest is not None and digest != content_hash(samples_path):
        raise DataError(f"{samples_path} does not match its manifest")
    return man


def evaluate_samples(
    samples: dict[str, list[MolecularGraph | None]], truth: dict[str, MolecularGraph], workers: int = 1
) -> MetricsReport:
    args = []
    for sid, gs in samples.items():
        if sid not in truth:
            raise MissingTruth(f"no truth molecule for {sid}")
        args.append((sid, [g if g is not None else _invalid_placeholder() for g in gs], truth[sid]))
    return MetricsReport(parallel_map(_worker_eval, args, workers))


def run_evaluate(cfg: RunConfig, out_dir: str | Path, samples_path: str | Path, workers: int = 1) -> RunManifest:
    run = _Run("evaluate", cfg, out_dir)
    samples_path = Path(samples_path)
    check_manifest(samples_path, cfg)
    run.input(samples_path)
    truth = read_truth(run.input(cfg.path("truth")))
    report = evaluate_samples(read_samples(samples_path), truth, workers)
    report.write(run.output("metrics.tsv"), run.output("summary.tsv"))
    run.metrics.update(report.summary())
    return run.finish()
