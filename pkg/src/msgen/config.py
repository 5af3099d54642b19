"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment, no nesting. Keys are dotted
names from a fixed table; anything else is rejected. ``seed`` is mandatory.
Keys under ``paths.`` name input files, are resolved relative to the config
file and must exist when the file is loaded.
"""

from __future__ import annotations

import hashlib
import json
from collections.abc import Mapping
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from msgen.denoiser import DenoiserConfig
from msgen.diffusion import PRIOR_KINDS
from msgen.errors import ConfigError
from msgen.optim import OptimizerConfig
from msgen.specenc import EncoderConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _prior(text: str) -> str:
    if text not in PRIOR_KINDS:
        raise ValueError(f"prior must be one of {', '.join(PRIOR_KINDS)}")
    return text


_DEN = DenoiserConfig()
_ENC = EncoderConfig()
_OPT = OptimizerConfig()

# key -> (parser, default); a default of None means "unset"
SCHEMA: dict[str, tuple[Any, Any]] = {
    "seed": (int, None),
    "diffusion.T": (int, 500),
    "diffusion.epsilon": (float, 0.008),
    "diffusion.prior": (_prior, "marginal"),
    "fingerprint.width": (int, 2048),
    "fingerprint.radius": (int, 2),
    "train.lr": (float, _OPT.lr),
    "train.lr_min": (float, _OPT.lr_min),
    "train.weight_decay": (float, _OPT.weight_decay),
    "train.clip_norm": (float, 1.0),
    "train.steps": (int, 1000),
    "train.batch": (int, 32),
    "train.replicas": (int, 1),
    "train.checkpoint_every": (int, 500),
    "train.freeze_encoder": (_bool, False),
    "sample.count": (int, 100),
    "paths.corpus": (str, None),
    "paths.exclusion": (str, None),
    "paths.dataset": (str, None),
    "paths.spectra": (str, None),
    "paths.truth": (str, None),
    "paths.formulae": (str, None),
    "paths.decoder": (str, None),
    "paths.encoder": (str, None),
    "paths.model": (str, None),
    "paths.resume": (str, None),
}
for f in fields(DenoiserConfig):
    SCHEMA[f"denoiser.{f.name}"] = (_bool if f.type in ("bool", bool) else int, getattr(_DEN, f.name))
for f in fields(EncoderConfig):
    SCHEMA[f"encoder.{f.name}"] = (int, getattr(_ENC, f.name))


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=dict)
    source: Path | None = None

    def __getitem__(self, key: str) -> Any:
        if key not in SCHEMA:
            raise KeyError(key)
        return self.values.get(key, SCHEMA[key][1])

    def get(self, key: str, default: Any = None) -> Any:
        val = self[key]
        return default if val is None else val

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def path(self, key: str, required: bool = True) -> Path | None:
        val = self[f"paths.{key}"]
        if val is None:
            if required:
                raise ConfigError(f"paths.{key} is required for this command")
            return None
        return Path(val)

    def denoiser(self) -> DenoiserConfig:
        kw = {f.name: self[f"denoiser.{f.name}"] for f in fields(DenoiserConfig)}
        return _build(DenoiserConfig, kw)

    def encoder(self) -> EncoderConfig:
        kw = {f.name: self[f"encoder.{f.name}"] for f in fields(EncoderConfig)}
        return _build(EncoderConfig, kw)

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(
            lr=self["train.lr"],
            lr_min=self["train.lr_min"],
            weight_decay=self["train.weight_decay"],
            clip_norm=self["train.clip_norm"],
        )

    def with_seed(self, seed: int) -> RunConfig:
        vals = dict(self.values)
        vals["seed"] = int(seed)
        return RunConfig(vals, self.source)

    def snapshot(self) -> dict[str, Any]:
        """Every key with its effective value, sorted."""
        return {k: self[k] for k in sorted(SCHEMA)}

    def hash(self) -> str:
        """SHA-256 of the effective model and training settings.

        The seed and input paths are left out so stages run with per-stage
        config files can still be matched.
        """
        snap = {k: v for k, v in self.snapshot().items() if k != "seed" and not k.startswith("paths.")}
        return hashlib.sha256(json.dumps(snap, sort_keys=True).encode()).hexdigest()


def _build(cls, kw):
    try:
        return cls(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(text: str, base: Path | None = None, check_paths: bool = True) -> RunConfig:
    """Parse config text. Raises ConfigError on syntax, unknown or bad keys, missing seed."""
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            parsed = SCHEMA[key][0](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
        if key.startswith("paths."):
            p = Path(parsed)
            if base is not None and not p.is_absolute():
                p = base / p
            if check_paths and not p.exists():
                raise ConfigError(f"line {lineno}: {key} does not exist: {p}")
            parsed = str(p)
        values[key] = parsed
    if "seed" not in values:
        raise ConfigError("seed is mandatory")
    cfg = RunConfig(values, None)
    cfg.denoiser(), cfg.encoder()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = parse_config(text, base=path.parent)
    cfg.source = path
    return cfg


def config_from_mapping(values: Mapping[str, Any], base: Path | None = None) -> RunConfig:
    """Build a config from a dict (values may be typed or strings)."""
    text = "\n".join(f"{k} = {_fmt(v)}" for k, v in values.items())
    return parse_config(text, base=base)


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(cfg.values.items()))
