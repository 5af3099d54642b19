"""Ranking of sampled molecules and the top-k evaluation metrics.

Samples are filtered for validity, grouped by isomorphism class and ranked
by frequency (ties broken by canonical key bytes). Accuracy uses typed graph
isomorphism; similarity uses Tanimoto on 2048-bit radius-2 fingerprints;
distance uses exact MCES.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from msgen.chem.canon import canonical_key
from msgen.chem.graph import MolecularGraph, is_valid
from msgen.chem.isomorphism import is_isomorphic
from msgen.fingerprint import morgan_fingerprint, tanimoto
from msgen.mces import mces_distance

MEANINGFUL_MATCH = 0.4
CLOSE_MATCH = 0.675
EVAL_WIDTH = 2048
EVAL_RADIUS = 2


@dataclass(frozen=True)
class RankedEntry:
    graph: MolecularGraph
    count: int
    key: bytes


@dataclass(frozen=True)
class RankedPredictions:
    entries: tuple[RankedEntry, ...]
    num_samples: int = 0
    num_valid: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def top(self, k: int) -> list[RankedEntry]:
        return list(self.entries[:k])

    @property
    def graphs(self) -> list[MolecularGraph]:
        return [e.graph for e in self.entries]


def rank_samples(samples: Iterable[MolecularGraph]) -> RankedPredictions:
    """Drop invalid samples, merge isomorphic ones, sort by ``(-count, key)``.

    Samples sharing a canonical key are confirmed isomorphic before merging.
    """
    groups: dict[bytes, list[list]] = {}
    total = valid = 0
    for g in samples:
        total += 1
        if not is_valid(g):
            continue
        valid += 1
        key = canonical_key(g)
        bucket = groups.setdefault(key, [])
        for entry in bucket:
            if entry[0] is g or is_isomorphic(entry[0], g):
                entry[1] += 1
                break
        else:
            bucket.append([g, 1])
    flat = [(g, c, key, pos) for key, bucket in groups.items() for pos, (g, c) in enumerate(bucket)]
    flat.sort(key=lambda x: (-x[1], x[2], x[3]))
    return RankedPredictions(tuple(RankedEntry(g, c, k) for g, c, k, _ in flat), total, valid)


def topk_accuracy(rp: RankedPredictions, truth: MolecularGraph, k: int) -> int:
    if k < 1:
        raise ValueError("k must be at least 1")
    return int(any(is_isomorphic(e.graph, truth) for e in rp.top(k)))


class _FingerprintCache:
    def __init__(self, width: int = EVAL_WIDTH, radius: int = EVAL_RADIUS):
        self.width, self.radius = width, radius
        self._cache: dict[int, object] = {}

    def __call__(self, g: MolecularGraph):
        key = id(g)
        if key not in self._cache:
            self._cache[key] = (g, morgan_fingerprint(g, self.width, self.radius))
        return self._cache[key][1]


def topk_tanimoto(
    rp: RankedPredictions, truth: MolecularGraph, k: int, width: int = EVAL_WIDTH, _fp=None
) -> float:
    """Highest Tanimoto similarity to ``truth`` among the first ``k``; 0 when empty."""
    if k < 1:
        raise ValueError("k must be at least 1")
    fp = _fp or _FingerprintCache(width)
    top = rp.top(k)
    if not top:
        return 0.0
    ft = fp(truth)
    return max(tanimoto(fp(e.graph), ft) for e in top)


def topk_mces(rp: RankedPredictions, truth: MolecularGraph, k: int) -> float | None:
    """Smallest exact MCES distance among the first ``k``; ``None`` when empty."""
    if k < 1:
        raise ValueError("k must be at least 1")
    top = rp.top(k)
    if not top:
        return None
    return min(mces_distance(e.graph, truth).distance for e in top)


def match_rates(rp: RankedPredictions, truth: MolecularGraph, k: int, _fp=None) -> tuple[int, int]:
    """(meaningful, close) flags: top-k Tanimoto >= 0.4 and >= 0.675."""
    return match_flags(topk_tanimoto(rp, truth, k, _fp=_fp))


def match_flags(similarity: float) -> tuple[int, int]:
    return int(similarity >= MEANINGFUL_MATCH), int(similarity >= CLOSE_MATCH)


@dataclass
class SpectrumMetrics:
    id: str
    num_samples: int
    num_valid: int
    num_unique: int
    accuracy: dict[int, int]
    tanimoto: dict[int, float | None]
    mces: dict[int, float | None]
    meaningful: dict[int, int]
    close: dict[int, int]

    @property
    def excluded(self) -> bool:
        return self.num_valid == 0


def evaluate_spectrum(
    sid: str, samples: Sequence[MolecularGraph], truth: MolecularGraph, ks: Sequence[int] = (1, 10)
) -> SpectrumMetrics:
    """All metrics for one spectrum; similarity fields are ``None`` without valid samples."""
    rp = rank_samples(samples)
    fp = _FingerprintCache()
    acc, tan, mc, mean_, close = {}, {}, {}, {}, {}
    for k in ks:
        acc[k] = topk_accuracy(rp, truth, k)
        if len(rp):
            tan[k] = topk_tanimoto(rp, truth, k, _fp=fp)
            mc[k] = topk_mces(rp, truth, k)
            mean_[k], close[k] = match_flags(tan[k])
        else:
            tan[k] = mc[k] = None
            mean_[k] = close[k] = 0
    return SpectrumMetrics(sid, rp.num_samples, rp.num_valid, len(rp), acc, tan, mc, mean_, close)


@dataclass
class MetricsReport:
    rows: list[SpectrumMetrics] = field(default_factory=list)
    ks: tuple[int, ...] = (1, 10)

    def summary(self) -> dict[str, float]:
        """Aggregates; similarity means skip spectra without valid samples."""
        out: dict[str, float] = {}
        n = len(self.rows)
        kept = [r for r in self.rows if not r.excluded]
        for k in self.ks:
            out[f"Top-{k} Accuracy"] = float(np.mean([r.accuracy[k] for r in self.rows])) if n else 0.0
            out[f"Top-{k} MCES"] = float(np.mean([r.mces[k] for r in kept])) if kept else math.nan
            out[f"Top-{k} Tanimoto"] = float(np.mean([r.tanimoto[k] for r in kept])) if kept else math.nan
            out[f"Top-{k} Meaningful match"] = float(np.mean([r.meaningful[k] for r in self.rows])) if n else 0.0
            out[f"Top-{k} Close match"] = float(np.mean([r.close[k] for r in self.rows])) if n else 0.0
        total = sum(r.num_samples for r in self.rows)
        out["Valid"] = sum(r.num_valid for r in self.rows) / total if total else 0.0
        out["Ranked valid"] = 1.0
        out["Spectra"] = float(n)
        out["Excluded from similarity"] = float(n - len(kept))
        return out

    def write(self, tsv_path: str | Path, summary_path: str | Path) -> None:
        cols = ["id", "samples", "valid", "unique"]
        for k in self.ks:
            cols += [f"top{k}_acc", f"top{k}_mces", f"top{k}_tanimoto", f"top{k}_meaningful", f"top{k}_close"]

        def fmt(v) -> str:
            if v is None:
                return "NA"
            return f"{v:.6g}" if isinstance(v, float) else str(v)

        with open(tsv_path, "w", encoding="utf-8") as fh:
            fh.write("\t".join(cols) + "\n")
            for r in self.rows:
                vals = [r.id, r.num_samples, r.num_valid, r.num_unique]
                for k in self.ks:
                    vals += [r.accuracy[k], r.mces[k], r.tanimoto[k], r.meaningful[k], r.close[k]]
                fh.write("\t".join(fmt(v) for v in vals) + "\n")
        with open(summary_path, "w", encoding="utf-8") as fh:
            for key, val in self.summary().items():
                fh.write(f"{key}\t{val:.6g}\n")
