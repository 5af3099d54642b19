"""Binary checkpoint files.

Byte layout, all integers little-endian:

====================  =========================================================
offset                content
====================  =========================================================
0                     magic ``b"DFMS"``
4                     ``uint32`` format version (currently 1)
8                     ``uint32`` header length ``H``
12                    ``H`` bytes of UTF-8 JSON (the config block)
12 + H                parameter blocks, ``float32`` little-endian, concatenated
                      in the order listed under ``"blocks"`` in the header
after the parameters  optimizer state when ``"optimizer"`` is true: first
                      moments then second moments, ``float32``, each as long as
                      all parameter blocks together
====================  =========================================================

The JSON header holds ``kind``, ``step``, ``blocks`` (list of ``[name,
size]``), ``optimizer``, ``adam_step``, ``config`` (model settings) and free
``extra`` metadata such as the bond-type prior and the RNG state.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from msgen.errors import DataError
from msgen.optim import AdamState

MAGIC = b"DFMS"
VERSION = 1
_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    kind: str
    config: dict[str, Any]
    params: dict[str, np.ndarray]
    step: int = 0
    optimizer: AdamState | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k] for k in self.params])


def round_f32(x: np.ndarray) -> None:
    """Round a float64 array in place to the nearest float32 value."""
    x[...] = x.astype(np.float32).astype(np.float64)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    """Write atomically (temp file then rename)."""
    path = Path(path)
    total = sum(v.size for v in ckpt.params.values())
    header = {
        "kind": ckpt.kind,
        "step": ckpt.step,
        "blocks": [[k, int(v.size)] for k, v in ckpt.params.items()],
        "optimizer": ckpt.optimizer is not None,
        "adam_step": ckpt.optimizer.step if ckpt.optimizer is not None else 0,
        "config": ckpt.config,
        "extra": ckpt.extra,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(hbytes)))
        fh.write(hbytes)
        for v in ckpt.params.values():
            fh.write(np.ascontiguousarray(v, dtype=_F32).tobytes())
        if ckpt.optimizer is not None:
            if ckpt.optimizer.m.size != total:
                raise ValueError("optimizer state size does not match the parameters")
            fh.write(np.ascontiguousarray(ckpt.optimizer.m, dtype=_F32).tobytes())
            fh.write(np.ascontiguousarray(ckpt.optimizer.v, dtype=_F32).tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read a checkpoint; arrays come back as float64. Raises DataError on bad files."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    off = 12 + hlen

    def take(count: int) -> np.ndarray:
        nonlocal off
        end = off + 4 * count
        if end > len(data):
            raise DataError(f"{path}: truncated checkpoint")
        arr = np.frombuffer(data[off:end], dtype=_F32).astype(np.float64)
        off = end
        return arr

    params = {name: take(size) for name, size in header["blocks"]}
    opt = None
    if header["optimizer"]:
        total = sum(size for _, size in header["blocks"])
        m, v = take(total), take(total)
        opt = AdamState(m, v, int(header["adam_step"]))
    if off != len(data):
        raise DataError(f"{path}: trailing bytes after checkpoint payload")
    return Checkpoint(header["kind"], header["config"], params, int(header["step"]), opt, header.get("extra", {}))
