"""Binary checkpoint format (all integers little-endian u32).

    b"SSNTCKPT" | version | len + key=value config block (UTF-8)
    | count | per tensor: len + name, rank, dims..., float32 data
    | CRC32 of everything before it

Computation runs in float64; saving first rounds the live parameters (and
optimizer moments) to float32 so that save -> load is a fixed point.
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .autodiff import ParameterStore
from .config import coerce, format_value
from .model import ModelConfig, expected_shapes
from .train import AdamState

MAGIC = b"SSNTCKPT"
VERSION = 1
_M = "adam.m/"
_V = "adam.v/"


class CheckpointError(IOError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ParameterStore
    vocab: List[str]
    adam: Optional[AdamState] = None
    meta: Optional[Dict[str, str]] = None

    @property
    def vocab_map(self) -> Dict[str, int]:
        return {tok: k + 1 for k, tok in enumerate(self.vocab)}


def round_to_f32(params: ParameterStore, state: Optional[AdamState] = None) -> None:
    for _, p in params.items():
        p.data[...] = p.data.astype(np.float32).astype(np.float64)
    if state is not None:
        for d in (state.m, state.v):
            for arr in d.values():
                arr[...] = arr.astype(np.float32).astype(np.float64)


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def _config_block(cfg: ModelConfig, vocab: Sequence[str], state: Optional[AdamState], extra) -> bytes:
    lines = [f"{f.name}={format_value(getattr(cfg, f.name))}" for f in fields(cfg)]
    lines.append("vocab=" + " ".join(vocab))
    if state is not None:
        lines.append(f"adam_t={state.t}")
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v}")
    return "\n".join(lines).encode("utf-8")


def save_checkpoint(path, cfg: ModelConfig, params: ParameterStore, vocab: Sequence[str],
                    state: Optional[AdamState] = None, train_cfg=None) -> None:
    round_to_f32(params, state)
    extra = {}
    if train_cfg is not None:
        extra = {f"train.{f.name}": format_value(getattr(train_cfg, f.name)) for f in fields(train_cfg)}
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_u32(VERSION))
    block = _config_block(cfg, vocab, state, extra)
    buf.write(_u32(len(block)))
    buf.write(block)
    tensors = [(name, p.data) for name, p in params.items()]
    if state is not None:
        tensors += [(_M + k, state.m[k]) for k in sorted(state.m)]
        tensors += [(_V + k, state.v[k]) for k in sorted(state.v)]
    buf.write(_u32(len(tensors)))
    for name, arr in tensors:
        nb = name.encode("utf-8")
        buf.write(_u32(len(nb)))
        buf.write(nb)
        buf.write(_u32(arr.ndim))
        for d in arr.shape:
            buf.write(_u32(d))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    payload = buf.getvalue()
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
            fh.write(_u32(zlib.crc32(payload) & 0xFFFFFFFF))
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from None


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if len(raw) < len(MAGIC) + 8:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    payload, crc = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: CRC mismatch, checkpoint is corrupt")
    r = _Reader(payload)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        block = r.take(r.u32()).decode("utf-8")
    except UnicodeDecodeError:
        raise CheckpointError(f"{path}: config block is not UTF-8") from None
    kv = {}
    for line in block.split("\n"):
        if line:
            k, _, v = line.partition("=")
            kv[k] = v
    defaults = {f.name: f.default for f in fields(ModelConfig)}
    try:
        cfg = ModelConfig(**{k: coerce(defaults[k], kv[k], k) for k in defaults})
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad model config block ({exc})") from None
    vocab = kv.get("vocab", "").split()

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        shape = tuple(r.u32() for _ in range(r.u32()))
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(4 * n), dtype="<f4").astype(np.float64).reshape(shape)
        tensors[name] = arr
    if r.pos != len(payload):
        raise CheckpointError(f"{path}: trailing bytes after parameter table")

    expected = expected_shapes(cfg)
    model_names = {k for k in tensors if not k.startswith(("adam.",))}
    if model_names != set(expected):
        missing = sorted(set(expected) - model_names)
        extra = sorted(model_names - set(expected))
        raise CheckpointError(f"{path}: parameter set does not match config (missing {missing}, unexpected {extra})")
    for k, shape in expected.items():
        if tensors[k].shape != shape:
            raise CheckpointError(f"{path}: {k} has shape {tensors[k].shape}, config implies {shape}")
    params = ParameterStore({k: tensors[k] for k in sorted(expected)})

    adam = None
    if "adam_t" in kv:
        adam = AdamState(t=int(kv["adam_t"]))
        for k, arr in tensors.items():
            for prefix, target in ((_M, adam.m), (_V, adam.v)):
                if k.startswith(prefix):
                    base = k[len(prefix):]
                    if base not in expected or expected[base] != arr.shape:
                        raise CheckpointError(f"{path}: optimizer entry {k} does not match a parameter")
                    target[base] = arr.copy()
    meta = {k: v for k, v in kv.items() if k.startswith("train.")}
    return Checkpoint(cfg, params, vocab, adam, meta)
