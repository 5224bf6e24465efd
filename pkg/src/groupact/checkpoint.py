"""Binary checkpoint files.

Layout, all integers little-endian:

    magic   4 bytes  b"GACK"
    version u32      currently 1
    u32 meta count, then per entry: u32 key length, key utf-8, u32 value
    length, value utf-8
    u32 tensor count, then per tensor: u32 name length, name utf-8, u32 ndim,
    ndim * u64 dims, raw float64 values

Writing the same state twice produces byte-identical files; loading restores
bit-identical arrays. Files are written to a temp path and renamed into
place so a crash never leaves a half-written checkpoint behind.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError
from .model import (
    BranchConfig,
    BranchModel,
    EarlyFusionModel,
    LateFusionModel,
)
from .seeding import rng_for

MAGIC = b"GACK"
VERSION = 1

_BOOL_FIELDS = ("use_pe", "use_encoder")
_INT_FIELDS = ("feature_dim", "num_actions", "num_activities", "d_model", "num_heads", "num_layers", "d_ff")
_FLOAT_FIELDS = ("dropout", "pe_scale")
_STR_FIELDS = ("pe_stage",)


def write_checkpoint(path, meta: dict, tensors) -> None:
    """tensors is a sequence of (name, ndarray); order is preserved."""
    parts = [MAGIC, struct.pack("<I", VERSION)]
    items = list(meta.items())
    parts.append(struct.pack("<I", len(items)))
    for key, value in items:
        kb, vb = str(key).encode(), str(value).encode()
        parts.append(struct.pack("<I", len(kb)) + kb + struct.pack("<I", len(vb)) + vb)
    tensors = list(tensors)
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        # asarray keeps 0-d arrays 0-d; ascontiguousarray would promote them
        arr = np.asarray(arr, dtype="<f8", order="C")
        nb = str(name).encode()
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    blob = b"".join(parts)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, path):
        self.path = path
        self.buf = Path(path).read_bytes()
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise ParseError(self.path, 0, "truncated checkpoint")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def string(self):
        return self.take(self.u32()).decode()


def read_checkpoint(path):
    """Returns (meta dict, list of (name, ndarray))."""
    r = _Reader(path)
    if r.take(4) != MAGIC:
        raise ParseError(path, 0, "not a checkpoint file")
    version = r.u32()
    if version != VERSION:
        raise ParseError(path, 0, f"unsupported checkpoint version {version}")
    meta = {}
    for _ in range(r.u32()):
        key = r.string()
        meta[key] = r.string()
    tensors = []
    for _ in range(r.u32()):
        name = r.string()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim))
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).copy()
        tensors.append((name, arr))
    if r.pos != len(r.buf):
        raise ParseError(path, 0, "trailing bytes after checkpoint payload")
    return meta, tensors


def _cfg_meta(prefix: str, cfg: BranchConfig) -> dict:
    out = {}
    for name in _INT_FIELDS:
        out[prefix + name] = str(getattr(cfg, name))
    for name in _FLOAT_FIELDS:
        out[prefix + name] = repr(getattr(cfg, name))
    for name in _BOOL_FIELDS:
        out[prefix + name] = "1" if getattr(cfg, name) else "0"
    for name in _STR_FIELDS:
        out[prefix + name] = getattr(cfg, name)
    return out


def _cfg_from_meta(prefix: str, meta: dict, path) -> BranchConfig:
    kwargs = {}
    try:
        for name in _INT_FIELDS:
            kwargs[name] = int(meta[prefix + name])
        for name in _FLOAT_FIELDS:
            kwargs[name] = float(meta[prefix + name])
        for name in _BOOL_FIELDS:
            kwargs[name] = meta[prefix + name] == "1"
        for name in _STR_FIELDS:
            kwargs[name] = meta[prefix + name]
    except KeyError as exc:
        raise ParseError(path, 0, f"checkpoint is missing config key {exc}") from None
    return BranchConfig(**kwargs)


def save_model(path, model, *, iteration: int = 0, extra_meta=None, extra_tensors=()) -> None:
    """Serialise a model plus optional optimizer slots / caller metadata.

    extra_tensors names must not collide with model parameter names; the
    training loop namespaces optimizer slots under 'optim/'.
    """
    meta = {"kind": model.kind, "iteration": str(iteration)}
    if model.kind == "branch":
        meta["branch"] = model.branch
        meta.update(_cfg_meta("cfg.", model.cfg))
    elif model.kind in ("early-sum", "early-concat"):
        meta["branches"] = ",".join(model.branches)
        meta["early_pe"] = model.early_pe
        for b in model.branches:
            meta[f"fdim.{b}"] = str(model.feature_dims[b])
        meta.update(_cfg_meta("cfg.", model.cfg))
    elif model.kind == "late":
        meta["branches"] = ",".join(model.branches)
        for b in model.branches:
            meta[f"late_weight.{b}"] = repr(model.weights[b])
            meta.update(_cfg_meta(f"cfg.{b}.", model.models[b].cfg))
    else:
        raise DataError(f"cannot serialise model kind {model.kind!r}")
    if extra_meta:
        meta.update(extra_meta)
    tensors = [(name, t.data) for name, t in model.parameters()]
    write_checkpoint(path, meta, list(tensors) + list(extra_tensors))


def _restore_parameters(model, stored: dict, path):
    for name, t in model.parameters():
        if name not in stored:
            raise ParseError(path, 0, f"checkpoint is missing tensor {name!r}")
        arr = stored[name]
        if arr.shape != t.data.shape:
            raise ParseError(
                path, 0, f"tensor {name!r} has shape {arr.shape}, expected {t.data.shape}"
            )
        t.data[...] = arr


def load_model(path):
    """Returns (model, iteration, extras) with extras = non-parameter tensors."""
    meta, tensors = read_checkpoint(path)
    stored = dict(tensors)
    if len(stored) != len(tensors):
        raise ParseError(path, 0, "duplicate tensor names in checkpoint")
    kind = meta.get("kind")
    rng = rng_for(0, "init")  # shapes only; every value is overwritten below
    if kind == "branch":
        model = BranchModel(meta["branch"], _cfg_from_meta("cfg.", meta, path), rng)
    elif kind in ("early-sum", "early-concat"):
        branches = meta["branches"].split(",")
        fdims = {b: int(meta[f"fdim.{b}"]) for b in branches}
        model = EarlyFusionModel(
            kind.removeprefix("early-"),
            fdims,
            _cfg_from_meta("cfg.", meta, path),
            rng,
            early_pe=meta["early_pe"],
        )
    elif kind == "late":
        branches = meta["branches"].split(",")
        models = {
            b: BranchModel(b, _cfg_from_meta(f"cfg.{b}.", meta, path), rng) for b in branches
        }
        weights = {b: float(meta[f"late_weight.{b}"]) for b in branches}
        model = LateFusionModel(models, weights)
    else:
        raise ParseError(path, 0, f"unknown model kind {kind!r}")
    _restore_parameters(model, stored, path)
    param_names = {name for name, _ in model.parameters()}
    extras = {name: arr for name, arr in stored.items() if name not in param_names}
    return model, int(meta.get("iteration", "0")), extras
