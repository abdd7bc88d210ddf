"""Binary checkpoint format.

Layout: ``FCDNCKP1`` magic, little-endian uint32 header length, UTF-8 JSON
header, then every tensor of the manifest as little-endian float32 in
manifest order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..connectivity import ChannelWeights
from .config import FcdnConfig
from .network import FcdnModel

MAGIC = b"FCDNCKP1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _entries(model: FcdnModel):
    parts = [("student", model.student)]
    if model.teacher is not None:
        parts.append(("teacher", model.teacher))
    if model.projector is not None:
        parts.append(("projector", model.projector))
    for prefix, mod in parts:
        for name, p in mod.named_parameters(prefix + ".").items():
            yield name, "param", p.data
        for name, buf in mod.named_buffers(prefix + ".").items():
            yield name, "buffer", buf


def checkpoint_bytes(model: FcdnModel) -> bytes:
    if not model.fitted:
        raise CheckpointError("cannot save a model without fitted channel weights")
    manifest, blobs, offset = [], [], 0
    for name, kind, arr in _entries(model):
        a = np.ascontiguousarray(arr, dtype="<f4")
        manifest.append({"name": name, "kind": kind, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "seed": int(model.seed),
        "has_teacher": model.teacher is not None,
        "channel_weights": [w.to_dict() for w in model.weights],
        "manifest": manifest,
        "metadata": model.metadata,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(hbytes)) + hbytes + b"".join(blobs)


def save_checkpoint(model: FcdnModel, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def read_header(path) -> dict:
    raw = Path(path).read_bytes()
    header, _ = _split(raw)
    return header


def _split(raw: bytes):
    if raw[:8] != MAGIC:
        raise CheckpointError("bad magic: not an FCDN checkpoint")
    if len(raw) < 12:
        raise CheckpointError("truncated header")
    (n,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + n:
        raise CheckpointError("truncated header")
    try:
        header = json.loads(raw[12:12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unknown format_version {header.get('format_version')!r}")
    return header, raw[12 + n:]


def load_checkpoint(path) -> FcdnModel:
    header, payload = _split(Path(path).read_bytes())
    cfg = FcdnConfig.from_dict(header["config"])
    model = FcdnModel.create(cfg, header["seed"], with_teacher=header["has_teacher"])
    model.set_weights([ChannelWeights.from_dict(d) for d in header["channel_weights"]])
    model.metadata = header.get("metadata", {})
    expected = sum(4 * int(np.prod(e["shape"], dtype=np.int64)) for e in header["manifest"])
    if len(payload) != expected:
        raise CheckpointError(f"payload is {len(payload)} bytes, manifest needs {expected}")
    targets = {}
    parts = [("student", model.student), ("teacher", model.teacher), ("projector", model.projector)]
    for prefix, mod in parts:
        if mod is None:
            continue
        for name, p in mod.named_parameters(prefix + ".").items():
            targets[name] = ("param", p)
        buffers = {}
        for name, _ in mod.named_buffers(prefix + ".").items():
            targets[name] = ("buffer", (mod, prefix, buffers))
    pending = {}
    for e in header["manifest"]:
        if e["name"] not in targets:
            raise CheckpointError(f"checkpoint entry {e['name']!r} has no place in the model")
        n = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=e["offset"]).reshape(e["shape"])
        kind, target = targets.pop(e["name"])
        if kind == "param":
            if target.data.shape != arr.shape:
                raise CheckpointError(f"shape mismatch for {e['name']}: {arr.shape} vs {target.data.shape}")
            target.data = arr.astype(np.float32)
        else:
            mod, prefix, _ = target
            pending.setdefault(id(mod), (mod, prefix, {}))[2][e["name"][len(prefix) + 1:]] = arr.copy()
    missing = [k for k, (kind, _) in targets.items() if kind == "param"]
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {missing[:5]}")
    for mod, _, bufs in pending.values():
        mod.load_buffers(bufs)
    model.eval()
    return model
