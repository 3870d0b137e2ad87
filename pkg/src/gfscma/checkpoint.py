"""Checkpoint files.

Layout (little-endian)::

    b"GFCK" | u32 version | u32 header length | JSON header | tensor blob

The header carries the model kind, specs, seed, training stage, free-form
metadata and, per tensor, its name, shape and byte range in the blob. Tensors
are 32-bit floats. ``blob_sha256`` guards against corruption.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .models import AudnSpec, ModelBundle, UaenSpec, _materialize, audn_shapes, uaen_shapes

MAGIC = b"GFCK"
VERSION = 1
STAGES = ("init", "pretrained", "joint", "trained")


class CheckpointError(ValueError):
    pass


def dumps_checkpoint(bundle: ModelBundle, stage: str | None = None) -> bytes:
    stage = stage or bundle.stage
    if stage not in STAGES:
        raise CheckpointError(f"unknown stage {stage!r}; expected one of {STAGES}")
    tensors, chunks, offset = [], [], 0
    items = [("param", n, p.data) for n, p in bundle.params.items()]
    for layer, st in bundle.buffers.items():
        for k in sorted(st):
            items.append(("buffer", f"{layer}.{k}", st[k]))
    for kind, name, arr in items:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append({"kind": kind, "name": name, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    header = {
        "format": "gfscma-checkpoint", "version": VERSION, "spec": bundle.spec_dict(),
        "seed": bundle.seed, "stage": stage, "pretrained": bundle.pretrained,
        "meta": bundle.meta, "tensors": tensors,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(hb)) + hb + blob


def save_checkpoint(bundle: ModelBundle, path: str | Path, stage: str | None = None) -> str:
    """Write the checkpoint; returns its id (leading hex digits of the file's SHA-256)."""
    if stage is not None:
        bundle.stage = stage
    raw = dumps_checkpoint(bundle, stage)
    Path(path).write_bytes(raw)
    return hashlib.sha256(raw).hexdigest()[:16]


def checkpoint_id(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def read_header(raw: bytes) -> tuple[dict, bytes]:
    if raw[:4] != MAGIC:
        raise CheckpointError("not a gfscma checkpoint (bad magic)")
    version, hl = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {VERSION})")
    try:
        header = json.loads(raw[12:12 + hl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    return header, raw[12 + hl:]


def loads_checkpoint(raw: bytes, expected: dict | None = None) -> ModelBundle:
    header, blob = read_header(raw)
    if hashlib.sha256(blob).hexdigest() != header.get("blob_sha256"):
        raise CheckpointError("corrupt checkpoint: tensor blob checksum mismatch")
    spec = header["spec"]
    for key, want in (expected or {}).items():
        if spec.get(key) != want:
            raise CheckpointError(f"checkpoint has {key}={spec.get(key)!r}, expected {want!r}")
    audn = AudnSpec(**spec["audn"])
    uaen = UaenSpec(**spec["uaen"]) if spec["uaen"] else None
    values, buffers = OrderedDict(), {}
    for t in header["tensors"]:
        arr = np.frombuffer(blob, dtype="<f4", count=int(np.prod(t["shape"])) if t["shape"] else 1,
                            offset=t["offset"]).reshape(t["shape"]).astype(np.float32)
        if t["kind"] == "param":
            values[t["name"]] = arr
        else:
            layer, k = t["name"].rsplit(".", 1)
            buffers.setdefault(layer, {})[k] = arr
    try:
        bundle = _materialize(spec["kind"], spec["N_R"], spec["N_ZC"], spec["K"], spec["N_d"],
                              audn, uaen, header["seed"], np.float32, values=values, buffers=buffers)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing tensor {exc}") from None
    shapes = dict(audn_shapes(audn))
    if uaen is not None:
        shapes.update(uaen_shapes(uaen))
    if set(shapes) != set(values):
        raise CheckpointError("checkpoint tensors do not match the declared architecture")
    for name, shape in shapes.items():
        if tuple(values[name].shape) != tuple(shape):
            raise CheckpointError(f"tensor {name} has shape {values[name].shape}, spec says {shape}")
    bundle.stage = header["stage"]
    bundle.pretrained = bool(header["pretrained"])
    bundle.meta = header.get("meta", {})
    return bundle


def load_checkpoint(path: str | Path, expected: dict | None = None) -> ModelBundle:
    """Load a checkpoint. ``expected`` (e.g. ``{"N_R": 42}``) is checked against its spec."""
    return loads_checkpoint(Path(path).read_bytes(), expected)
