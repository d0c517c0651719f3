"""Model checkpoints: a length-prefixed JSON header plus raw float32 data.

Layout: 4-byte little-endian header length, the UTF-8 JSON header, then
every parameter array concatenated as little-endian float32 in header
order. Loading is fail-closed: truncated files, trailing bytes, unknown
kinds and shape mismatches all raise CheckpointError.
"""

import json
import struct

import numpy as np

from ..errors import CheckpointError
from ..models import build_mrf_dcn, build_mtl_unet

HEADER_VERSION = 1
_MAX_HEADER = 1 << 24

_BUILDERS = {
    "mrf_dcn": lambda seed, meta: build_mrf_dcn(
        seed=seed, num_classes=int(meta.get("num_classes", 5))
    ),
    "mtl_unet": lambda seed, meta: build_mtl_unet(
        seed=seed,
        input_side=int(meta.get("input_side", 128)),
        num_classes=int(meta.get("num_classes", 5)),
    ),
}


def save_checkpoint(model, path):
    entries = model.param_entries()
    header = {
        "format": "cell-pipeline-checkpoint",
        "version": HEADER_VERSION,
        "kind": model.kind,
        "seed": model.seed,
        "meta": model.meta(),
        "params": [{"name": name, "shape": list(p.shape)} for name, p in entries],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, p in entries:
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path, expected_kind=None):
    try:
        fh = open(path, "rb")
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}")
    with fh:
        raw_len = fh.read(4)
        if len(raw_len) != 4:
            raise CheckpointError(f"{path}: truncated header length")
        (header_len,) = struct.unpack("<I", raw_len)
        if header_len == 0 or header_len > _MAX_HEADER:
            raise CheckpointError(f"{path}: implausible header length {header_len}")
        blob = fh.read(header_len)
        if len(blob) != header_len:
            raise CheckpointError(f"{path}: truncated header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header") from exc
        if header.get("version") != HEADER_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version")
        kind = header.get("kind")
        if kind not in _BUILDERS:
            raise CheckpointError(f"{path}: unknown model kind {kind!r}")
        if expected_kind is not None and kind != expected_kind:
            raise CheckpointError(
                f"{path}: holds a {kind!r} model, expected {expected_kind!r}"
            )
        meta = header.get("meta", {})
        model = _BUILDERS[kind](int(header.get("seed", 0)), meta)
        entries = model.param_entries()
        listed = header.get("params", [])
        if len(listed) != len(entries):
            raise CheckpointError(
                f"{path}: header lists {len(listed)} parameters, model has {len(entries)}"
            )
        for (name, p), item in zip(entries, listed):
            if item.get("name") != name or tuple(item.get("shape", ())) != p.shape:
                raise CheckpointError(
                    f"{path}: parameter {item.get('name')!r} does not match model "
                    f"parameter {name} {p.shape}"
                )
            nbytes = p.size * 4
            chunk = fh.read(nbytes)
            if len(chunk) != nbytes:
                raise CheckpointError(f"{path}: truncated payload at {name}")
            p.data = np.frombuffer(chunk, dtype="<f4").reshape(p.shape).copy()
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after payload")
    return model
