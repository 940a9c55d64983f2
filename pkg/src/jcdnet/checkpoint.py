"""Parameter checkpoints.

Layout (little-endian)::

    0   4   magic b"JCDC"
    4   4   header length H (u32)
    8   H   UTF-8 JSON header
    8+H     float32 payload, tensors back to back in header order

Header fields: ``format`` ("jcdnet-checkpoint"), ``version`` (1),
``model_config`` (the ModelConfig as a dict), ``tensors`` (list of
``{"name", "shape", "offset", "length"}`` with offset/length in bytes
relative to the payload start) and a free-form ``meta`` dict.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .autograd import Tensor
from .data import atomic_write_bytes
from .model import ModelConfig, param_shapes

MAGIC = b"JCDC"
FORMAT = "jcdnet-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(params: dict, cfg: ModelConfig, meta: dict | None = None) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, t in params.items():
        arr = np.ascontiguousarray(getattr(t, "data", t), dtype="<f4")
        chunks.append(arr.tobytes())
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "length": arr.nbytes})
        offset += arr.nbytes
    header = {
        "format": FORMAT,
        "version": VERSION,
        "model_config": cfg.to_dict(),
        "tensors": entries,
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    return MAGIC + struct.pack("<I", len(hbytes)) + hbytes + b"".join(chunks)


def save_checkpoint(path, params: dict, cfg: ModelConfig, meta: dict | None = None) -> None:
    atomic_write_bytes(path, encode_checkpoint(params, cfg, meta))


def load_checkpoint(path, expect: ModelConfig | None = None):
    """Return ``(params, model_config, meta)``; params are float32 tensors.

    With ``expect`` given, every tensor shape must match that configuration.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {buf[:4]!r})")
    (hlen,) = struct.unpack_from("<I", buf, 4)
    try:
        header = json.loads(buf[8:8 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    if header.get("format") != FORMAT or header.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format")
    cfg = ModelConfig.from_dict(header["model_config"])
    payload = buf[8 + hlen:]
    params = {}
    for e in header["tensors"]:
        chunk = payload[e["offset"]:e["offset"] + e["length"]]
        if len(chunk) != e["length"]:
            raise CheckpointError(f"{path}: tensor {e['name']} truncated")
        arr = np.frombuffer(chunk, dtype="<f4").reshape(e["shape"]).astype(np.float32)
        params[e["name"]] = Tensor(arr, requires_grad=True, name=e["name"])
    if expect is not None:
        want = param_shapes(expect)
        mismatched = [f"{n}: checkpoint {tuple(params[n].shape) if n in params else 'missing'} vs config {s}"
                      for n, s in want.items() if n not in params or tuple(params[n].shape) != s]
        extra = sorted(set(params) - set(want))
        if mismatched or extra:
            raise CheckpointError("checkpoint does not match config: " + "; ".join(mismatched + extra))
    return params, cfg, header.get("meta", {})
