"""Binary checkpoints: magic, version, JSON manifest, little-endian payload.

Layout::

    b"SMLD1" | u16 version | u64 manifest length | manifest (UTF-8 JSON) | payload

The manifest's ``tensors`` list gives name, shape, dtype and byte offset
into the payload for every array. Values are stored bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ScalerParams
from .nn import Network, network_from_arch

MAGIC = b"SMLD1"
VERSION = 1
_HEADER = struct.Struct("<HQ")
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arch: dict
    tensors: dict[str, np.ndarray]
    scaler: dict | None = None
    metrics: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_network(cls, net: Network, scaler: ScalerParams | None = None, metrics=None, extra=None) -> "Checkpoint":
        return cls(
            arch=net.arch_dict(),
            tensors=net.state_dict(),
            scaler=scaler.to_dict() if scaler is not None else None,
            metrics=dict(metrics or {}),
            extra=dict(extra or {}),
        )

    def network(self) -> Network:
        dtypes = {a.dtype for a in self.tensors.values()}
        dtype = dtypes.pop() if len(dtypes) == 1 else np.float32
        net = network_from_arch(self.arch, dtype=dtype)
        net.load_state_dict(self.tensors)
        return net

    def scaler_params(self) -> ScalerParams | None:
        return None if self.scaler is None else ScalerParams.from_dict(self.scaler)


def _dtype_tag(a: np.ndarray) -> str:
    for tag, dt in _DTYPES.items():
        if a.dtype == dt or a.dtype == dt.newbyteorder("="):
            return tag
    raise CheckpointError(f"unsupported dtype {a.dtype}")


def dumps(ckpt: Checkpoint) -> bytes:
    index, chunks, offset = [], [], 0
    for name, arr in ckpt.tensors.items():
        tag = _dtype_tag(np.asarray(arr))
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        index.append({"name": name, "shape": list(np.shape(arr)), "dtype": tag, "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "arch": ckpt.arch,
        "scaler": ckpt.scaler,
        "metrics": ckpt.metrics,
        "extra": ckpt.extra,
        "tensors": index,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return MAGIC + _HEADER.pack(VERSION, len(blob)) + blob + b"".join(chunks)


def loads(buf: bytes) -> Checkpoint:
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    pos = len(MAGIC)
    if len(buf) < pos + _HEADER.size:
        raise CheckpointError("truncated header")
    version, mlen = _HEADER.unpack_from(buf, pos)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += _HEADER.size
    try:
        manifest = json.loads(buf[pos : pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from exc
    payload = memoryview(buf)[pos + mlen :]
    tensors = {}
    for entry in manifest["tensors"]:
        dt = _DTYPES[entry["dtype"]]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        if count * dt.itemsize != entry["nbytes"]:
            raise CheckpointError(f"{entry['name']}: shape {shape} does not match {entry['nbytes']} bytes")
        end = entry["offset"] + entry["nbytes"]
        if end > len(payload):
            raise CheckpointError(f"{entry['name']}: payload truncated")
        arr = np.frombuffer(payload[entry["offset"] : end], dtype=dt).reshape(shape)
        tensors[entry["name"]] = arr.astype(dt.newbyteorder("="), copy=True)
    return Checkpoint(manifest["arch"], tensors, manifest.get("scaler"), manifest.get("metrics", {}), manifest.get("extra", {}))


def save(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(ckpt))
    return path


def load(path) -> Checkpoint:
    return loads(Path(path).read_bytes())
