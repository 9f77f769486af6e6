"""Binary checkpoints.

Layout: 8-byte magic, uint32 format version, uint64 header length, a UTF-8
JSON header, then the raw little-endian parameter payload. The header lists
every tensor with its name, shape, dtype and byte offset into the payload,
plus the model config and its fingerprint.
"""
from __future__ import annotations

import hashlib
import json
import struct
from typing import Optional, Union

import numpy as np

from .errors import DataError, FingerprintError
from .models import LanguageModel, LMConfig, ModelConfig, TransducerModel

MAGIC = b"CASCKPT\x00"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def config_fingerprint(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def _describe(model) -> tuple[str, dict]:
    if isinstance(model, TransducerModel):
        return "transducer", model.config.to_dict()
    if isinstance(model, LanguageModel):
        return "lm", model.config.to_dict()
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def encode_checkpoint(model, vocabs: Optional[dict] = None, extra: Optional[dict] = None) -> bytes:
    kind, config = _describe(model)
    tensors, blobs, offset = [], [], 0
    for name, p in model.named_parameters():
        arr = np.ascontiguousarray(p.data)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str, "offset": offset,
                        "nbytes": len(raw), "trainable": bool(p.requires_grad)})
        blobs.append(raw)
        offset += len(raw)
    header = {"version": VERSION, "kind": kind, "config": config, "fingerprint": config_fingerprint(config),
              "vocabs": vocabs or {}, "extra": extra or {}, "tensors": tensors}
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + b"".join(blobs)


def save_model(model, path: str, vocabs: Optional[dict] = None, extra: Optional[dict] = None) -> None:
    """``vocabs`` maps role ("input", "output") to vocabulary fingerprints."""
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(model, vocabs, extra))


def read_header(data: bytes) -> tuple[dict, int]:
    if len(data) < _PREFIX.size:
        raise DataError("checkpoint truncated")
    magic, version, n = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise DataError("not a checkpoint file")
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(data[start:start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt checkpoint header: {exc}") from None
    return header, start + n


def decode_checkpoint(data: bytes) -> tuple[Union[TransducerModel, LanguageModel], dict]:
    header, base = read_header(data)
    if config_fingerprint(header["config"]) != header["fingerprint"]:
        raise FingerprintError("checkpoint config does not match its fingerprint")
    if header["kind"] == "transducer":
        model = TransducerModel(ModelConfig(**header["config"]))
    elif header["kind"] == "lm":
        model = LanguageModel(LMConfig(**header["config"]))
    else:
        raise DataError(f"unknown checkpoint kind {header['kind']!r}")
    params = dict(model.named_parameters())
    end = 0
    for entry in sorted(header["tensors"], key=lambda e: e["offset"]):
        if entry["offset"] < end:
            raise DataError("checkpoint tensors overlap")
        end = entry["offset"] + entry["nbytes"]
        if base + end > len(data):
            raise DataError("checkpoint payload truncated")
        name = entry["name"]
        if name not in params:
            raise DataError(f"checkpoint tensor {name!r} not in model")
        arr = np.frombuffer(data, dtype=np.dtype(entry["dtype"]), count=int(np.prod(entry["shape"], dtype=np.int64)),
                            offset=base + entry["offset"]).reshape(entry["shape"])
        p = params[name]
        if tuple(arr.shape) != p.data.shape:
            raise DataError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
        p.data = arr.astype(p.data.dtype).copy()
        p.requires_grad = bool(entry.get("trainable", True))
    missing = set(params) - {e["name"] for e in header["tensors"]}
    if missing:
        raise DataError(f"checkpoint lacks tensors {sorted(missing)}")
    return model, header


def load_model(path: str):
    """Returns (model, header)."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    return decode_checkpoint(data)


def check_vocab(header: dict, role: str, fingerprint: str) -> None:
    stored = header.get("vocabs", {}).get(role)
    if stored is not None and stored != fingerprint:
        raise FingerprintError(f"{role} vocabulary fingerprint {fingerprint} does not match checkpoint ({stored})")


__all__ = ["MAGIC", "VERSION", "save_model", "load_model", "encode_checkpoint", "decode_checkpoint", "read_header",
           "check_vocab", "config_fingerprint"]
