"""Binary checkpoint container.

Byte layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"QXCKPT\\x00\\x00"
    8       4     uint32 format_version
    12      8     uint64 header_len
    20      H     header: UTF-8 JSON object with keys, in order,
                  model, epoch, config, vocab_fingerprint,
                  users_fingerprint, user_ids, region_sizes,
                  filters_per_size, input_length, embed_dim, dropout_rate,
                  tensors = [{name, dtype, shape, trainable}, ...]
    20+H    ...   tensor payloads, C order, little-endian, in header order
    end-32  32    SHA-256 digest of every preceding byte

A file whose digest does not match, or that ends early, is reported as
corrupt rather than partially loaded.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Vocab, fingerprint
from .model import ModelParams
from .nn import ConvSpec, Param
from .train import TrainConfig

MAGIC = b"QXCKPT\x00\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(Exception):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class FingerprintMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    format_version: int
    model: str
    params: ModelParams
    config: TrainConfig
    vocab_fingerprint: str
    users_fingerprint: str
    epoch: int


def save_checkpoint(params: ModelParams, config: TrainConfig, path, vocab: Vocab,
                    epoch: int = 0, users: Sequence[str] | None = None):
    """Write ``params`` and ``config``.

    ``users`` is the user list the model was evaluated against; it defaults
    to the model's own user table.
    """
    users = list(params.user_ids) if users is None else list(users)
    tensors = params.named_tensors()
    header = {
        "model": "qa" if params.user_emb is None else "quser",
        "epoch": int(epoch),
        "config": config.to_dict(),
        "vocab_fingerprint": vocab.fingerprint(),
        "users_fingerprint": fingerprint(users),
        "user_ids": list(params.user_ids),
        "region_sizes": list(params.spec.region_sizes),
        "filters_per_size": params.spec.filters_per_size,
        "input_length": params.spec.input_length,
        "embed_dim": params.spec.embed_dim,
        "dropout_rate": params.dropout_rate,
        "tensors": [{"name": n, "dtype": p.data.dtype.newbyteorder("<").str, "shape": list(p.shape),
                     "trainable": bool(p.trainable)} for n, p in tensors],
    }
    hbytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    h = hashlib.sha256()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        def put(b):
            h.update(b)
            fh.write(b)
        put(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)))
        put(hbytes)
        for _, p in tensors:
            put(np.ascontiguousarray(p.data, dtype=p.data.dtype.newbyteorder("<")).tobytes())
        fh.write(h.digest())
    tmp.replace(path)


def load_checkpoint(path, vocab: Vocab | None, users: Sequence[str] | None) -> Checkpoint:
    """Read a checkpoint and verify it against ``vocab`` and ``users``.

    Passing None for either skips that fingerprint check.
    """
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size + 32:
        raise CorruptCheckpointError(f"{path}: file too short ({len(blob)} bytes)")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError(f"{path}: checksum mismatch (truncated or modified)")
    try:
        header = json.loads(body[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header: {exc}") from None
    if vocab is not None and vocab.fingerprint() != header["vocab_fingerprint"]:
        raise FingerprintMismatchError(
            f"{path}: vocabulary fingerprint {vocab.fingerprint()[:12]} does not match "
            f"checkpoint {header['vocab_fingerprint'][:12]}"
        )
    if users is not None and fingerprint(list(users)) != header["users_fingerprint"]:
        raise FingerprintMismatchError(
            f"{path}: user-id fingerprint {fingerprint(list(users))[:12]} does not match "
            f"checkpoint {header['users_fingerprint'][:12]}"
        )
    offset = _PREFIX.size + hlen
    arrays = {}
    for t in header["tensors"]:
        dt = np.dtype(t["dtype"])
        n = int(np.prod(t["shape"], dtype=np.int64)) * dt.itemsize
        if offset + n > len(body):
            raise CorruptCheckpointError(f"{path}: tensor {t['name']} runs past end of file")
        arr = np.frombuffer(body, dtype=dt, count=n // dt.itemsize, offset=offset).reshape(t["shape"])
        arrays[t["name"]] = Param(arr.astype(dt.newbyteorder("="), copy=True), t["name"], t["trainable"])
        offset += n
    if offset != len(body):
        raise CorruptCheckpointError(f"{path}: {len(body) - offset} trailing bytes")
    spec = ConvSpec(tuple(header["region_sizes"]), header["filters_per_size"],
                    header["input_length"], header["embed_dim"])
    params = ModelParams(
        spec, arrays["word_emb"],
        [arrays[f"conv{m}_W"] for m in spec.region_sizes],
        [arrays[f"conv{m}_b"] for m in spec.region_sizes],
        arrays["proj_W"], arrays["proj_b"], arrays.get("user_emb"),
        list(header["user_ids"]), header["dropout_rate"],
    )
    return Checkpoint(version, header["model"], params, TrainConfig.from_dict(header["config"]),
                      header["vocab_fingerprint"], header["users_fingerprint"], header["epoch"])
