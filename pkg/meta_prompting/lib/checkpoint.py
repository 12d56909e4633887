"""
Binary checkpoints.

Layout, all integers little-endian::

    b"MPCK" | u32 format version | u64 header length | JSON header
    | float64 payload | SHA-256 of everything before it

The header lists every tensor (parameters first, then optimizer moments) with
its shape and offset into the payload, together with the model spec hash, the
optimizer step, the sampler RNG state, the epoch counter and free-form
metadata.
"""

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from os import PathLike
from typing import Any, Optional, Union

import numpy as np

from meta_prompting.autodiff import Tensor
from meta_prompting.meta_opt.optimizers import OptimizerState
from meta_prompting.models.exceptions import (
    CheckpointIntegrityError,
    CheckpointSpecMismatchError,
    CheckpointVersionError,
)
from meta_prompting.params import ParamSet, Partition

logger = logging.getLogger(__name__)

MAGIC = b"MPCK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_DIGEST_SIZE = hashlib.sha256().digest_size


@dataclass
class Checkpoint:
    params: ParamSet
    spec_hash: str
    optimizer_state: OptimizerState = field(default_factory=OptimizerState)
    rng_state: Optional[dict[str, Any]] = None
    epoch: int = 0
    extra: dict[str, Any] = field(default_factory=dict)


def _table(arrays: dict[str, np.ndarray], start: int) -> tuple[list[dict[str, Any]], int]:
    entries, offset = [], start
    for name, value in arrays.items():
        entries.append({"name": name, "shape": list(value.shape), "offset": offset, "count": int(value.size)})
        offset += int(value.size)
    return entries, offset


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    params = checkpoint.params
    tensors = {name: np.asarray(t.data, dtype=np.float64) for name, t in params.items()}
    moments = {k: np.asarray(v, dtype=np.float64) for k, v in sorted(checkpoint.optimizer_state.moments.items())}
    tensor_table, end = _table(tensors, 0)
    for entry in tensor_table:
        entry["partition"] = params.partition_of(entry["name"]).value
    moment_table, _ = _table(moments, end)
    header = {
        "version": FORMAT_VERSION,
        "spec_hash": checkpoint.spec_hash,
        "tensors": tensor_table,
        "trainable": {p.value: flag for p, flag in params.trainable.items()},
        "optimizer": {"step": checkpoint.optimizer_state.step, "moments": moment_table},
        "rng_state": checkpoint.rng_state,
        "epoch": checkpoint.epoch,
        "extra": checkpoint.extra,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    arrays = list(tensors.values()) + list(moments.values())
    payload = np.concatenate([a.reshape(-1) for a in arrays]) if arrays else np.zeros(0)
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes + payload.astype("<f8").tobytes()
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(blob: bytes, expected_spec_hash: Optional[str] = None) -> Checkpoint:
    """
    :raises CheckpointIntegrityError: bad magic, truncated or corrupted data
    :raises CheckpointVersionError: a format version this build does not read
    :raises CheckpointSpecMismatchError: written for another model spec
    """
    if len(blob) < _PREFIX.size + _DIGEST_SIZE:
        raise CheckpointIntegrityError(f"checkpoint is truncated ({len(blob)} bytes)")
    magic, version, header_length = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointIntegrityError("not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(version, FORMAT_VERSION)
    body, digest = blob[:-_DIGEST_SIZE], blob[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointIntegrityError("checksum mismatch, the checkpoint is truncated or corrupted")
    header_end = _PREFIX.size + header_length
    if header_end > len(body):
        raise CheckpointIntegrityError("header runs past the end of the file")
    try:
        header = json.loads(body[_PREFIX.size : header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointIntegrityError(f"unreadable header: {e}") from e

    if expected_spec_hash is not None and header["spec_hash"] != expected_spec_hash:
        raise CheckpointSpecMismatchError(header["spec_hash"], expected_spec_hash)

    payload = np.frombuffer(body[header_end:], dtype="<f8")
    entries = header["tensors"] + header["optimizer"]["moments"]
    expected = sum(e["count"] for e in entries)
    if payload.size != expected or (len(body) - header_end) % 8:
        raise CheckpointIntegrityError(f"payload holds {payload.size} values, header describes {expected}")

    def read(entry: dict[str, Any]) -> np.ndarray:
        start = entry["offset"]
        return payload[start : start + entry["count"]].astype(np.float64).reshape(entry["shape"])

    params = ParamSet(
        {e["name"]: Tensor(read(e)) for e in header["tensors"]},
        {e["name"]: Partition(e["partition"]) for e in header["tensors"]},
        {Partition(k): v for k, v in header["trainable"].items()},
    )
    state = OptimizerState(header["optimizer"]["step"], {e["name"]: read(e) for e in header["optimizer"]["moments"]})
    return Checkpoint(
        params=params,
        spec_hash=header["spec_hash"],
        optimizer_state=state,
        rng_state=header["rng_state"],
        epoch=header["epoch"],
        extra=header["extra"],
    )


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, PathLike]) -> None:
    """Write ``checkpoint`` to ``path``; the previous file is replaced only once the new one is complete."""
    path = os.fspath(path)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as f:
        f.write(encode_checkpoint(checkpoint))
    os.replace(tmp_path, path)
    logger.debug(f"Saved checkpoint (epoch {checkpoint.epoch}) to {path}")


def load_checkpoint(path: Union[str, PathLike], expected_spec_hash: Optional[str] = None) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    checkpoint = decode_checkpoint(blob, expected_spec_hash)
    logger.info(f"Loaded checkpoint {path} (epoch {checkpoint.epoch})")
    return checkpoint
