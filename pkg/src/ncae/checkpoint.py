"""Checkpoint files: a JSON header followed by raw little-endian float64
parameter blocks.

Layout::

    b"NCAE-CKPT\\n" | uint64 header length | header JSON (UTF-8) | arrays

The header lists layer dimensions, mode, orientation, the training and run
configuration, the user/item index maps, and the shape and byte offset of
every array. Writing is deterministic, so identical models produce identical
files.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CompatibilityError
from .model import ModelParams

MAGIC = b"NCAE-CKPT\n"
VERSION = 1


@dataclass
class Checkpoint:
    params: ModelParams
    mode: str
    orientation: str
    config: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)
    user_ids: list[str] | None = None
    item_ids: list[str] | None = None


def save_checkpoint(ck: Checkpoint, path: str | Path) -> None:
    arrays = ck.params.arrays()
    blocks, offset = [], 0
    for a in arrays:
        blocks.append({"shape": list(a.shape), "offset": offset})
        offset += a.size * 8
    header = {
        "version": VERSION,
        "dims": ck.params.dims,
        "mode": ck.mode,
        "orientation": ck.orientation,
        "config": ck.config,
        "run": ck.run,
        "user_ids": ck.user_ids,
        "item_ids": ck.item_ids,
        "arrays": blocks,
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CompatibilityError(f"{path} is not a checkpoint file")
    try:
        return _decode(data)
    except CompatibilityError:
        raise
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        raise CompatibilityError(f"{path} is damaged: {exc}") from None


def _decode(data: bytes) -> Checkpoint:
    pos = len(MAGIC)
    (n,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    header = json.loads(data[pos : pos + n].decode("utf-8"))
    pos += n
    if header.get("version") != VERSION:
        raise CompatibilityError(f"unsupported checkpoint version {header.get('version')}")
    arrays = []
    for block in header["arrays"]:
        shape = tuple(block["shape"])
        count = int(np.prod(shape))
        start = pos + block["offset"]
        arrays.append(np.frombuffer(data, dtype="<f8", count=count, offset=start).reshape(shape).astype(np.float64))
    params = ModelParams(arrays[0::2], arrays[1::2])
    if params.dims != header["dims"]:
        raise CompatibilityError("checkpoint header dims disagree with stored arrays")
    return Checkpoint(
        params=params,
        mode=header["mode"],
        orientation=header["orientation"],
        config=header["config"],
        run=header["run"],
        user_ids=header["user_ids"],
        item_ids=header["item_ids"],
    )
