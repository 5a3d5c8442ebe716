"""Versioned binary containers for parameters and optimizer state.

Layout: magic, format version, a length-prefixed JSON header describing the
network spec, step counter, and array table, then the raw little-endian
float32 arrays in table order, then a SHA-256 checksum of everything
before it.  Bytes are a pure function of the content, so identical state
saves to identical files.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import NetworkSpec

MAGIC = b"ATNETBIN"
FORMAT_VERSION = 1
ARRAY_DTYPE = "<f4"


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


class SpecMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    spec: NetworkSpec
    params: dict
    step: int
    optimizer: dict | None  # {"m": {...}, "v": {...}, "t": int, "rejected": int}
    meta: dict


def write_container(path, header: dict, arrays: dict) -> None:
    """Write a generic container; ``arrays`` is an ordered name -> array map."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=ARRAY_DTYPE)
        table.append({"name": name, "shape": list(arr.shape), "dtype": ARRAY_DTYPE})
        blobs.append(arr.tobytes())
    header = dict(header)
    header["format_version"] = FORMAT_VERSION
    header["arrays"] = table
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + len(header_bytes).to_bytes(4, "little") + header_bytes + b"".join(blobs)
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(digest)


def read_container(path):
    """Read and verify a container; returns (header, arrays)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 4 + 32 or not raw.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a valid container")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"checksum mismatch in {path} (file corrupted)")
    hlen = int.from_bytes(body[len(MAGIC) : len(MAGIC) + 4], "little")
    hstart = len(MAGIC) + 4
    header = json.loads(body[hstart : hstart + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported format version {header.get('format_version')} in {path}"
        )
    arrays = {}
    offset = hstart + hlen
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * np.dtype(entry["dtype"]).itemsize
        arr = np.frombuffer(body, dtype=entry["dtype"], count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
        offset += nbytes
    if offset != len(body):
        raise CheckpointError(f"trailing bytes in {path}")
    return header, arrays


def save_checkpoint(path, spec: NetworkSpec, params: dict, step: int,
                    optimizer: dict | None = None, meta: dict | None = None) -> None:
    """Persist parameters (and optionally optimizer moments) losslessly."""
    header = {
        "kind": "checkpoint",
        "spec": spec.descriptor(),
        "step": int(step),
        "meta": meta or {},
    }
    arrays = {f"param/{k}": v for k, v in params.items()}
    if optimizer is not None:
        header["optimizer"] = {"t": optimizer["t"], "rejected": optimizer.get("rejected", 0)}
        for k, v in optimizer["m"].items():
            arrays[f"opt.m/{k}"] = v
        for k, v in optimizer["v"].items():
            arrays[f"opt.v/{k}"] = v
    write_container(path, header, arrays)


def load_checkpoint(path, expect_spec: NetworkSpec | None = None) -> Checkpoint:
    """Load a checkpoint; rejects corrupted files and spec mismatches."""
    header, arrays = read_container(path)
    if header.get("kind") != "checkpoint":
        raise CheckpointError(f"{path} is a {header.get('kind')!r} container, not a checkpoint")
    spec = NetworkSpec.from_descriptor(header["spec"])
    if expect_spec is not None and spec.descriptor() != expect_spec.descriptor():
        raise SpecMismatchError(f"checkpoint spec in {path} does not match the expected spec")
    params = {}
    opt_m = {}
    opt_v = {}
    for name, arr in arrays.items():
        group, key = name.split("/", 1)
        if group == "param":
            params[key] = arr
        elif group == "opt.m":
            opt_m[key] = arr
        elif group == "opt.v":
            opt_v[key] = arr
    optimizer = None
    if "optimizer" in header:
        optimizer = {
            "m": opt_m,
            "v": opt_v,
            "t": header["optimizer"]["t"],
            "rejected": header["optimizer"].get("rejected", 0),
        }
    return Checkpoint(spec, params, header["step"], optimizer, header.get("meta", {}))
