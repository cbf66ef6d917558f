"""Self-describing checkpoint files with bit-exact round trips.

Layout (all integers little-endian)::

    magic  b"MBCCKPT\\0"
    u32    format version
    u64    header length
    header canonical JSON: kind, config text, tau, rng states, counters,
           meta and the block index (name, shape) in storage order
    data   each block as float64 little-endian, in index order
    sha256 of every preceding byte
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"MBCCKPT\x00"
FORMAT_VERSION = 1
_DIGEST = 32

# blocks a file of each kind must carry
REQUIRED_BLOCKS: dict[str, tuple[str, ...]] = {
    "stage1": ("blind/actor", "blind/log_std", "blind/critic", "priv_encoder", "history_encoder", "vae"),
    "stage2": ("blind/actor", "blind/log_std", "blind/critic", "percep/actor", "percep/log_std",
               "percep/critic", "priv_encoder", "history_encoder", "vae"),
}


class CheckpointError(Exception):
    pass


class FormatVersionError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class BlockShapeError(CheckpointError):
    pass


class SchemaError(CheckpointError):
    pass


@dataclass
class Bundle:
    kind: str
    config_text: str
    blocks: dict[str, np.ndarray] = field(default_factory=dict)
    tau: float | None = None
    rng_states: dict[str, Any] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)

    def block(self, name: str, shape: tuple[int, ...] | None = None) -> np.ndarray:
        if name not in self.blocks:
            raise SchemaError(f"{self.kind} checkpoint has no block {name!r}")
        arr = self.blocks[name]
        if shape is not None and tuple(arr.shape) != tuple(shape):
            raise BlockShapeError(f"block {name!r} has shape {arr.shape}, expected {tuple(shape)}")
        return arr


def _canonical(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True).encode("utf-8")


def encode_bundle(bundle: Bundle) -> bytes:
    names = sorted(bundle.blocks)
    arrays = [np.asarray(bundle.blocks[n], dtype="<f8", order="C") for n in names]
    header = {
        "kind": bundle.kind,
        "config": bundle.config_text,
        "tau": bundle.tau,
        "rng_states": bundle.rng_states,
        "counters": bundle.counters,
        "meta": bundle.meta,
        "blocks": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)],
    }
    head = _canonical(header)
    parts = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(head)), head]
    parts.extend(a.tobytes() for a in arrays)
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode_bundle(raw: bytes) -> Bundle:
    if len(raw) < len(MAGIC) + 12 + _DIGEST or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    version, head_len = struct.unpack_from("<IQ", raw, len(MAGIC))
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"format version {version}, this build reads {FORMAT_VERSION}")
    body, digest = raw[:-_DIGEST], raw[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checksum mismatch; file is corrupted")
    start = len(MAGIC) + 12
    try:
        header = json.loads(body[start:start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"unreadable header: {exc}") from exc
    for key in ("kind", "config", "tau", "rng_states", "counters", "meta", "blocks"):
        if key not in header:
            raise SchemaError(f"header lacks {key!r}")
    offset = start + head_len
    blocks: dict[str, np.ndarray] = {}
    for entry in header["blocks"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = 8 * count
        if offset + nbytes > len(body):
            raise BlockShapeError(f"block {entry['name']!r} with shape {shape} overruns the data section")
        blocks[entry["name"]] = np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(body):
        raise BlockShapeError(f"{len(body) - offset} trailing bytes do not belong to any block")
    tau = header["tau"]
    return Bundle(header["kind"], header["config"], blocks, None if tau is None else float(tau),
                  header["rng_states"], {k: int(v) for k, v in header["counters"].items()}, header["meta"])


def validate_schema(bundle: Bundle, kind: str | None = None) -> None:
    if kind is not None and bundle.kind != kind:
        raise SchemaError(f"expected a {kind} checkpoint, found {bundle.kind}")
    for name in REQUIRED_BLOCKS.get(bundle.kind, ()):
        if name not in bundle.blocks:
            raise SchemaError(f"{bundle.kind} checkpoint is missing block {name!r}")
    if bundle.kind in REQUIRED_BLOCKS:
        if bundle.tau is None:
            raise SchemaError(f"{bundle.kind} checkpoint has no tau")
        if not bundle.tau >= 0:
            raise SchemaError(f"tau must be non-negative, got {bundle.tau}")


def save_checkpoint(bundle: Bundle, path: str | Path) -> None:
    """Write atomically: a temp file in the target directory, then rename."""
    path = Path(path)
    data = encode_bundle(bundle)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path, kind: str | None = None) -> Bundle:
    raw = Path(path).read_bytes()
    bundle = decode_bundle(raw)
    validate_schema(bundle, kind)
    return bundle


# -- generator state ---------------------------------------------------------

def rng_state(rng: np.random.Generator) -> dict[str, Any]:
    return rng.bit_generator.state


def restore_rng(state: dict[str, Any]) -> np.random.Generator:
    name = state["bit_generator"]
    bitgen = getattr(np.random, name)()
    bitgen.state = state
    return np.random.Generator(bitgen)
