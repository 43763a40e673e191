"""Binary checkpoint format.

Layout::

    b"LNCK" | version: u16 LE | header length: u32 LE | header (UTF-8 JSON) | tensor data

The header lists every tensor as ``{name, shape, dtype: "f32", offset}``
with offsets relative to the start of the data block; tensor data is raw
little-endian float32.  Model tensors are prefixed ``model.``, optimizer
slots ``optim.<slot>.``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointShapeError, CheckpointVersionError, CorruptCheckpointError
from .models import ModelSpec, build_manifest, build_model

MAGIC = b"LNCK"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


@dataclass
class Checkpoint:
    spec: ModelSpec
    class_names: list
    tensors: dict
    epoch: int = 0
    optimizer: dict = field(default_factory=dict)
    optimizer_slots: dict = field(default_factory=dict)
    rng_state: dict = None
    config: dict = field(default_factory=dict)
    manifest: dict = None

    @classmethod
    def capture(cls, graph, spec, class_names, epoch=0, optimizer=None, config=None):
        """Snapshot ``graph`` (and optionally an OptimizerState) by copy."""
        opt, slots = {}, {}
        if optimizer is not None:
            opt = {**optimizer.hyper(), "t": optimizer.t}
            slots = {s: {k: v.copy() for k, v in d.items()} for s, d in optimizer.slots.items()}
        return cls(
            spec=spec,
            class_names=list(class_names),
            tensors={k: v.copy() for k, v in graph.state_dict().items()},
            epoch=epoch,
            optimizer=opt,
            optimizer_slots=slots,
            rng_state=graph.rng.bit_generator.state,
            config=dict(config or {}),
            manifest=build_manifest(graph, spec),
        )

    def graph(self):
        g = build_model(self.spec, initialize=False)
        g.load_state_dict(self.tensors)
        if self.rng_state is not None:
            g.rng.bit_generator.state = self.rng_state
        return g


def save_checkpoint(ckpt, path):
    entries = [(f"model.{k}", v) for k, v in ckpt.tensors.items()]
    for slot, store in ckpt.optimizer_slots.items():
        entries.extend((f"optim.{slot}.{k}", v) for k, v in store.items())
    listing, blobs, offset = [], [], 0
    for name, value in entries:
        blob = np.ascontiguousarray(value, dtype="<f4").tobytes()
        listing.append({"name": name, "shape": list(np.shape(value)), "dtype": "f32", "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "spec": ckpt.spec.to_dict(),
        "class_names": ckpt.class_names,
        "epoch": ckpt.epoch,
        "optimizer": ckpt.optimizer,
        "rng_state": ckpt.rng_state,
        "config": ckpt.config,
        "manifest": ckpt.manifest,
        "tensors": listing,
        "data_bytes": offset,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _PREFIX.size:
        raise CorruptCheckpointError(f"{path}: file too short for a checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size
    if len(raw) < start + hlen:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
        spec = ModelSpec.from_dict(header["spec"])
        listing = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header ({exc})") from exc

    expected = build_model(spec, initialize=False).expected_shapes()
    seen = set()
    for entry in listing:
        name = entry["name"]
        if name.startswith("model."):
            key = name[len("model."):]
            if key not in expected:
                raise CheckpointShapeError(f"{path}: tensor {key!r} not part of the {spec.name} model")
            if tuple(entry["shape"]) != expected[key]:
                raise CheckpointShapeError(
                    f"{path}: tensor {key!r} has shape {tuple(entry['shape'])}, model expects {expected[key]}")
            seen.add(key)
    missing = set(expected) - seen
    if missing:
        raise CheckpointShapeError(f"{path}: missing tensors {sorted(missing)}")

    data = raw[start + hlen:]
    if len(data) != header.get("data_bytes", -1):
        raise CorruptCheckpointError(f"{path}: data block is {len(data)} bytes, header says {header.get('data_bytes')}")
    tensors, slots = {}, {}
    for entry in listing:
        if entry.get("dtype") != "f32":
            raise CorruptCheckpointError(f"{path}: unsupported dtype {entry.get('dtype')!r}")
        count = int(np.prod(entry["shape"], dtype=np.int64))
        off = entry["offset"]
        if off < 0 or off + 4 * count > len(data):
            raise CorruptCheckpointError(f"{path}: tensor {entry['name']!r} runs past end of file")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).astype(np.float64).reshape(entry["shape"])
        name = entry["name"]
        if name.startswith("model."):
            tensors[name[len("model."):]] = arr
        elif name.startswith("optim."):
            _, slot, key = name.split(".", 2)
            slots.setdefault(slot, {})[key] = arr
    return Checkpoint(
        spec=spec,
        class_names=header.get("class_names", []),
        tensors=tensors,
        epoch=header.get("epoch", 0),
        optimizer=header.get("optimizer", {}),
        optimizer_slots=slots,
        rng_state=header.get("rng_state"),
        config=header.get("config", {}),
        manifest=header.get("manifest"),
    )
