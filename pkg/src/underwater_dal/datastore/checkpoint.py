"""Binary checkpoint.

Layout, all integers little-endian::

    b"UIEDAL01"
    u32 config length, config JSON (UTF-8, sorted keys, compact separators)
    u32 tensor count
    per tensor, sorted by name:
        u16 name length, name (UTF-8), u8 ndim, ndim x u32 dims, float32 payload (row-major)

Optimizer moments are stored as tensors named ``adam.<group>.<m|v>/<parameter>``.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from ..lib.errors import CorruptionError, FormatError, ShapeError
from ..lib.io_util import atomic_write_bytes
from ..models.networks import ArchitectureConfig, ModelBundle, build_graphs
from ..nn.optim import AdamState

logger = logging.getLogger(__name__)

MAGIC = b"UIEDAL01"
FORMAT_VERSION = 1
ADAM_GROUPS = ("eg", "d")


@dataclass
class TrainingState:
    """Where a run stands after ``epoch`` completed main-loop epochs (0 before the first).

    ``val_g`` / ``val_d`` are the scores the next epoch decides its mode from.
    """

    seed: int = 0
    epoch: int = 0
    warmup_done: bool = False
    warmup_epochs: int = 0
    val_g: Optional[float] = None
    val_d: Optional[float] = None
    adam_eg: AdamState = field(default_factory=AdamState)
    adam_d: AdamState = field(default_factory=AdamState)

    def adam(self, group: str) -> AdamState:
        return {"eg": self.adam_eg, "d": self.adam_d}[group]

    def to_dict(self):
        return {
            "seed": self.seed,
            "epoch": self.epoch,
            "warmup_done": self.warmup_done,
            "warmup_epochs": self.warmup_epochs,
            "val_g": self.val_g,
            "val_d": self.val_d,
            "adam_eg_t": self.adam_eg.t,
            "adam_d_t": self.adam_d.t,
        }


@dataclass
class Checkpoint:
    architecture: ArchitectureConfig
    params: Dict[str, np.ndarray]
    state: TrainingState
    training: dict = field(default_factory=dict)
    with_classifier: bool = True

    @classmethod
    def from_bundle(cls, bundle: ModelBundle, state: TrainingState, training: dict = None) -> "Checkpoint":
        return cls(bundle.config, bundle.state_dict(), state, dict(training or {}), bundle.classifier is not None)

    def to_bundle(self) -> ModelBundle:
        bundle = build_graphs(self.architecture, self.with_classifier)
        bundle.load_state_dict(self.params)
        return bundle


def _tensor_items(ckpt: Checkpoint):
    items = {name: value for name, value in ckpt.params.items()}
    for group in ADAM_GROUPS:
        adam = ckpt.state.adam(group)
        for name, value in adam.m.items():
            items[f"adam.{group}.m/{name}"] = value
        for name, value in adam.v.items():
            items[f"adam.{group}.v/{name}"] = value
    return sorted(items.items())


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    config = {
        "format_version": FORMAT_VERSION,
        "architecture": ckpt.architecture.to_dict(),
        "training": ckpt.training,
        "with_classifier": ckpt.with_classifier,
        "state": ckpt.state.to_dict(),
    }
    config_bytes = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    items = _tensor_items(ckpt)
    chunks = [MAGIC, struct.pack("<I", len(config_bytes)), config_bytes, struct.pack("<I", len(items))]
    for name, value in items:
        value = np.asarray(value)
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<B", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, payload: bytes, filename: str):
        self.payload = payload
        self.offset = 0
        self.filename = filename

    def take(self, n: int, what: str) -> bytes:
        end = self.offset + n
        if end > len(self.payload):
            raise CorruptionError(f"{self.filename}: truncated while reading {what} at byte {self.offset}")
        chunk = self.payload[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(payload: bytes, filename="<bytes>") -> Checkpoint:
    reader = _Reader(payload, filename)
    if len(payload) < len(MAGIC) or payload[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{filename}: not a checkpoint (magic {payload[:len(MAGIC)]!r})")
    reader.offset = len(MAGIC)
    (config_len,) = reader.unpack("<I", "config length")
    try:
        config = json.loads(reader.take(config_len, "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptionError(f"{filename}: unreadable config: {e}") from None
    if config.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{filename}: unsupported format version {config.get('format_version')!r}")

    (count,) = reader.unpack("<I", "tensor count")
    tensors = {}
    for i in range(count):
        (name_len,) = reader.unpack("<H", f"name length of tensor {i}")
        name = reader.take(name_len, f"name of tensor {i}").decode("utf-8")
        (ndim,) = reader.unpack("<B", f"rank of {name}")
        dims = reader.unpack(f"<{ndim}I", f"shape of {name}")
        n = int(np.prod(dims, dtype=np.int64))
        raw = reader.take(4 * n, f"payload of {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
    if reader.offset != len(payload):
        raise CorruptionError(f"{filename}: {len(payload) - reader.offset} trailing bytes after the last tensor")

    architecture = ArchitectureConfig.from_dict(config["architecture"])
    s = config["state"]
    state = TrainingState(
        seed=int(s["seed"]),
        epoch=int(s["epoch"]),
        warmup_done=bool(s["warmup_done"]),
        warmup_epochs=int(s["warmup_epochs"]),
        val_g=s["val_g"],
        val_d=s["val_d"],
        adam_eg=AdamState(t=int(s["adam_eg_t"])),
        adam_d=AdamState(t=int(s["adam_d_t"])),
    )
    params = {}
    for name, value in tensors.items():
        if name.startswith("adam."):
            prefix, pname = name.split("/", 1)
            _, group, moment = prefix.split(".")
            getattr(state.adam(group), moment)[pname] = value
        else:
            params[name] = value

    with_classifier = bool(config.get("with_classifier", True))
    expected = build_graphs(architecture, with_classifier).registry
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise FormatError(f"{filename}: parameter names do not match the architecture (missing {missing}, unexpected {extra})")
    for name, value in params.items():
        if value.shape != expected[name].shape:
            raise ShapeError(f"{filename}: {name} has shape {value.shape}, architecture expects {expected[name].shape}")
    return Checkpoint(architecture, params, state, config.get("training", {}), with_classifier)


def save_checkpoint(ckpt: Checkpoint, filename: str):
    atomic_write_bytes(filename, encode_checkpoint(ckpt), f"checkpoint (epoch {ckpt.state.epoch})")


def load_checkpoint(filename: str) -> Checkpoint:
    with open(filename, "rb") as f:
        payload = f.read()
    ckpt = decode_checkpoint(payload, filename)
    logger.debug(f"Loaded checkpoint of epoch {ckpt.state.epoch} from {filename}")
    return ckpt
