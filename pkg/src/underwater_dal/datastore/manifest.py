"""JSON-lines dataset manifest and split assignment."""

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from ..formation.model import DegradationParams, DegradedSample, SceneSample
from ..formation.water_types import NUM_CLASSES
from ..lib.errors import (
    DanglingReferenceError,
    InvalidInputError,
    ManifestParseError,
    SplitError,
    UnderwaterDALError,
)
from ..lib.io_util import (
    DEPTH_UNITS_M,
    atomic_write_text,
    read_rgb_png,
    write_depth_png,
    write_rgb_png,
)

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.jsonl"


def assign_split(scene_id: str) -> str:
    """80/10/10 split from the SHA-256 of the scene id; every variant of a scene shares it"""
    bucket = int.from_bytes(hashlib.sha256(scene_id.encode("utf-8")).digest()[:8], "big") % 100
    if bucket < 80:
        return "train"
    if bucket < 90:
        return "val"
    return "test"


@dataclass(frozen=True)
class ManifestEntry:
    """One degraded sample; paths are relative to the manifest directory."""

    degraded_path: str
    clear_path: str
    depth_path: str
    class_id: int
    params: DegradationParams
    scene_id: str
    draw_index: int
    split: str
    depth_units: float = DEPTH_UNITS_M

    def __post_init__(self):
        if not 0 <= self.class_id < NUM_CLASSES:
            raise InvalidInputError(f"class_id {self.class_id} outside [0, {NUM_CLASSES - 1}]")
        if self.split not in SPLITS:
            raise InvalidInputError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.draw_index < 0:
            raise InvalidInputError(f"draw_index must be nonnegative, got {self.draw_index}")
        if not self.depth_units > 0:
            raise InvalidInputError(f"depth_units must be positive, got {self.depth_units}")

    @property
    def paths(self):
        return (self.degraded_path, self.clear_path, self.depth_path)

    def to_dict(self):
        return {
            "degraded_path": self.degraded_path,
            "clear_path": self.clear_path,
            "depth_path": self.depth_path,
            "class_id": self.class_id,
            "params": self.params.to_dict(),
            "scene_id": self.scene_id,
            "draw_index": self.draw_index,
            "split": self.split,
            "depth_units": self.depth_units,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            degraded_path=str(d["degraded_path"]),
            clear_path=str(d["clear_path"]),
            depth_path=str(d["depth_path"]),
            class_id=int(d["class_id"]),
            params=DegradationParams.from_dict(d["params"]),
            scene_id=str(d["scene_id"]),
            draw_index=int(d["draw_index"]),
            split=str(d["split"]),
            depth_units=float(d.get("depth_units", DEPTH_UNITS_M)),
        )


def _check_references(entries: Sequence[ManifestEntry], root: str):
    missing = {
        os.path.join(root, p) for e in entries for p in e.paths if not os.path.exists(os.path.join(root, p))
    }
    if missing:
        raise DanglingReferenceError(missing)


def write_manifest(entries: Sequence[ManifestEntry], filename: str):
    """Write one JSON object per line, keys sorted

    Args:
        entries (Sequence[ManifestEntry]): records, written in order
        filename (str): manifest path; entry paths resolve against its directory
    """
    root = os.path.dirname(os.path.abspath(filename))
    _check_references(entries, root)
    text = "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in entries)
    atomic_write_text(filename, text, f"manifest of {len(entries)} entries")


def read_manifest(filename: str) -> List[ManifestEntry]:
    """Parse a manifest and check that every referenced file exists

    Args:
        filename (str): manifest path

    Returns:
        List[ManifestEntry]: records in file order
    """
    entries = []
    with open(filename, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                if not isinstance(record, dict):
                    raise TypeError(f"expected an object, got {type(record).__name__}")
                entries.append(ManifestEntry.from_dict(record))
            except (ValueError, KeyError, TypeError) as e:
                if isinstance(e, UnderwaterDALError) and not isinstance(e, InvalidInputError):
                    raise
                reason = f"missing field {e}" if isinstance(e, KeyError) else str(e)
                raise ManifestParseError(filename, line_number, reason) from None
    _check_references(entries, os.path.dirname(os.path.abspath(filename)))
    logger.debug(f"Read {len(entries)} entries from {filename}")
    return entries


def sample_filename(scene_id: str, class_id: int, draw_index: int) -> str:
    return os.path.join("degraded", f"{scene_id}_c{class_id}_d{draw_index}.png")


def write_dataset(
    scenes: Sequence[SceneSample],
    samples: Sequence[DegradedSample],
    out_dir: str,
    units=DEPTH_UNITS_M,
    progress=False,
) -> List[ManifestEntry]:
    """Write degraded images, clear references, depth maps and the manifest

    Layout under ``out_dir``: ``degraded/<scene>_c<class>_d<draw>.png``, ``clear/<scene>.png``,
    ``depth/<scene>.png`` and ``manifest.jsonl``.

    Args:
        scenes (Sequence[SceneSample]): source scenes
        samples (Sequence[DegradedSample]): synthesized samples of those scenes
        out_dir (str): dataset directory
        units (float, optional): meters per raw depth unit. Defaults to 1/1000.
        progress (bool, optional): show a progress bar. Defaults to False.

    Returns:
        List[ManifestEntry]: the manifest records
    """
    by_id: Dict[str, SceneSample] = {s.scene_id: s for s in scenes}
    for scene in scenes:
        write_rgb_png(os.path.join(out_dir, "clear", f"{scene.scene_id}.png"), scene.clear)
        write_depth_png(os.path.join(out_dir, "depth", f"{scene.scene_id}.png"), scene.depth, units)

    entries = []
    for sample in tqdm(samples, desc="write", disable=not progress):
        if sample.scene_id not in by_id:
            raise InvalidInputError(f"sample refers to unknown scene {sample.scene_id!r}")
        rel = sample_filename(sample.scene_id, sample.class_id, sample.draw_index)
        write_rgb_png(os.path.join(out_dir, rel), sample.degraded)
        entries.append(
            ManifestEntry(
                degraded_path=rel,
                clear_path=os.path.join("clear", f"{sample.scene_id}.png"),
                depth_path=os.path.join("depth", f"{sample.scene_id}.png"),
                class_id=sample.class_id,
                params=sample.params,
                scene_id=sample.scene_id,
                draw_index=sample.draw_index,
                split=assign_split(sample.scene_id),
                depth_units=units,
            )
        )
    logger.info(f"Save {len(entries)} degraded images to {os.path.join(out_dir, 'degraded')}")
    write_manifest(entries, os.path.join(out_dir, MANIFEST_NAME))
    return entries


@dataclass
class SampleSet:
    """Decoded images of a manifest split.

    Attributes:
        degraded (np.ndarray): (N, H, W, 3) float32 in [0, 1]
        clear (np.ndarray): (N, H, W, 3) float32 in [0, 1]
        class_ids (np.ndarray): (N,) int64
        scene_ids (List[str]): content label per sample
        draw_indices (np.ndarray): (N,) int64
    """

    degraded: np.ndarray
    clear: np.ndarray
    class_ids: np.ndarray
    scene_ids: List[str]
    draw_indices: np.ndarray

    def __post_init__(self):
        n = len(self.degraded)
        if not (len(self.clear) == len(self.class_ids) == len(self.scene_ids) == len(self.draw_indices) == n):
            raise InvalidInputError("sample set fields differ in length")
        if self.degraded.shape != self.clear.shape:
            raise InvalidInputError(f"degraded {self.degraded.shape} and clear {self.clear.shape} differ in shape")

    def __len__(self):
        return len(self.degraded)

    def subset(self, index) -> "SampleSet":
        index = np.asarray(index)
        return SampleSet(
            self.degraded[index],
            self.clear[index],
            self.class_ids[index],
            [self.scene_ids[i] for i in np.arange(len(self))[index]],
            self.draw_indices[index],
        )

    @classmethod
    def from_samples(cls, scenes: Sequence[SceneSample], samples: Sequence[DegradedSample]) -> "SampleSet":
        by_id = {s.scene_id: s for s in scenes}
        return cls(
            np.stack([s.degraded for s in samples]).astype(np.float32),
            np.stack([by_id[s.scene_id].clear for s in samples]).astype(np.float32),
            np.array([s.class_id for s in samples], dtype=np.int64),
            [s.scene_id for s in samples],
            np.array([s.draw_index for s in samples], dtype=np.int64),
        )


def load_sample_set(filename: str, split: Optional[str] = None, progress=False) -> SampleSet:
    """Decode the images of one split of a manifest

    Args:
        filename (str): manifest path
        split (str, optional): train, val or test; every entry when None
        progress (bool, optional): show a progress bar. Defaults to False.

    Returns:
        SampleSet: decoded images in manifest order
    """
    if split is not None and split not in SPLITS:
        raise InvalidInputError(f"split must be one of {SPLITS}, got {split!r}")
    root = os.path.dirname(os.path.abspath(filename))
    entries = [e for e in read_manifest(filename) if split is None or e.split == split]
    if not entries:
        raise SplitError(f"{filename}: no entries in split {split or 'any'}")

    clear_cache = {}
    degraded, clear = [], []
    for e in tqdm(entries, desc=f"load {split or 'all'}", disable=not progress):
        degraded.append(read_rgb_png(os.path.join(root, e.degraded_path)))
        if e.clear_path not in clear_cache:
            clear_cache[e.clear_path] = read_rgb_png(os.path.join(root, e.clear_path))
        clear.append(clear_cache[e.clear_path])
    samples = SampleSet(
        np.stack(degraded).astype(np.float32),
        np.stack(clear).astype(np.float32),
        np.array([e.class_id for e in entries], dtype=np.int64),
        [e.scene_id for e in entries],
        np.array([e.draw_index for e in entries], dtype=np.int64),
    )
    logger.info(f"Loaded {len(samples)} samples ({split or 'all splits'}) from {filename}")
    return samples
