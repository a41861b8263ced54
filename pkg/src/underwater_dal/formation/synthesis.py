import hashlib
import logging
import os
from dataclasses import asdict, dataclass
from typing import List, Sequence

import numpy as np
from scipy import ndimage
from tqdm import tqdm

from ..lib.errors import ConfigError, InvalidInputError
from ..lib.io_util import (
    DEPTH_UNITS_M,
    list_files,
    read_depth_png,
    read_rgb_png,
    write_depth_png,
    write_rgb_png,
)
from .model import DegradationParams, DegradedSample, SceneSample, degrade_image
from .water_types import WaterTypeTable

logger = logging.getLogger(__name__)

DRAWS_PER_TYPE = 6


@dataclass
class SynthesisConfig:
    """Uniform ranges of the random degradation parameters.

    Depth is normalised to [0, 1] per scene before ``depth_scale`` and ``depth_offset`` apply.
    """

    background_lo: float = 0.1
    background_hi: float = 0.9
    scale_lo: float = 0.5
    scale_hi: float = 3.0
    offset_lo: float = 0.0
    offset_hi: float = 0.5

    def validate(self):
        pairs = [
            ("background", self.background_lo, self.background_hi),
            ("scale", self.scale_lo, self.scale_hi),
            ("offset", self.offset_lo, self.offset_hi),
        ]
        for name, lo, hi in pairs:
            if not lo <= hi:
                raise ConfigError(f"{name} range is inverted: [{lo}, {hi}]")
        if self.background_lo < 0 or self.background_hi > 1:
            raise ConfigError(f"background range must lie in [0, 1], got [{self.background_lo}, {self.background_hi}]")
        if self.scale_lo <= 0:
            raise ConfigError(f"scale range must be positive, got lower bound {self.scale_lo}")
        if self.offset_lo < 0:
            raise ConfigError(f"offset range must be nonnegative, got lower bound {self.offset_lo}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synthesis config keys: {sorted(unknown)}")
        return cls(**d).validate()


def sample_degradation_params(rng: np.random.Generator, config: SynthesisConfig) -> DegradationParams:
    """Draw background light and depth transform from the configured ranges

    Args:
        rng (np.random.Generator): seeded generator
        config (SynthesisConfig): ranges

    Returns:
        DegradationParams: one draw
    """
    config.validate()
    background = rng.uniform(config.background_lo, config.background_hi, size=3)
    scale = rng.uniform(config.scale_lo, config.scale_hi)
    offset = rng.uniform(config.offset_lo, config.offset_hi)
    return DegradationParams(tuple(background), scale, offset)


def derive_sample_seed(master_seed: int, scene_id: str, class_id: int, draw_index: int) -> int:
    """Seed of a single synthesis draw, independent of the order draws are made in"""
    key = f"{master_seed}:{scene_id}:{class_id}:{draw_index}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def normalize_depth(depth: np.ndarray) -> np.ndarray:
    """Min-max rescale a depth map to [0, 1]; a constant map becomes zeros"""
    depth = np.asarray(depth, dtype=np.float64)
    lo, hi = depth.min(), depth.max()
    if hi - lo <= 0:
        return np.zeros_like(depth)
    return (depth - lo) / (hi - lo)


def synthesize_dataset(
    scenes: Sequence[SceneSample],
    specs: WaterTypeTable,
    draws_per_type: int = DRAWS_PER_TYPE,
    seed: int = 0,
    config: SynthesisConfig = None,
    progress=False,
) -> List[DegradedSample]:
    """Degrade every scene under every water type ``draws_per_type`` times

    Args:
        scenes (Sequence[SceneSample]): clear images with depth
        specs (WaterTypeTable): the six water types
        draws_per_type (int, optional): augmentations per (scene, water type). Defaults to 6.
        seed (int, optional): master seed. Defaults to 0.
        config (SynthesisConfig, optional): parameter ranges. Defaults to SynthesisConfig().
        progress (bool, optional): show a progress bar. Defaults to False.

    Returns:
        List[DegradedSample]: ordered by scene, class, draw
    """
    config = (config or SynthesisConfig()).validate()
    if len(scenes) == 0:
        raise ConfigError("no scenes to synthesize from")
    if draws_per_type < 1:
        raise ConfigError(f"draws_per_type must be >= 1, got {draws_per_type}")

    samples = []
    for scene in tqdm(scenes, desc="synthesize", disable=not progress):
        normalized = SceneSample(scene.clear, normalize_depth(scene.depth), scene.scene_id)
        for spec in specs:
            for draw in range(draws_per_type):
                rng = np.random.default_rng(derive_sample_seed(seed, scene.scene_id, spec.class_id, draw))
                params = sample_degradation_params(rng, config)
                samples.append(degrade_image(normalized, spec, params, draw))
    logger.info(f"Synthesized {len(samples)} samples from {len(scenes)} scene(s)")
    return samples


def make_procedural_scene(scene_id: str, size: int, rng: np.random.Generator) -> SceneSample:
    """Generate a clear image and a plausible depth map

    The image is a smooth colour field with a few flat-coloured discs and boxes, the depth a tilted
    plane with Gaussian bumps between 1 and 10 meters.

    Args:
        scene_id (str): content label
        size (int): image height and width
        rng (np.random.Generator): seeded generator

    Returns:
        SceneSample: the scene
    """
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    noise = rng.uniform(0.0, 1.0, size=(size, size, 3))
    field = ndimage.gaussian_filter(noise, sigma=(size / 6, size / 6, 0), mode="wrap")
    field = (field - field.min()) / max(field.max() - field.min(), 1e-12)
    clear = 0.15 + 0.7 * field
    for _ in range(rng.integers(2, 5)):
        color = rng.uniform(0.0, 1.0, size=3)
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        r = rng.uniform(0.08, 0.25)
        if rng.uniform() < 0.5:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r**2
        else:
            mask = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r * rng.uniform(0.5, 1.5))
        clear[mask] = color

    gy, gx = rng.uniform(-1.0, 1.0, size=2)
    depth = 1.0 + 4.0 * (1.0 + gy * (yy - 0.5) + gx * (xx - 0.5))
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0.0, 1.0, size=2)
        width = rng.uniform(0.1, 0.3)
        depth -= rng.uniform(0.5, 2.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
    depth = np.clip(depth, 1.0, 10.0)
    return SceneSample(np.clip(clear, 0.0, 1.0), depth, scene_id)


def make_procedural_scenes(count: int, size: int, seed: int) -> List[SceneSample]:
    return [
        make_procedural_scene(f"p{i:05d}", size, np.random.default_rng([seed, i]))
        for i in range(count)
    ]


def scene_paths(directory: str, scene_id: str):
    return (
        os.path.join(directory, f"{scene_id}_rgb.png"),
        os.path.join(directory, f"{scene_id}_depth.png"),
    )


def save_scene(scene: SceneSample, directory: str, units=DEPTH_UNITS_M):
    rgb_path, depth_path = scene_paths(directory, scene.scene_id)
    write_rgb_png(rgb_path, scene.clear)
    write_depth_png(depth_path, scene.depth, units)
    logger.debug(f"Save scene {scene.scene_id} to {directory}")
    return rgb_path, depth_path


def load_scenes(directory: str, units=DEPTH_UNITS_M) -> List[SceneSample]:
    """Read ``<id>_rgb.png`` / ``<id>_depth.png`` pairs from a directory

    Args:
        directory (str): scene directory
        units (float, optional): meters per raw depth unit. Defaults to 1/1000.

    Returns:
        List[SceneSample]: scenes sorted by id
    """
    scenes = []
    for name in list_files(directory, "_rgb.png"):
        scene_id = name[: -len("_rgb.png")]
        rgb_path, depth_path = scene_paths(directory, scene_id)
        if not os.path.exists(depth_path):
            raise InvalidInputError(f"scene {scene_id} has no depth map {depth_path}")
        scenes.append(SceneSample(read_rgb_png(rgb_path), read_depth_png(depth_path, units), scene_id))
    logger.info(f"Loaded {len(scenes)} scene(s) from {directory}")
    return scenes
