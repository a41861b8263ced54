"""Underwater image formation: U = I * T + B * (1 - T) with T = N ** d."""

from dataclasses import dataclass

import numpy as np

from ..lib.errors import IllConditionedError, InvalidInputError
from .water_types import NUM_CLASSES, WaterTypeSpec

T_MIN = 1e-3


@dataclass
class SceneSample:
    """Clear image with its depth map

    Attributes:
        clear (np.ndarray): H x W x 3, values in [0, 1]
        depth (np.ndarray): H x W, nonnegative meters
        scene_id (str): content label
    """

    clear: np.ndarray
    depth: np.ndarray
    scene_id: str

    def __post_init__(self):
        self.clear = np.asarray(self.clear, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.clear.ndim != 3 or self.clear.shape[2] != 3:
            raise InvalidInputError(f"scene {self.scene_id}: clear must be H x W x 3, got {self.clear.shape}")
        if self.depth.shape != self.clear.shape[:2]:
            raise InvalidInputError(
                f"scene {self.scene_id}: depth {self.depth.shape} does not match image {self.clear.shape[:2]}"
            )
        _check_depth(self.depth)
        if self.clear.min() < 0 or self.clear.max() > 1:
            raise InvalidInputError(f"scene {self.scene_id}: clear values outside [0, 1]")


@dataclass(frozen=True)
class DegradationParams:
    """One random draw of background light and depth transform."""

    background: tuple
    depth_scale: float
    depth_offset: float

    def __post_init__(self):
        b = tuple(float(v) for v in self.background)
        if len(b) != 3 or any(not 0.0 <= v <= 1.0 for v in b):
            raise InvalidInputError(f"background must be 3 values in [0, 1], got {b}")
        if not self.depth_scale > 0:
            raise InvalidInputError(f"depth_scale must be positive, got {self.depth_scale}")
        if not self.depth_offset >= 0:
            raise InvalidInputError(f"depth_offset must be nonnegative, got {self.depth_offset}")
        object.__setattr__(self, "background", b)
        object.__setattr__(self, "depth_scale", float(self.depth_scale))
        object.__setattr__(self, "depth_offset", float(self.depth_offset))

    def transformed_depth(self, depth: np.ndarray) -> np.ndarray:
        return depth * self.depth_scale + self.depth_offset

    def to_dict(self):
        return {
            "background": list(self.background),
            "depth_scale": self.depth_scale,
            "depth_offset": self.depth_offset,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["background"]), d["depth_scale"], d["depth_offset"])


@dataclass
class DegradedSample:
    degraded: np.ndarray
    class_id: int
    params: DegradationParams
    scene_id: str
    draw_index: int

    def __post_init__(self):
        if not 0 <= self.class_id < NUM_CLASSES:
            raise InvalidInputError(f"class_id {self.class_id} outside [0, {NUM_CLASSES - 1}]")


def _check_depth(depth: np.ndarray):
    if not np.all(np.isfinite(depth)):
        raise InvalidInputError("depth contains non-finite values")
    if depth.size and depth.min() < 0:
        raise InvalidInputError(f"depth contains negative values (min {depth.min():g})")


def compute_transmission(spec: WaterTypeSpec, depth: np.ndarray) -> np.ndarray:
    """Transmission map T_c(x) = N_c ** d(x)

    Args:
        spec (WaterTypeSpec): water type
        depth (np.ndarray): H x W depth map, finite and nonnegative

    Returns:
        np.ndarray: H x W x 3 transmission in (0, 1]
    """
    depth = np.asarray(depth, dtype=np.float64)
    _check_depth(depth)
    return np.power(spec.n_coeff, depth[..., np.newaxis])


def degrade_image(scene: SceneSample, spec: WaterTypeSpec, params: DegradationParams, draw_index=0) -> DegradedSample:
    """Apply the formation model to a clear image

    The scene depth goes through the affine transform of ``params`` before the transmission is
    evaluated.

    Args:
        scene (SceneSample): clear image and depth
        spec (WaterTypeSpec): water type
        params (DegradationParams): background light and depth transform
        draw_index (int, optional): augmentation index recorded on the sample

    Returns:
        DegradedSample: degraded image with its labels
    """
    if scene.depth.shape != scene.clear.shape[:2]:
        raise InvalidInputError(f"depth {scene.depth.shape} does not match image {scene.clear.shape[:2]}")
    T = compute_transmission(spec, params.transformed_depth(scene.depth))
    B = np.asarray(params.background)
    U = scene.clear * T + B * (1.0 - T)
    # the convex combination cannot leave [min(I, B), max(I, B)] except by rounding
    U = np.clip(U, np.minimum(scene.clear, B), np.maximum(scene.clear, B))
    return DegradedSample(np.clip(U, 0.0, 1.0), spec.class_id, params, scene.scene_id, draw_index)


def invert_degradation(
    degraded: np.ndarray,
    spec: WaterTypeSpec,
    params: DegradationParams,
    depth: np.ndarray,
    t_min=T_MIN,
) -> np.ndarray:
    """Recover the clear image when the degradation parameters are known

    Args:
        degraded (np.ndarray): H x W x 3 degraded image
        spec (WaterTypeSpec): water type used for the degradation
        params (DegradationParams): parameters used for the degradation
        depth (np.ndarray): the depth map given to :func:`degrade_image`
        t_min (float, optional): smallest transmission accepted. Defaults to 1e-3.

    Returns:
        np.ndarray: H x W x 3 clear image estimate
    """
    degraded = np.asarray(degraded, dtype=np.float64)
    if degraded.shape[:2] != np.shape(depth):
        raise InvalidInputError(f"depth {np.shape(depth)} does not match image {degraded.shape[:2]}")
    T = compute_transmission(spec, params.transformed_depth(np.asarray(depth, dtype=np.float64)))
    bad = int(np.count_nonzero(T < t_min))
    if bad:
        raise IllConditionedError(bad, t_min)
    B = np.asarray(params.background)
    return (degraded - B * (1.0 - T)) / T
