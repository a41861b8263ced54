"""Merged Jerlov water-type classes and their residual energy ratios."""

import logging
import os
from dataclasses import dataclass
from typing import Iterator, List, Optional

import numpy as np

from ..lib.errors import ConfigError

logger = logging.getLogger(__name__)

# class_id -> merged label; ten Jerlov types folded into six classes
MERGED_LABELS = ("1,3", "5", "7", "9", "I,IA,IB", "II,III")
NUM_CLASSES = len(MERGED_LABELS)

DEFAULT_TABLE = os.path.join(os.path.dirname(os.path.dirname(__file__)), "data", "water_types.txt")


@dataclass(frozen=True)
class WaterTypeSpec:
    """Per-channel residual energy ratio N_c of one merged class.

    Attributes:
        class_id (int): class index in [0, 5]
        label (str): merged class name, fixed by ``MERGED_LABELS``
        n_coeff (np.ndarray): shape (3,), channels ordered (r, g, b), values in (0, 1]
    """

    class_id: int
    label: str
    n_coeff: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.n_coeff, dtype=np.float64)
        if n.shape != (3,):
            raise ConfigError(f"n_coeff must have 3 channels, got shape {n.shape}")
        if not np.all(np.isfinite(n)) or np.any(n <= 0) or np.any(n > 1):
            raise ConfigError(f"n_coeff must lie in (0, 1], got {n.tolist()}")
        if not 0 <= self.class_id < NUM_CLASSES:
            raise ConfigError(f"class_id {self.class_id} outside [0, {NUM_CLASSES - 1}]")
        if MERGED_LABELS[self.class_id] != self.label:
            raise ConfigError(
                f"class {self.class_id} is {MERGED_LABELS[self.class_id]!r}, not {self.label!r}"
            )
        n.setflags(write=False)
        object.__setattr__(self, "n_coeff", n)

    @property
    def beta(self) -> np.ndarray:
        """Attenuation coefficients with N_c = 10^(-beta_c)."""
        return -np.log10(self.n_coeff)

    @classmethod
    def from_beta(cls, class_id: int, beta) -> "WaterTypeSpec":
        return cls(class_id, MERGED_LABELS[class_id], 10.0 ** (-np.asarray(beta, dtype=np.float64)))


class WaterTypeTable:
    """The six merged classes, indexed by class_id."""

    def __init__(self, specs: List[WaterTypeSpec]):
        ids = sorted(s.class_id for s in specs)
        if ids != list(range(NUM_CLASSES)):
            raise ConfigError(f"water type table must hold classes 0..{NUM_CLASSES - 1} exactly once, got {ids}")
        self._specs = sorted(specs, key=lambda s: s.class_id)

    def __getitem__(self, class_id: int) -> WaterTypeSpec:
        return self._specs[class_id]

    def __iter__(self) -> Iterator[WaterTypeSpec]:
        return iter(self._specs)

    def __len__(self):
        return len(self._specs)


def load_water_types(path: Optional[str] = None) -> WaterTypeTable:
    """Read the coefficient table

    Rows are ``class_id label n_r n_g n_b`` separated by whitespace, ``#`` starts a comment.

    Args:
        path (str, optional): table file. Defaults to the packaged table.

    Returns:
        WaterTypeTable: the six merged classes
    """
    path = path or DEFAULT_TABLE
    specs = []
    with open(path, "r") as f:
        for number, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 5:
                raise ConfigError(f"{path}:{number}: expected 5 fields, got {len(fields)}")
            try:
                class_id = int(fields[0])
                n = [float(v) for v in fields[2:]]
            except ValueError as e:
                raise ConfigError(f"{path}:{number}: {e}") from None
            if fields[1] not in MERGED_LABELS:
                raise ConfigError(f"{path}:{number}: unknown water type label {fields[1]!r}")
            specs.append(WaterTypeSpec(class_id, fields[1], np.array(n)))
    logger.debug(f"Loaded {len(specs)} water types from {path}")
    return WaterTypeTable(specs)
