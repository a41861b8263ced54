"""Reconstruction, nuisance and adversarial losses (natural log throughout)."""

import math
from dataclasses import dataclass

import numpy as np

from ..lib.errors import InvalidInputError, NumericError
from ..nn import ops

DISTRIBUTION_ATOL = 1e-4


@dataclass
class LossValues:
    l_r: float
    l_n: float = math.nan
    l_a: float = math.nan

    def check(self, computed=("l_r", "l_n", "l_a")):
        for name in computed:
            value = getattr(self, name)
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss {name} = {value}")
        return self

    def as_row(self):
        return [self.l_r, self.l_n, self.l_a]


def _as_batch(probs):
    probs = np.asarray(probs)
    return probs[np.newaxis] if probs.ndim == 1 else probs


def check_distribution(probs: np.ndarray, atol=DISTRIBUTION_ATOL) -> np.ndarray:
    """Rows of ``probs`` must be finite, nonnegative and sum to one"""
    probs = _as_batch(probs)
    if probs.ndim != 2:
        raise InvalidInputError(f"probabilities must be (M,) or (N, M), got shape {probs.shape}")
    if not np.all(np.isfinite(probs)):
        raise NumericError("probabilities contain non-finite values")
    if np.any(probs < 0):
        raise NumericError(f"negative probability {probs.min():g}")
    worst = float(np.max(np.abs(probs.sum(axis=1) - 1.0)))
    if worst > atol:
        raise NumericError(f"probabilities do not sum to one (off by {worst:.3g})")
    return probs


def loss_reconstruction(output: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over every pixel-channel element"""
    value, _ = ops.mse_reduce_forward([np.asarray(output), np.asarray(target)], [], {})
    return float(value)


def loss_nuisance(probs: np.ndarray, class_id) -> float:
    """Cross entropy -log p[class_id], probabilities floored at 1e-12, averaged over a batch"""
    probs = check_distribution(probs)
    labels = np.atleast_1d(np.asarray(class_id))
    if not np.issubdtype(labels.dtype, np.integer):
        raise InvalidInputError(f"class ids must be integers, got {labels.dtype}")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise InvalidInputError(f"class ids must lie in [0, {probs.shape[1]}), got {labels.tolist()}")
    value, _ = ops.cross_entropy_reduce_forward([probs, labels], [], {})
    return float(value)


def loss_adversarial(probs: np.ndarray) -> float:
    """Negative entropy sum p log p with 0 log 0 = 0, in [-log M, 0]"""
    value, _ = ops.neg_entropy_reduce_forward([check_distribution(probs)], [], {})
    return float(value)
