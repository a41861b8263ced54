"""How much water-type information the latent code Z still carries.

PCA coordinates for plotting, silhouette scores by water type and by scene content, and the
accuracy of a freshly trained probe classifier on frozen latents.
"""

import json
import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import silhouette_score

from ..datastore.manifest import SampleSet
from ..formation.water_types import MERGED_LABELS
from ..lib.errors import ConfigError, InvalidInputError, RankError, SplitError
from ..lib.io_util import atomic_write_text, write_csv
from ..metrics.quality import ssim
from ..models.networks import INFERENCE_BATCH_SIZE, ArchitectureConfig, ModelBundle, build_classifier, encode, enhance
from ..nn import ops
from ..nn.graph import backward, forward, init_params, zero_grad
from ..nn.optim import AdamState, adam_step

logger = logging.getLogger(__name__)

PCA_TOL = 1e-12
PCA_MAX_ITER = 100000


@dataclass
class LatentRecord:
    vector: np.ndarray
    class_id: int
    scene_id: str


def collect_latents(bundle: ModelBundle, samples: SampleSet, batch_size=INFERENCE_BATCH_SIZE) -> List[LatentRecord]:
    """Flattened Z, in (channel, row, col) order, of every sample"""
    records = []
    for start in range(0, len(samples), batch_size):
        z, _ = encode(bundle, samples.degraded[start : start + batch_size])
        for i, vector in enumerate(z.reshape(len(z), -1)):
            records.append(LatentRecord(vector.copy(), int(samples.class_ids[start + i]), samples.scene_ids[start + i]))
    return records


def stack_latents(records: Sequence[LatentRecord]) -> np.ndarray:
    if not records:
        raise InvalidInputError("no latent records")
    sizes = {r.vector.size for r in records}
    if len(sizes) != 1:
        raise InvalidInputError(f"latent vectors differ in length: {sorted(sizes)}")
    return np.stack([np.ravel(r.vector) for r in records]).astype(np.float64)


@dataclass
class PCAResult:
    coords: np.ndarray
    components: np.ndarray
    explained_ratio: np.ndarray
    mean: np.ndarray


def pca_project(data, k=2, seed=0) -> PCAResult:
    """Project onto the top-k principal components

    Components come from power iteration on the covariance matrix, deflating each converged
    eigenpair. Each component is oriented so that its largest-magnitude entry is positive.

    Args:
        data (Sequence[LatentRecord] | np.ndarray): records or an (n, D) array
        k (int, optional): number of components. Defaults to 2.
        seed (int, optional): seed of the starting vectors. Defaults to 0.

    Returns:
        PCAResult: (n, k) coordinates, (k, D) orthonormal components, explained-variance ratios
    """
    x = stack_latents(data) if not isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
    n, dim = x.shape
    if k < 1 or k > dim:
        raise InvalidInputError(f"k must lie in [1, {dim}], got {k}")
    if n < k + 1:
        raise InvalidInputError(f"need at least {k + 1} records for {k} components, got {n}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    total = float(np.trace(cov))
    if not total > 0:
        raise RankError("all records are identical; the covariance has rank 0")

    rng = np.random.default_rng(seed)
    components, eigenvalues = [], []
    residual = cov.copy()
    for _ in range(k):
        v = _orthogonalize(rng.standard_normal(dim), components)
        v /= np.linalg.norm(v)
        for _ in range(PCA_MAX_ITER):
            w = _orthogonalize(residual @ v, components)
            norm = np.linalg.norm(w)
            if norm <= PCA_TOL * total:
                # nothing left in the orthogonal complement
                break
            w /= norm
            done = np.linalg.norm(w - v) < PCA_TOL
            v = w
            if done:
                break
        v = _orthogonalize(v, components)
        v /= np.linalg.norm(v)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        lam = max(float(v @ cov @ v), 0.0)
        residual -= lam * np.outer(v, v)
        components.append(v)
        eigenvalues.append(lam)

    components = np.array(components)
    return PCAResult(xc @ components.T, components, np.array(eigenvalues) / total, mean)


def _orthogonalize(v, basis):
    for b in basis:
        v = v - (b @ v) * b
    return v


def silhouette(coords: np.ndarray, labels: Sequence) -> float:
    """Mean Euclidean silhouette; every label needs at least two members

    Args:
        coords (np.ndarray): (n, d) points
        labels (Sequence): cluster label per point

    Returns:
        float: score in [-1, 1]
    """
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels)
    if coords.ndim != 2 or len(coords) != len(labels):
        raise InvalidInputError(f"coords {coords.shape} and {len(labels)} labels do not match")
    values, counts = np.unique(labels, return_counts=True)
    if len(values) < 2:
        raise InvalidInputError(f"silhouette needs at least 2 labels, got {values.tolist()}")
    for value, count in zip(values, counts):
        if count < 2:
            raise InvalidInputError(f"label {value!r} has a single member")
    return float(silhouette_score(coords, labels, metric="euclidean"))


@dataclass
class ProbeConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 3e-3
    train_fraction: float = 0.8

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("probe epochs and batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError(f"probe lr must be positive, got {self.lr}")
        if not 0 < self.train_fraction < 1:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown probe config keys: {sorted(unknown)}")
        return cls(**d).validate()


def probe_accuracy(
    latents: np.ndarray,
    labels: Sequence[int],
    seed=0,
    architecture: ArchitectureConfig = None,
    latent_shape: Optional[Tuple[int, int, int]] = None,
    config: ProbeConfig = None,
) -> float:
    """Held-out accuracy of a fresh classifier trained on frozen latents

    The probe has the nuisance classifier's architecture. Records are split 80/20 at random.

    Args:
        latents (np.ndarray): (n, F) flattened or (n, C, h, w) latents
        labels (Sequence[int]): class per record, in [0, num_classes)
        seed (int, optional): split, initialisation and shuffling seed. Defaults to 0.
        architecture (ArchitectureConfig, optional): classifier sizes. Defaults to ArchitectureConfig().
        latent_shape (Tuple[int, int, int], optional): shape of one latent; flat vectors become (F, 1, 1)
        config (ProbeConfig, optional): training settings. Defaults to ProbeConfig().

    Returns:
        float: accuracy on the held-out 20%
    """
    architecture = architecture or ArchitectureConfig()
    config = (config or ProbeConfig()).validate()
    x = np.asarray(latents, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if len(x) != len(labels):
        raise InvalidInputError(f"{len(x)} latents but {len(labels)} labels")
    if labels.min() < 0 or labels.max() >= architecture.num_classes:
        raise InvalidInputError(f"labels must lie in [0, {architecture.num_classes})")
    if latent_shape is not None:
        x = x.reshape((len(x),) + tuple(latent_shape))
    elif x.ndim == 2:
        x = x.reshape(len(x), x.shape[1], 1, 1)
    if x.ndim != 4:
        raise InvalidInputError(f"latents must be (n, F) or (n, C, h, w), got shape {x.shape}")

    rng = np.random.default_rng([seed, 2])
    order = rng.permutation(len(x))
    n_train = int(round(config.train_fraction * len(x)))
    train_idx, test_idx = order[:n_train], order[n_train:]
    if len(test_idx) == 0:
        raise SplitError("no records left for the held-out split")
    missing = sorted(set(labels.tolist()) - set(labels[train_idx].tolist()))
    if missing:
        raise SplitError(f"classes {missing} are absent from the probe training split")

    graph = build_classifier(architecture, x.shape[1:])
    init_params(graph, [seed, 3])
    adam = AdamState()
    for epoch in range(config.epochs):
        perm = np.random.default_rng([seed, 4, epoch]).permutation(train_idx)
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start : start + config.batch_size]
            zero_grad(graph)
            probs = forward(graph, {"z": x[idx]})["probs"]
            value, cache = ops.cross_entropy_reduce_forward([probs, labels[idx]], [], {})
            (dprobs, _), _ = ops.cross_entropy_reduce_backward(np.ones((), dtype=value.dtype), cache, {})
            grads, _ = backward(graph, {"probs": dprobs})
            adam_step(graph.params, grads, adam, lr=config.lr)
    predicted = np.argmax(forward(graph, {"z": x[test_idx]})["probs"], axis=1)
    accuracy = float(np.mean(predicted == labels[test_idx]))
    logger.debug(f"probe accuracy {accuracy:.4f} on {len(test_idx)} held-out records")
    return accuracy


def skip_ablation(bundle: ModelBundle, samples: SampleSet, batch_size=INFERENCE_BATCH_SIZE) -> Dict[str, float]:
    """Mean SSIM of G outputs with the skips intact and with every skip tensor zeroed"""

    def mean_ssim(zero_skips):
        outputs = enhance(bundle, samples.degraded, batch_size, zero_skips=zero_skips)
        return float(np.mean([ssim(o, c) for o, c in zip(outputs, samples.clear)]))

    return {"ssim_with_skips": mean_ssim(False), "ssim_zero_skips": mean_ssim(True)}


def analyze_latents(
    bundle: ModelBundle,
    samples: SampleSet,
    seed=0,
    probe: ProbeConfig = None,
    zero_skips=False,
) -> Tuple[dict, PCAResult, List[LatentRecord]]:
    """PCA, silhouettes by water type and by content, and probe accuracy on one sample set

    Returns:
        (dict, PCAResult, List[LatentRecord]): summary, projection and the records it was built from
    """
    records = collect_latents(bundle, samples)
    x = stack_latents(records)
    pca = pca_project(x, k=2, seed=seed)
    class_ids = [r.class_id for r in records]
    summary = {
        "n_records": len(records),
        "explained_variance": pca.explained_ratio.tolist(),
        "silhouette_by_type": silhouette(pca.coords, class_ids),
        "silhouette_by_content": silhouette(pca.coords, [r.scene_id for r in records]),
        "probe_accuracy": probe_accuracy(
            x, class_ids, seed, bundle.config, bundle.config.latent_shape, probe
        ),
    }
    if zero_skips:
        summary["skip_ablation"] = skip_ablation(bundle, samples)
    logger.info(
        f"silhouette by type {summary['silhouette_by_type']:.4f}, by content "
        f"{summary['silhouette_by_content']:.4f}, probe accuracy {summary['probe_accuracy']:.4f}"
    )
    return summary, pca, records


def write_pca_csv(pca: PCAResult, records: Sequence[LatentRecord], filename: str):
    rows = [
        [*coord.tolist(), r.class_id, MERGED_LABELS[r.class_id], r.scene_id]
        for coord, r in zip(pca.coords, records)
    ]
    header = [f"pc{i + 1}" for i in range(pca.coords.shape[1])] + ["class_id", "label", "scene_id"]
    write_csv(filename, header, rows, "PCA coordinates")


def write_summary_json(summary: dict, filename: str):
    atomic_write_text(filename, json.dumps(summary, sort_keys=True, indent=2) + "\n", "latent summary")
