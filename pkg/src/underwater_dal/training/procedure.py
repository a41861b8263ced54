"""Threshold-gated adversarial training with strict gradient routing.

Warmup trains E and G on the reconstruction loss until the validation SSIM of G reaches
``threshold_g``. Each main-loop epoch then picks one mode from the latest validation scores:

* ``ADV_EG``: E gets the gradient of L_R + lambda_a * L_A, G the gradient of L_R; D is forward only.
* ``TRAIN_D``: D gets the gradient of L_N on a constant Z; E and G are not touched.

With ``lambda_a == 0`` D has no path into the loss of E, so no epoch is spent on it and the run is
plain encoder-decoder training.
"""

import csv
import enum
import logging
import math
import os
from dataclasses import asdict, dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from ..datastore.checkpoint import Checkpoint, TrainingState, save_checkpoint
from ..datastore.manifest import SampleSet
from ..lib.errors import ConfigError, NumericError, ShapeError
from ..lib.io_util import write_csv
from ..metrics.quality import ssim
from ..models.networks import INFERENCE_BATCH_SIZE, ModelBundle, classify, enhance, encode, skip_name, to_nchw
from ..nn import ops
from ..nn.graph import backward, forward, zero_grad
from ..nn.optim import adam_step
from .losses import LossValues

logger = logging.getLogger(__name__)

EPOCH_LOG_HEADER = ("epoch", "mode", "val_g", "val_d", "l_r", "l_n", "l_a")


class Mode(str, enum.Enum):
    WARMUP_EG = "WARMUP_EG"
    ADV_EG = "ADV_EG"
    TRAIN_D = "TRAIN_D"


@dataclass(frozen=True)
class EpochDecision:
    mode: Mode
    val_g: float
    val_d: float


@dataclass
class TrainConfig:
    threshold_g: float = 0.9
    threshold_d: float = 0.85
    epochs: int = 200
    batch_size: int = 16
    lambda_a: float = 1.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    max_warmup_epochs: int = 1000
    checkpoint_every: int = 10

    def validate(self):
        # threshold 0 is accepted and disables the warmup phase
        for name in ("threshold_g", "threshold_d"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if not self.lambda_a >= 0:
            raise ConfigError(f"lambda_a must be >= 0, got {self.lambda_a}")
        for name in ("batch_size", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("epochs", "max_warmup_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.lr > 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or not self.eps > 0:
            raise ConfigError("invalid optimizer settings")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class EpochLog:
    epoch: int
    mode: Mode
    val_g: float
    val_d: Optional[float]
    losses: LossValues

    def as_row(self):
        return [self.epoch, self.mode.value, self.val_g, self.val_d] + self.losses.as_row()


def decide_epoch_mode(val_g: float, val_d: float, config: TrainConfig) -> EpochDecision:
    """Mode of the next epoch; ties with a threshold count as reached

    Args:
        val_g (float): validation SSIM of G
        val_d (float): validation accuracy of D
        config (TrainConfig): thresholds

    Returns:
        EpochDecision: ADV_EG below threshold_g, else TRAIN_D below threshold_d, else ADV_EG.
            Always ADV_EG when lambda_a is 0 or there is no val_D.
    """
    if val_g < config.threshold_g:
        mode = Mode.ADV_EG
    elif config.lambda_a > 0 and val_d is not None and val_d < config.threshold_d:
        mode = Mode.TRAIN_D
    else:
        mode = Mode.ADV_EG
    return EpochDecision(mode, val_g, val_d)


def _reduce(kind, inputs):
    value, cache = ops.OPS[kind].forward(inputs, [], {})
    return value, cache


def _reduce_grad(kind, value, cache):
    dinputs, _ = ops.OPS[kind].backward(np.ones((), dtype=value.dtype), cache, {})
    return dinputs[0]


def apply_routed_update(
    bundle: ModelBundle,
    batch: Tuple[np.ndarray, np.ndarray, np.ndarray],
    mode: Mode,
    lambda_a: float,
    state: TrainingState,
    config: TrainConfig = None,
) -> LossValues:
    """One optimizer step on one batch with the gradient routing of ``mode``

    Every loss is computed and checked before any parameter moves.

    Args:
        bundle (ModelBundle): networks, updated in place
        batch (Tuple[np.ndarray, np.ndarray, np.ndarray]): degraded and clear (N, 3, H, W), class ids
        mode (Mode): routing
        lambda_a (float): weight of the adversarial loss in ADV_EG
        state (TrainingState): holds the optimizer moments of both parameter groups
        config (TrainConfig, optional): optimizer settings. Defaults to TrainConfig().

    Returns:
        LossValues: losses before the update
    """
    config = config or TrainConfig()
    mode = Mode(mode)
    images, targets, labels = batch
    has_d = bundle.classifier is not None
    if mode == Mode.TRAIN_D and not has_d:
        raise ShapeError("TRAIN_D needs a classifier")
    for g in (bundle.encoder, bundle.decoder, bundle.classifier):
        if g is not None:
            zero_grad(g)

    enc = forward(bundle.encoder, {"image": images})
    skips = {skip_name(level): enc[skip_name(level)] for level in range(bundle.config.levels)}
    out = forward(bundle.decoder, {"z": enc["z"], **skips})["image"]
    l_r, cache_r = _reduce("mse_reduce", [out, targets])
    losses = LossValues(float(l_r))
    computed = ["l_r"]
    if has_d:
        probs = forward(bundle.classifier, {"z": enc["z"]})["probs"]
        l_n, cache_n = _reduce("cross_entropy_reduce", [probs, labels])
        l_a, cache_a = _reduce("neg_entropy_reduce", [probs])
        losses.l_n, losses.l_a = float(l_n), float(l_a)
        computed += ["l_n", "l_a"]
    losses.check(computed)

    adam = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    if mode == Mode.TRAIN_D:
        d_grads, _ = backward(bundle.classifier, {"probs": _reduce_grad("cross_entropy_reduce", l_n, cache_n)})
        adam_step(bundle.d_params, d_grads, state.adam_d, **adam)
        return losses

    g_grads, g_inputs = backward(bundle.decoder, {"image": _reduce_grad("mse_reduce", l_r, cache_r)})
    dz = g_inputs["z"]
    if mode == Mode.ADV_EG and has_d and lambda_a > 0:
        d_a = lambda_a * _reduce_grad("neg_entropy_reduce", l_a, cache_a)
        _, d_inputs = backward(bundle.classifier, {"probs": d_a}, accumulate_params=False)
        dz = dz + d_inputs["z"]
    e_grads, _ = backward(bundle.encoder, {"z": dz, **{k: g_inputs[k] for k in skips}})
    adam_step(bundle.eg_params, {**e_grads, **g_grads}, state.adam_eg, **adam)
    return losses


def iterate_batches(samples: SampleSet, batch_size: int, rng: np.random.Generator) -> Iterator[Tuple]:
    order = rng.permutation(len(samples))
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        yield to_nchw(samples.degraded[idx]), to_nchw(samples.clear[idx]), samples.class_ids[idx]


def evaluate_validation(bundle: ModelBundle, samples: SampleSet, batch_size=INFERENCE_BATCH_SIZE) -> Tuple[float, Optional[float]]:
    """Mean SSIM of G outputs against ground truth and accuracy of D on fresh latents

    Returns:
        (float, float): val_G and val_D (None without a classifier)
    """
    outputs = enhance(bundle, samples.degraded, batch_size)
    val_g = float(np.mean([ssim(o, c) for o, c in zip(outputs, samples.clear)]))
    if bundle.classifier is None:
        return val_g, None
    predicted = []
    for start in range(0, len(samples), batch_size):
        z, _ = encode(bundle, samples.degraded[start : start + batch_size])
        predicted.append(np.argmax(classify(bundle, z), axis=1))
    val_d = float(np.mean(np.concatenate(predicted) == samples.class_ids))
    return val_g, val_d


def _run_epoch(bundle, samples, mode, lambda_a, state, config, rng, desc, progress) -> LossValues:
    totals, count = np.zeros(3), 0
    n_batches = math.ceil(len(samples) / config.batch_size)
    for batch in tqdm(iterate_batches(samples, config.batch_size, rng), total=n_batches, desc=desc, disable=not progress, leave=False):
        totals += apply_routed_update(bundle, batch, mode, lambda_a, state, config).as_row()
        count += 1
    return LossValues(*(totals / max(count, 1)))


def run_warmup(
    bundle: ModelBundle,
    train: SampleSet,
    val: SampleSet,
    config: TrainConfig,
    state: TrainingState = None,
    progress=False,
) -> ModelBundle:
    """Train E and G on L_R alone until validation SSIM reaches threshold_g

    Stops after ``max_warmup_epochs`` with a warning. Records the final validation scores and the
    epoch count in ``state``.
    """
    state = state if state is not None else TrainingState(seed=config.seed)
    if state.warmup_done:
        return bundle
    if len(train) == 0 or len(val) == 0:
        raise ConfigError("warmup needs nonempty training and validation splits")
    val_g, val_d = evaluate_validation(bundle, val)
    best, k = val_g, 0
    if config.threshold_g > 0:
        while val_g < config.threshold_g:
            if k >= config.max_warmup_epochs:
                logger.warning(
                    f"Warmup stopped after {k} epochs below threshold_g={config.threshold_g}, best val_G {best:.4f}"
                )
                break
            rng = np.random.default_rng([config.seed, 0, k])
            losses = _run_epoch(bundle, train, Mode.WARMUP_EG, 0.0, state, config, rng, f"warmup {k}", progress)
            k += 1
            val_g, val_d = evaluate_validation(bundle, val)
            best = max(best, val_g)
            logger.info(f"warmup epoch {k}: L_R {losses.l_r:.5f} val_G {val_g:.4f}")
    state.warmup_done = True
    state.warmup_epochs = k
    state.val_g, state.val_d = val_g, val_d
    logger.info(f"Warmup finished after {k} epoch(s), val_G {val_g:.4f}")
    return bundle


def write_epoch_log(log: List[EpochLog], filename: str):
    write_csv(filename, EPOCH_LOG_HEADER, [e.as_row() for e in log], "epoch log")


def read_epoch_log(filename: str) -> List[EpochLog]:
    def number(s):
        return None if s in ("", "None") else float(s)

    log = []
    with open(filename, newline="") as f:
        for row in csv.DictReader(f):
            losses = LossValues(number(row["l_r"]), number(row["l_n"]), number(row["l_a"]))
            log.append(EpochLog(int(row["epoch"]), Mode(row["mode"]), number(row["val_g"]), number(row["val_d"]), losses))
    return log


def checkpoint_path(out_dir: str, epoch: int) -> str:
    return os.path.join(out_dir, f"epoch_{epoch:04d}.ckpt")


def _save(bundle, state, config, out_dir, filename=None):
    if out_dir is None:
        return
    ckpt = Checkpoint.from_bundle(bundle, state, config.to_dict())
    save_checkpoint(ckpt, filename or checkpoint_path(out_dir, state.epoch))


def run_training(
    bundle: ModelBundle,
    train: SampleSet,
    val: SampleSet,
    config: TrainConfig,
    state: TrainingState,
    out_dir: Optional[str] = None,
    log: Optional[List[EpochLog]] = None,
    progress=False,
) -> Tuple[ModelBundle, List[EpochLog]]:
    """Main loop: one mode per epoch, validation at each epoch end

    Continues from ``state.epoch``, so a bundle and state restored from a checkpoint resume the run
    exactly. Checkpoints go to ``out_dir`` every ``checkpoint_every`` epochs and at the end, the
    epoch log to ``out_dir/epochs.csv`` after every epoch.

    Returns:
        (ModelBundle, List[EpochLog]): trained networks and one log entry per epoch
    """
    log = list(log or [])
    try:
        for epoch in tqdm(range(state.epoch + 1, config.epochs + 1), desc="train", disable=not progress):
            decision = decide_epoch_mode(state.val_g, state.val_d, config)
            rng = np.random.default_rng([config.seed, 1, epoch])
            losses = _run_epoch(bundle, train, decision.mode, config.lambda_a, state, config, rng, f"epoch {epoch}", progress)
            state.val_g, state.val_d = evaluate_validation(bundle, val)
            state.epoch = epoch
            log.append(EpochLog(epoch, decision.mode, state.val_g, state.val_d, losses))
            logger.info(
                f"epoch {epoch} {decision.mode.value}: L_R {losses.l_r:.5f} L_N {losses.l_n:.4f} "
                f"L_A {losses.l_a:.4f} val_G {state.val_g:.4f} val_D {state.val_d}"
            )
            if out_dir is not None:
                write_epoch_log(log, os.path.join(out_dir, "epochs.csv"))
                if epoch % config.checkpoint_every == 0:
                    _save(bundle, state, config, out_dir)
    except NumericError as e:
        logger.error(f"Training aborted at epoch {state.epoch + 1}: {e}; the last saved checkpoint is kept")
        raise
    _save(bundle, state, config, out_dir, out_dir and os.path.join(out_dir, "final.ckpt"))
    return bundle, log


def train_model(
    bundle: ModelBundle,
    train: SampleSet,
    val: SampleSet,
    config: TrainConfig,
    state: TrainingState = None,
    out_dir: Optional[str] = None,
    progress=False,
):
    """Warmup (unless already done) followed by the main loop

    Returns:
        (ModelBundle, TrainingState, List[EpochLog])
    """
    config.validate()
    state = state if state is not None else TrainingState(seed=config.seed)
    log = []
    if out_dir is not None and state.epoch > 0 and os.path.exists(os.path.join(out_dir, "epochs.csv")):
        log = [e for e in read_epoch_log(os.path.join(out_dir, "epochs.csv")) if e.epoch <= state.epoch]
    if not state.warmup_done:
        run_warmup(bundle, train, val, config, state, progress)
        _save(bundle, state, config, out_dir)
    bundle, log = run_training(bundle, train, val, config, state, out_dir, log, progress)
    return bundle, state, log
