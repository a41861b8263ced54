"""Encoder E, skip-connected decoder G and nuisance classifier D."""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..formation.water_types import NUM_CLASSES
from ..lib.errors import ConfigError, ShapeError
from ..nn.graph import Graph, forward, init_params
from ..nn.tensor import Tensor

logger = logging.getLogger(__name__)

# float32 conv results depend on how samples are batched, so every inference path batches alike
INFERENCE_BATCH_SIZE = 64


@dataclass
class ArchitectureConfig:
    """Network sizes.

    Encoder level ``l`` has ``base_channels * 2**l`` channels; the bottleneck has ``latent_channels``
    (``base_channels * 2**levels`` when None). Classifier conv stage widths are multiples of the
    latent channel count, each stage halving the spatial size.
    """

    height: int = 32
    width: int = 32
    in_channels: int = 3
    base_channels: int = 8
    levels: int = 3
    latent_channels: Optional[int] = None
    classifier_widths: Tuple[int, ...] = (2, 4, 4)
    classifier_hidden: int = 0
    num_classes: int = NUM_CLASSES
    slope: float = 0.2

    def __post_init__(self):
        self.classifier_widths = tuple(int(w) for w in self.classifier_widths)

    def validate(self):
        for name in ("height", "width", "in_channels", "base_channels", "levels"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        factor = 2**self.levels
        if self.height % factor or self.width % factor:
            raise ConfigError(f"input {self.height}x{self.width} is not divisible by 2^{self.levels}")
        if self.latent_channels is not None and self.latent_channels < 1:
            raise ConfigError(f"latent_channels must be >= 1, got {self.latent_channels}")
        if any(w < 1 for w in self.classifier_widths):
            raise ConfigError(f"classifier widths must be >= 1, got {self.classifier_widths}")
        if self.classifier_hidden < 0:
            raise ConfigError(f"classifier_hidden must be >= 0, got {self.classifier_hidden}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.slope < 0:
            raise ConfigError(f"slope must be >= 0, got {self.slope}")
        return self

    @property
    def latent(self) -> int:
        return self.latent_channels or self.base_channels * 2**self.levels

    def level_channels(self, level: int) -> int:
        return self.base_channels * 2**level

    @property
    def latent_shape(self) -> Tuple[int, int, int]:
        factor = 2**self.levels
        return (self.latent, self.height // factor, self.width // factor)

    def skip_shape(self, level: int) -> Tuple[int, int, int]:
        return (self.level_channels(level), self.height // 2**level, self.width // 2**level)

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return (self.in_channels, self.height, self.width)

    def to_dict(self):
        d = asdict(self)
        d["classifier_widths"] = list(self.classifier_widths)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown architecture config keys: {sorted(unknown)}")
        return cls(**d).validate()


def skip_name(level: int) -> str:
    return f"skip{level}"


def _add_encoder(g: Graph, config: ArchitectureConfig, x: str):
    skips = []
    prev = config.in_channels
    for level in range(config.levels):
        c = config.level_channels(level)
        h = g.conv2d(x, f"E.l{level}.conv0", prev, c)
        h = g.leaky_relu(h, config.slope, name=f"E.l{level}.act0")
        h = g.conv2d(h, f"E.l{level}.conv1", c, c)
        h = g.leaky_relu(h, config.slope, name=f"E.l{level}.act1")
        skips.append(h)
        x = g.add_node("max_pool2d", [h], name=f"E.l{level}.pool")
        prev = c
    z = g.conv2d(x, "E.bottleneck", prev, config.latent)
    z = g.leaky_relu(z, config.slope, name="E.z")
    return z, skips


def _add_decoder(g: Graph, config: ArchitectureConfig, z: str, skips: Sequence[str]):
    h, prev = z, config.latent
    for level in reversed(range(config.levels)):
        c = config.level_channels(level)
        h = g.add_node("upsample_nearest", [h], name=f"G.l{level}.up")
        h = g.conv2d(h, f"G.l{level}.upconv", prev, c)
        h = g.leaky_relu(h, 0.0, name=f"G.l{level}.act_up")
        h = g.add_node("concat_channels", [h, skips[level]], name=f"G.l{level}.concat")
        h = g.conv2d(h, f"G.l{level}.conv0", 2 * c, c)
        h = g.leaky_relu(h, 0.0, name=f"G.l{level}.act0")
        h = g.conv2d(h, f"G.l{level}.conv1", c, c)
        h = g.leaky_relu(h, 0.0, name=f"G.l{level}.act1")
        prev = c
    h = g.conv2d(h, "G.out", prev, config.in_channels, kernel=1)
    return g.add_node("sigmoid", [h], name="G.image")


def _add_classifier(g: Graph, config: ArchitectureConfig, z: str, in_channels: int):
    h, prev = z, in_channels
    for stage, width in enumerate(config.classifier_widths):
        c = width * in_channels
        h = g.conv2d(h, f"D.s{stage}", prev, c, kernel=3, stride=2, pad=1)
        h = g.leaky_relu(h, config.slope, name=f"D.s{stage}.act")
        prev = c
    h = g.add_node("global_avg_pool", [h], name="D.gap")
    if config.classifier_hidden:
        h = g.linear(h, "D.hidden", prev, config.classifier_hidden)
        h = g.leaky_relu(h, config.slope, name="D.hidden.act")
        prev = config.classifier_hidden
    logits = g.linear(h, "D.fc", prev, config.num_classes)
    return logits, g.add_node("softmax", [logits], name="D.probs")


def build_encoder(config: ArchitectureConfig) -> Graph:
    g = Graph("encoder")
    z, skips = _add_encoder(g, config, g.add_input("image", config.image_shape))
    g.add_output(z, "z")
    for level, s in enumerate(skips):
        g.add_output(s, skip_name(level))
    return g


def build_decoder(config: ArchitectureConfig) -> Graph:
    g = Graph("decoder")
    z = g.add_input("z", config.latent_shape)
    skips = [g.add_input(skip_name(level), config.skip_shape(level)) for level in range(config.levels)]
    g.add_output(_add_decoder(g, config, z, skips), "image")
    return g


def build_classifier(config: ArchitectureConfig, latent_shape: Optional[Tuple[int, ...]] = None) -> Graph:
    """Classifier graph on inputs of ``latent_shape`` (the bottleneck shape by default)"""
    latent_shape = tuple(latent_shape or config.latent_shape)
    if len(latent_shape) != 3:
        raise ShapeError(f"classifier input must be (C, H, W), got {latent_shape}")
    g = Graph("classifier")
    logits, probs = _add_classifier(g, config, g.add_input("z", latent_shape), latent_shape[0])
    g.add_output(logits, "logits")
    g.add_output(probs, "probs")
    return g


def build_training_graph(config: ArchitectureConfig, with_classifier=True) -> Graph:
    """E, G, D and the three losses in one graph, parameter names shared with :class:`ModelBundle`

    Inputs ``image``, ``target`` and (with the classifier) integer ``labels``; outputs ``L_R`` and,
    with the classifier, ``L_N`` and ``L_A``.
    """
    config.validate()
    g = Graph("training")
    image = g.add_input("image", config.image_shape)
    target = g.add_input("target", config.image_shape)
    z, skips = _add_encoder(g, config, image)
    out = _add_decoder(g, config, z, skips)
    g.add_output(g.add_node("mse_reduce", [out, target], name="loss.reconstruction"), "L_R")
    if with_classifier:
        labels = g.add_input("labels", (), dtype="int")
        _, probs = _add_classifier(g, config, z, config.latent)
        g.add_output(g.add_node("cross_entropy_reduce", [probs, labels], name="loss.nuisance"), "L_N")
        g.add_output(g.add_node("neg_entropy_reduce", [probs], name="loss.adversarial"), "L_A")
    return g


def to_nchw(images: np.ndarray) -> np.ndarray:
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[np.newaxis]
    if images.ndim != 4:
        raise ShapeError(f"expected (N, H, W, C) images, got shape {images.shape}")
    return np.ascontiguousarray(images.transpose(0, 3, 1, 2))


def to_nhwc(images: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(images).transpose(0, 2, 3, 1))


@dataclass
class ModelBundle:
    config: ArchitectureConfig
    encoder: Graph
    decoder: Graph
    classifier: Optional[Graph]

    @property
    def eg_params(self) -> Dict[str, Tensor]:
        return {**self.encoder.params, **self.decoder.params}

    @property
    def d_params(self) -> Dict[str, Tensor]:
        return dict(self.classifier.params) if self.classifier is not None else {}

    @property
    def registry(self) -> Dict[str, Tensor]:
        return {**self.eg_params, **self.d_params}

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in sorted(self.registry.items())}

    def load_state_dict(self, params: Dict[str, np.ndarray]):
        registry = self.registry
        if set(params) != set(registry):
            missing = sorted(set(registry) - set(params))
            extra = sorted(set(params) - set(registry))
            raise ShapeError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for name, value in params.items():
            if np.shape(value) != registry[name].shape:
                raise ShapeError(f"{name}: stored shape {np.shape(value)}, model expects {registry[name].shape}")
            registry[name].data = np.array(value, dtype=np.float32)
            registry[name].grad = None
        return self


def build_graphs(config: ArchitectureConfig, with_classifier=True) -> ModelBundle:
    """Uninitialised networks (all parameters zero)"""
    config.validate()
    return ModelBundle(
        config,
        build_encoder(config),
        build_decoder(config),
        build_classifier(config) if with_classifier else None,
    )


def build_model(config: ArchitectureConfig = None, seed=0, with_classifier=True) -> ModelBundle:
    """Build and initialise E, G and D

    Each network draws its weights from its own stream, so E and G are identical whether or not the
    classifier is built.

    Args:
        config (ArchitectureConfig, optional): sizes. Defaults to ArchitectureConfig().
        seed (int, optional): initialisation seed. Defaults to 0.
        with_classifier (bool, optional): also build D. Defaults to True.

    Returns:
        ModelBundle: initialised networks
    """
    bundle = build_graphs(config or ArchitectureConfig(), with_classifier)
    init_params(bundle.encoder, [seed, 0])
    init_params(bundle.decoder, [seed, 1])
    if bundle.classifier is not None:
        init_params(bundle.classifier, [seed, 2])
    logger.debug(f"Built model with {parameter_count(bundle)} parameters, latent {bundle.config.latent_shape}")
    return bundle


def parameter_count(bundle: ModelBundle) -> int:
    return int(sum(t.size for t in bundle.registry.values()))


def encode(bundle: ModelBundle, images: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Latent code and skip activations of (N, H, W, 3) images

    Returns:
        (np.ndarray, List[np.ndarray]): Z as (N, C, h, w) and the skips in level order
    """
    out = forward(bundle.encoder, {"image": to_nchw(np.asarray(images, dtype=np.float32))})
    return out["z"], [out[skip_name(level)] for level in range(bundle.config.levels)]


def decode(bundle: ModelBundle, z: np.ndarray, skips: Sequence[np.ndarray], zero_skips=False) -> np.ndarray:
    """(N, H, W, 3) images in [0, 1] from a latent code and skips"""
    if len(skips) != bundle.config.levels:
        raise ShapeError(f"decoder takes {bundle.config.levels} skip tensors, got {len(skips)}")
    inputs = {"z": z}
    for level, s in enumerate(skips):
        inputs[skip_name(level)] = np.zeros_like(s) if zero_skips else s
    return to_nhwc(forward(bundle.decoder, inputs)["image"])


def classify(bundle: ModelBundle, z: np.ndarray) -> np.ndarray:
    """(N, M) class probabilities of a latent code"""
    if bundle.classifier is None:
        raise ShapeError("model was built without a classifier")
    return forward(bundle.classifier, {"z": z})["probs"]


def enhance(bundle: ModelBundle, images: np.ndarray, batch_size=INFERENCE_BATCH_SIZE, zero_skips=False) -> np.ndarray:
    """decode(encode(x)) over a stack of images, in batches"""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[np.newaxis]
    outputs = []
    for start in range(0, len(images), batch_size):
        z, skips = encode(bundle, images[start : start + batch_size])
        outputs.append(decode(bundle, z, skips, zero_skips))
    return np.concatenate(outputs, axis=0)
