"""The two hand/no-hand classifier architectures and whole-network passes.

``build_shallow`` is the 2-conv network (conv/pool/norm lineage of the
CUDA-Convnet2 CIFAR configuration); ``build_deep`` is the 5-conv baseline.
Layer dimensions are construction-time arguments so alternative readings
of the architectures can be instantiated without code changes.

Class convention: index 0 = no-hand, index 1 = hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers, tensor
from .errors import DimensionError, UsageError

INPUT_CHANNELS = 3
N_CLASSES = 2
CLASS_NAMES = ("nohand", "hand")

NETWORK_IDS = {"shallow": 0, "deep": 1}


@dataclass
class LayerSpec:
    kind: str                      # conv | relu | maxpool | lrn | flatten | fc | dropout | softmax
    name: str | None               # set for trainable layers (conv1, fc2, ...)
    cfg: dict
    in_shape: tuple
    out_shape: tuple


@dataclass
class NetworkSpec:
    id: str
    input_hw: int
    layers: tuple


@dataclass
class ModelState:
    spec: NetworkSpec
    params: dict = field(default_factory=dict)
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    t: int = 0


def _conv_out(hw: int, kernel: int, stride: int, pad: int) -> int:
    out = (hw + 2 * pad - kernel) // stride + 1
    if out < 1:
        raise DimensionError(f"conv {kernel}x{kernel} produces no output on extent {hw}")
    return out


def _walk(net_id: str, input_hw: int, table) -> NetworkSpec:
    """Chain the layer table from input to the 2-logit head, checking shapes."""
    shape = (input_hw, input_hw, INPUT_CHANNELS)
    specs = []
    counts = {"conv": 0, "fc": 0}
    for kind, cfg in table:
        in_shape = shape
        name = None
        if kind == "conv":
            counts["conv"] += 1
            name = f"conv{counts['conv']}"
            h = _conv_out(shape[0], cfg["kernel"], cfg["stride"], cfg["pad"])
            w = _conv_out(shape[1], cfg["kernel"], cfg["stride"], cfg["pad"])
            shape = (h, w, cfg["filters"])
        elif kind == "maxpool":
            shape = (layers.pool_output_size(shape[0], cfg["window"], cfg["stride"]),
                     layers.pool_output_size(shape[1], cfg["window"], cfg["stride"]),
                     shape[2])
        elif kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif kind == "fc":
            counts["fc"] += 1
            name = f"fc{counts['fc']}"
            shape = (cfg["units"],)
        elif kind in ("relu", "lrn", "dropout", "softmax"):
            pass
        else:
            raise UsageError(f"unknown layer kind {kind!r}")
        specs.append(LayerSpec(kind, name, dict(cfg), in_shape, shape))
    if specs[-1].kind != "softmax" or sum(s.kind == "softmax" for s in specs) != 1:
        raise UsageError("network must end with exactly one softmax head")
    if shape != (N_CLASSES,):
        raise DimensionError(f"network must end at {N_CLASSES} logits, got {shape}")
    return NetworkSpec(net_id, input_hw, tuple(specs))


def build_shallow(input_hw: int = 32, conv_filters=(64, 64), fc_width: int = 384,
                  dropout_rate: float = 0.4) -> NetworkSpec:
    """Two conv layers with pooling, ReLU and normalization, then two fc layers.

    Ordering follows the CIFAR lineage: conv-pool-norm for the first block,
    conv-norm-pool for the second.
    """
    lrn = {"depth": 5, "k": 2.0, "alpha": 1e-4, "beta": 0.75}
    table = [
        ("conv", {"kernel": 5, "filters": conv_filters[0], "stride": 1, "pad": 2}),
        ("relu", {}),
        ("maxpool", {"window": 3, "stride": 2}),
        ("lrn", dict(lrn)),
        ("conv", {"kernel": 5, "filters": conv_filters[1], "stride": 1, "pad": 2}),
        ("relu", {}),
        ("lrn", dict(lrn)),
        ("maxpool", {"window": 3, "stride": 2}),
        ("flatten", {}),
        ("fc", {"units": fc_width}),
        ("relu", {}),
        ("dropout", {"rate": dropout_rate}),
        ("fc", {"units": N_CLASSES}),
        ("softmax", {}),
    ]
    return _walk("shallow", input_hw, table)


def build_deep(input_hw: int = 32, conv_filters=(64, 128, 256, 256, 128), fc_width: int = 512,
               dropout_rate: float = 0.4) -> NetworkSpec:
    """Five conv layers with ReLU and pooling, then two fully connected layers."""
    table = [
        ("conv", {"kernel": 5, "filters": conv_filters[0], "stride": 1, "pad": 2}),
        ("relu", {}),
        ("maxpool", {"window": 3, "stride": 2}),
        ("conv", {"kernel": 5, "filters": conv_filters[1], "stride": 1, "pad": 2}),
        ("relu", {}),
        ("maxpool", {"window": 3, "stride": 2}),
        ("conv", {"kernel": 3, "filters": conv_filters[2], "stride": 1, "pad": 1}),
        ("relu", {}),
        ("conv", {"kernel": 3, "filters": conv_filters[3], "stride": 1, "pad": 1}),
        ("relu", {}),
        ("conv", {"kernel": 3, "filters": conv_filters[4], "stride": 1, "pad": 1}),
        ("relu", {}),
        ("maxpool", {"window": 3, "stride": 2}),
        ("flatten", {}),
        ("fc", {"units": fc_width}),
        ("relu", {}),
        ("dropout", {"rate": dropout_rate}),
        ("fc", {"units": N_CLASSES}),
        ("softmax", {}),
    ]
    return _walk("deep", input_hw, table)


def build(net_id: str, input_hw: int = 32) -> NetworkSpec:
    if net_id == "shallow":
        return build_shallow(input_hw)
    if net_id == "deep":
        return build_deep(input_hw)
    raise UsageError(f"unknown network id {net_id!r}")


def param_shapes(spec: NetworkSpec) -> dict:
    """Expected name -> shape map for every trainable parameter."""
    shapes = {}
    for layer in spec.layers:
        if layer.kind == "conv":
            kh = layer.cfg["kernel"]
            shapes[f"{layer.name}.kernels"] = (kh, kh, layer.in_shape[2], layer.cfg["filters"])
            shapes[f"{layer.name}.bias"] = (layer.cfg["filters"],)
        elif layer.kind == "fc":
            shapes[f"{layer.name}.weights"] = (layer.in_shape[0], layer.cfg["units"])
            shapes[f"{layer.name}.bias"] = (layer.cfg["units"],)
    return shapes


def init_params(spec: NetworkSpec, seed: int, init_std: float = 0.005) -> ModelState:
    """Weights ~ Normal(0, init_std^2) from the seeded generator, biases zero."""
    rng = np.random.default_rng([int(seed), 0])
    dtype = tensor.active_dtype()
    state = ModelState(spec=spec)
    for layer in spec.layers:
        if layer.kind == "conv":
            kh = layer.cfg["kernel"]
            cin = layer.in_shape[2]
            cout = layer.cfg["filters"]
            state.params[f"{layer.name}.kernels"] = rng.normal(0.0, init_std, (kh, kh, cin, cout)).astype(dtype)
            state.params[f"{layer.name}.bias"] = np.zeros(cout, dtype=dtype)
        elif layer.kind == "fc":
            n_in = layer.in_shape[0]
            n_out = layer.cfg["units"]
            state.params[f"{layer.name}.weights"] = rng.normal(0.0, init_std, (n_in, n_out)).astype(dtype)
            state.params[f"{layer.name}.bias"] = np.zeros(n_out, dtype=dtype)
    for key, value in state.params.items():
        state.adam_m[key] = np.zeros_like(value)
        state.adam_v[key] = np.zeros_like(value)
    return state


def _conv_params(state: ModelState, layer: LayerSpec) -> layers.ConvParams:
    return layers.ConvParams(kernels=state.params[f"{layer.name}.kernels"],
                             bias=state.params[f"{layer.name}.bias"],
                             stride=layer.cfg["stride"], pad=layer.cfg["pad"])


def _fc_params(state: ModelState, layer: LayerSpec) -> layers.FcParams:
    return layers.FcParams(weights=state.params[f"{layer.name}.weights"],
                           bias=state.params[f"{layer.name}.bias"])


def forward_logits(model: ModelState, batch: np.ndarray, training: bool = False,
                   rng: np.random.Generator | None = None, dropout_rate: float | None = None):
    """Run every layer up to the logits; caches are kept only in training mode."""
    spec = model.spec
    batch = np.asarray(batch)
    expected = (spec.input_hw, spec.input_hw, INPUT_CHANNELS)
    if batch.ndim != 4 or batch.shape[1:] != expected:
        raise DimensionError(f"input batch {batch.shape} does not match N x {expected}")
    x = batch
    caches = [] if training else None
    for layer in spec.layers:
        cache = None
        if layer.kind == "conv":
            x, cache = layers.conv2d_forward(x, _conv_params(model, layer))
        elif layer.kind == "relu":
            x, cache = layers.relu_forward(x)
        elif layer.kind == "maxpool":
            x, cache = layers.maxpool_forward(x, layer.cfg["window"], layer.cfg["stride"])
        elif layer.kind == "lrn":
            x, cache = layers.lrn_forward(x, layers.LrnParams(**layer.cfg))
        elif layer.kind == "flatten":
            cache = x.shape
            x = x.reshape(x.shape[0], -1)
        elif layer.kind == "fc":
            x, cache = layers.fc_forward(x, _fc_params(model, layer))
        elif layer.kind == "dropout":
            rate = layer.cfg["rate"] if dropout_rate is None else dropout_rate
            x, cache = layers.dropout_forward(x, rate, training, rng)
        elif layer.kind == "softmax":
            break
        if training:
            caches.append(cache)
    return x, caches


def forward(model: ModelState, batch: np.ndarray, training: bool = False,
            rng: np.random.Generator | None = None, dropout_rate: float | None = None):
    """Class probabilities per sample (softmax over the logits)."""
    logits, caches = forward_logits(model, batch, training, rng, dropout_rate)
    return layers.softmax(logits), caches


def backward(model: ModelState, caches, d_logits: np.ndarray) -> dict:
    """Gradients for every trainable parameter, keyed like ``model.params``."""
    if caches is None:
        raise UsageError("backward needs the caches from a training-mode forward")
    spec = model.spec
    body = [layer for layer in spec.layers if layer.kind != "softmax"]
    grads = {}
    d = d_logits
    for layer, cache in zip(reversed(body), reversed(caches)):
        if layer.kind == "conv":
            d, d_k, d_b = layers.conv2d_backward(d, cache)
            grads[f"{layer.name}.kernels"] = d_k
            grads[f"{layer.name}.bias"] = d_b
        elif layer.kind == "relu":
            d = layers.relu_backward(d, cache)
        elif layer.kind == "maxpool":
            d = layers.maxpool_backward(d, cache)
        elif layer.kind == "lrn":
            d = layers.lrn_backward(d, cache)
        elif layer.kind == "flatten":
            d = d.reshape(cache)
        elif layer.kind == "fc":
            d, d_w, d_b = layers.fc_backward(d, cache)
            grads[f"{layer.name}.weights"] = d_w
            grads[f"{layer.name}.bias"] = d_b
        elif layer.kind == "dropout":
            d = layers.dropout_backward(d, cache)
    return grads


def last_conv_index(spec: NetworkSpec) -> int:
    idx = [i for i, layer in enumerate(spec.layers) if layer.kind == "conv"]
    if not idx:
        raise UsageError("network has no convolution layer")
    return idx[-1]


def activation_maps(model: ModelState, image: np.ndarray):
    """Per-channel output of the last convolution, min-max scaled to uint8.

    Constant maps scale to all zeros.
    """
    image = np.asarray(image)
    if image.ndim != 3:
        raise DimensionError(f"expected a single H x W x C image, got {image.shape}")
    x = image[None].astype(tensor.active_dtype())
    stop = last_conv_index(model.spec)
    for layer in model.spec.layers[: stop + 1]:
        if layer.kind == "conv":
            x, _ = layers.conv2d_forward(x, _conv_params(model, layer))
        elif layer.kind == "relu":
            x, _ = layers.relu_forward(x)
        elif layer.kind == "maxpool":
            x, _ = layers.maxpool_forward(x, layer.cfg["window"], layer.cfg["stride"])
        elif layer.kind == "lrn":
            x, _ = layers.lrn_forward(x, layers.LrnParams(**layer.cfg))
    maps = []
    for channel in range(x.shape[3]):
        m = x[0, :, :, channel]
        lo, hi = float(m.min()), float(m.max())
        if hi > lo:
            scaled = np.rint((m - lo) / (hi - lo) * 255.0)
        else:
            scaled = np.zeros_like(m)
        maps.append(scaled.astype(np.uint8))
    return maps


def write_pgm(path, gray: np.ndarray) -> None:
    """Binary portable graymap (P5), maxval 255."""
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


def export_activation_maps(model: ModelState, image: np.ndarray, out_dir=None):
    """Compute the last-conv activation maps; write them as .pgm when a dir is given."""
    maps = activation_maps(model, image)
    if out_dir is not None:
        from pathlib import Path

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for i, gray in enumerate(maps):
            write_pgm(out_dir / f"activation_ch{i:02d}.pgm", gray)
    return maps
