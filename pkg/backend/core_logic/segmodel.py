"""
Victim segmentation model: a three-layer convnet with hand-written gradients.

Architecture (fixed): Conv(C->16, 3x3, pad 1) + ReLU, Conv(16->16, 3x3, pad 1)
+ ReLU, Conv(16->K, 1x1). Every function here is pure in (params, image), so
one ModelParams may be shared by many concurrent attack workers.
"""
import struct
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, List, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from shared.constants import TSEG_MAGIC, TrainDefaults
from shared.tensor_io import decode_tensor, encode_tensor
from shared.utils import TSEGFormatError
from .tensor_core import check_finite, make_rng


@dataclass(frozen=True)
class ConvLayer:
    """Stride-1 'same' convolution with an optional ReLU after it."""
    weight: np.ndarray  # out x in x k x k
    bias: np.ndarray    # out
    relu: bool

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class ModelParams:
    layers: Tuple[ConvLayer, ...]
    num_classes: int

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        for i, layer in enumerate(self.layers):
            w, b = layer.weight, layer.bias
            if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
                raise ValueError(f"layer {i}: weight must be out x in x k x k with odd k, got {w.shape}")
            if b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match {w.shape[0]} outputs")
            if i > 0 and self.layers[i - 1].out_channels != layer.in_channels:
                raise ValueError(f"layer {i}: expects {layer.in_channels} inputs, "
                                 f"previous layer gives {self.layers[i - 1].out_channels}")
            check_finite(f"layer {i} weight", w)
            check_finite(f"layer {i} bias", b)
        if self.layers[-1].out_channels != self.num_classes:
            raise ValueError(f"last layer has {self.layers[-1].out_channels} outputs, "
                             f"expected K = {self.num_classes}")

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_channels

    def astype(self, dtype) -> "ModelParams":
        """Copy with every parameter cast, e.g. float64 for finite-difference replay."""
        return replace(self, layers=tuple(
            replace(layer, weight=layer.weight.astype(dtype), bias=layer.bias.astype(dtype))
            for layer in self.layers
        ))

    def apply_update(self, grads: List[Tuple[np.ndarray, np.ndarray]], lr: float) -> "ModelParams":
        """Plain SGD step: theta - lr * grad."""
        return replace(self, layers=tuple(
            replace(
                layer,
                weight=(layer.weight - lr * gw).astype(layer.weight.dtype),
                bias=(layer.bias - lr * gb).astype(layer.bias.dtype),
            )
            for layer, (gw, gb) in zip(self.layers, grads)
        ))


# ============== CONVOLUTION PRIMITIVES ==============

def _windows(x: np.ndarray, k: int) -> np.ndarray:
    """C x H x W -> C x H x W x k x k patches of the zero-padded input."""
    pad = k // 2
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    return sliding_window_view(padded, (k, k), axis=(1, 2))


def _conv(x: np.ndarray, weight: np.ndarray, bias: np.ndarray = None) -> np.ndarray:
    out = np.tensordot(weight, _windows(x, weight.shape[2]), axes=([1, 2, 3], [0, 3, 4]))
    if bias is not None:
        out = out + bias[:, None, None]
    return out.astype(np.result_type(x.dtype, weight.dtype), copy=False)


def _conv_backward(x: np.ndarray, weight: np.ndarray, grad_out: np.ndarray):
    """Gradients of a stride-1 'same' conv w.r.t. (input, weight, bias)."""
    k = weight.shape[2]
    grad_w = np.tensordot(grad_out, _windows(x, k), axes=([1, 2], [1, 2]))
    grad_b = grad_out.sum(axis=(1, 2))
    flipped = weight.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
    grad_x = _conv(grad_out, flipped)
    return grad_x, grad_w, grad_b


# ============== FORWARD / BACKWARD ==============

def _check_image(params: ModelParams, image: np.ndarray) -> None:
    if image.ndim != 3:
        raise ValueError(f"image must be C x H x W, got shape {image.shape}")
    if image.shape[0] != params.in_channels:
        raise ValueError(f"image has {image.shape[0]} channels, model expects {params.in_channels}")
    check_finite("image", image)
    if image.size and (image.min() < 0.0 or image.max() > 1.0):
        raise ValueError("image values must lie in [0, 1]")


def _forward_cached(params: ModelParams, image: np.ndarray):
    """Forward pass keeping every layer input and pre-activation."""
    inputs, pre_acts = [], []
    h = image
    for layer in params.layers:
        inputs.append(h)
        z = _conv(h, layer.weight, layer.bias)
        pre_acts.append(z)
        h = np.maximum(z, 0) if layer.relu else z
    return h, inputs, pre_acts


def forward(params: ModelParams, image: np.ndarray) -> np.ndarray:
    """
    Per-pixel logits for one image.

    Args:
        params: Model parameters
        image: C x H x W array in [0, 1]

    Returns:
        K x H x W logits
    """
    image = np.asarray(image)
    _check_image(params, image)
    logits, _, _ = _forward_cached(params, image)
    return check_finite("logits", logits)


def backward(params: ModelParams, image: np.ndarray, logit_grad: np.ndarray):
    """
    Backpropagate dL/dlogits through the network.

    ReLU passes gradient only where the pre-activation is strictly positive.

    Returns:
        (list of (dweight, dbias) per layer, dL/dimage)
    """
    image = np.asarray(image)
    _check_image(params, image)
    expected = (params.num_classes,) + image.shape[1:]
    if logit_grad.shape != expected:
        raise ValueError(f"logit gradient shape {logit_grad.shape} != logits shape {expected}")
    _, inputs, pre_acts = _forward_cached(params, image)
    return _backprop(params, inputs, pre_acts, logit_grad)


def _backprop(params: ModelParams, inputs, pre_acts, logit_grad: np.ndarray):
    grad = logit_grad.astype(np.result_type(logit_grad.dtype, inputs[0].dtype, params.layers[0].weight.dtype))
    param_grads = [None] * len(params.layers)
    for i in reversed(range(len(params.layers))):
        layer = params.layers[i]
        if layer.relu:
            grad = grad * (pre_acts[i] > 0)
        grad, gw, gb = _conv_backward(inputs[i], layer.weight, grad)
        param_grads[i] = (gw, gb)
    return param_grads, check_finite("input gradient", grad)


def input_gradient(params: ModelParams, image: np.ndarray, logit_grad: np.ndarray) -> np.ndarray:
    """
    Gradient of a scalar loss w.r.t. every input pixel and channel.

    Args:
        params: Model parameters
        image: C x H x W image the logits came from
        logit_grad: dL/dlogits, K x H x W

    Returns:
        C x H x W gradient
    """
    _, grad = backward(params, image, logit_grad)
    return grad


def value_and_input_gradient(params: ModelParams, image: np.ndarray, objective: Callable):
    """
    Evaluate `objective(logits)` and backpropagate its logit gradient to the
    image with a single forward pass.

    Args:
        params: Model parameters
        image: C x H x W array in [0, 1]
        objective: Maps K x H x W logits to a report with a `logit_grad` field

    Returns:
        (objective report, C x H x W input gradient)
    """
    image = np.asarray(image)
    _check_image(params, image)
    logits, inputs, pre_acts = _forward_cached(params, image)
    check_finite("logits", logits)
    report = objective(logits)
    _, grad = _backprop(params, inputs, pre_acts, report.logit_grad)
    return report, check_finite("input gradient", grad)


def predict(params: ModelParams, image: np.ndarray) -> np.ndarray:
    """Per-pixel argmax; ties go to the lowest class index."""
    return logits_to_labels(forward(params, image))


def logits_to_labels(logits: np.ndarray) -> np.ndarray:
    return np.argmax(logits, axis=0).astype(np.int64)


# ============== CONSTRUCTION ==============

def architecture(num_classes: int, in_channels: int = TrainDefaults.IN_CHANNELS,
                 hidden: int = TrainDefaults.HIDDEN_CHANNELS) -> List[Tuple[int, int, int, bool]]:
    """(in, out, kernel, relu) for each layer of the fixed victim."""
    return [
        (in_channels, hidden, 3, True),
        (hidden, hidden, 3, True),
        (hidden, num_classes, 1, False),
    ]


def init_params(num_classes: int = TrainDefaults.NUM_CLASSES, seed: int = 0,
                in_channels: int = TrainDefaults.IN_CHANNELS,
                hidden: int = TrainDefaults.HIDDEN_CHANNELS) -> ModelParams:
    """
    Fan-in scaled uniform initialization, zero biases.

    Weights are drawn from U(-b, b) with b = sqrt(6 / fan_in).
    """
    rng = make_rng(seed)
    layers = []
    for c_in, c_out, k, relu in architecture(num_classes, in_channels, hidden):
        bound = np.sqrt(6.0 / (c_in * k * k))
        weight = rng.uniform(-bound, bound, size=(c_out, c_in, k, k)).astype(np.float32)
        layers.append(ConvLayer(weight=weight, bias=np.zeros(c_out, dtype=np.float32), relu=relu))
    return ModelParams(layers=tuple(layers), num_classes=num_classes)


# ============== SERIALIZATION ==============

def encode_params(params: ModelParams) -> bytes:
    """
    TSEG1 model container: magic, u32 K, u32 layer count, then each layer's
    weight and bias as TSEG1 records. ReLU follows every layer except the last.
    """
    blob = [TSEG_MAGIC, struct.pack("<II", params.num_classes, len(params.layers))]
    for layer in params.layers:
        blob.append(encode_tensor(layer.weight.astype(np.float32)))
        blob.append(encode_tensor(layer.bias.astype(np.float32)))
    return b"".join(blob)


def decode_params(buffer: bytes) -> ModelParams:
    if buffer[:len(TSEG_MAGIC)] != TSEG_MAGIC:
        raise TSEGFormatError("model file: bad magic")
    offset = len(TSEG_MAGIC)
    if len(buffer) < offset + 8:
        raise TSEGFormatError("model file: truncated header")
    num_classes, n_layers = struct.unpack_from("<II", buffer, offset)
    offset += 8
    layers = []
    for i in range(n_layers):
        weight, offset = decode_tensor(buffer, offset)
        bias, offset = decode_tensor(buffer, offset)
        layers.append(ConvLayer(weight=weight, bias=bias, relu=i < n_layers - 1))
    if offset != len(buffer):
        raise TSEGFormatError(f"model file: {len(buffer) - offset} trailing bytes")
    return ModelParams(layers=tuple(layers), num_classes=num_classes)


def save_params(path, params: ModelParams) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode_params(params))


def load_params(path) -> ModelParams:
    return decode_params(Path(path).read_bytes())
