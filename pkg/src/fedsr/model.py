"""SRResNet-style super-resolution network with an explicit backward pass.

Topology (no batch normalization)::

    head conv3x3 (3 -> F)
    blocks x N: conv3x3 -> PReLU -> conv3x3, additive skip
    body conv3x3 + global skip from the head output
    per x2 stage: conv3x3 (F -> 4F) -> pixel_shuffle(2) -> PReLU
    tail conv3x3 (F -> 3)

Weights are an ordered ``dict[str, np.ndarray]``; the names depend only on
the :class:`ModelConfig`, which is what makes weight sets averageable.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, ParseError
from .rng import derive_stream
from .tensor import (
    DTYPE,
    conv2d_backward,
    conv2d_forward,
    get_loss,
    pixel_shuffle,
    pixel_shuffle_backward,
    prelu_backward,
    prelu_forward,
)


@dataclass(frozen=True)
class ModelConfig:
    features: int = 16
    blocks: int = 2
    scale: int = 4
    in_channels: int = 3

    def __post_init__(self):
        if self.features < 1 or self.blocks < 0 or self.in_channels < 1:
            raise InvalidArgumentError(f"invalid model config {self}")
        if self.scale < 2 or self.scale & (self.scale - 1):
            raise InvalidArgumentError(f"scale must be a power of two >= 2, got {self.scale}")

    @property
    def stages(self) -> int:
        return int(math.log2(self.scale))


# "rrdb" documents the larger architecture family but is intentionally not buildable
PRESETS = {
    "default": dict(features=16, blocks=2, scale=4),
    "paper-srresnet": dict(features=64, blocks=16, scale=4),
    "tiny": dict(features=2, blocks=1, scale=2),
    "desk": dict(features=8, blocks=1, scale=2),
}
RRDB_NOTE = (
    "rrdb: 23 residual-in-residual dense blocks, 64 features, 32 growth channels "
    "(~16.7M parameters); not built at desk scale"
)


def preset(name: str, **overrides) -> ModelConfig:
    if name == "rrdb":
        raise InvalidArgumentError(RRDB_NOTE)
    try:
        params = dict(PRESETS[name])
    except KeyError:
        raise InvalidArgumentError(f"unknown model preset {name!r}")
    params.update({k: v for k, v in overrides.items() if v is not None})
    return ModelConfig(**params)


def weight_shapes(config: ModelConfig) -> dict[str, tuple]:
    f, c = config.features, config.in_channels
    shapes = {"head.kernel": (f, c, 3, 3), "head.bias": (f,)}
    for i in range(config.blocks):
        p = f"block{i}"
        shapes[f"{p}.conv1.kernel"] = (f, f, 3, 3)
        shapes[f"{p}.conv1.bias"] = (f,)
        shapes[f"{p}.prelu.slope"] = (f,)
        shapes[f"{p}.conv2.kernel"] = (f, f, 3, 3)
        shapes[f"{p}.conv2.bias"] = (f,)
    shapes["body.kernel"] = (f, f, 3, 3)
    shapes["body.bias"] = (f,)
    for s in range(config.stages):
        shapes[f"up{s}.kernel"] = (4 * f, f, 3, 3)
        shapes[f"up{s}.bias"] = (4 * f,)
        shapes[f"up{s}.prelu.slope"] = (f,)
    shapes["tail.kernel"] = (c, f, 3, 3)
    shapes["tail.bias"] = (c,)
    return shapes


def parameter_count(config: ModelConfig) -> int:
    return sum(math.prod(s) for s in weight_shapes(config).values())


def config_from_weights(weights) -> ModelConfig:
    """Recover the architecture from tensor names and shapes."""
    try:
        features, in_channels = weights["head.kernel"].shape[:2]
    except KeyError:
        raise InvalidArgumentError("weights have no head.kernel")
    blocks = sum(1 for n in weights if n.endswith(".conv1.kernel"))
    stages = sum(1 for n in weights if n.startswith("up") and n.endswith(".kernel"))
    config = ModelConfig(int(features), blocks, 2 ** stages, int(in_channels))
    check_weights(weights, config)
    return config


def check_weights(weights, config: ModelConfig):
    shapes = weight_shapes(config)
    if list(weights) != list(shapes):
        raise InvalidArgumentError("weight names do not match the model config")
    for name, shape in shapes.items():
        if tuple(weights[name].shape) != shape:
            raise InvalidArgumentError(f"{name}: shape {weights[name].shape} != {shape}")


def init_weights(config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Kaiming-normal (fan-in) kernels, zero biases, PReLU slopes of 0.25."""
    rng = derive_stream(seed, "init")
    weights = {}
    for name, shape in weight_shapes(config).items():
        if name.endswith(".kernel"):
            fan_in = shape[1] * shape[2] * shape[3]
            std = math.sqrt(2.0 / fan_in)
            values = rng.normals(math.prod(shape)) * std
            weights[name] = values.reshape(shape).astype(DTYPE)
        elif name.endswith(".slope"):
            weights[name] = np.full(shape, 0.25, dtype=DTYPE)
        else:
            weights[name] = np.zeros(shape, dtype=DTYPE)
    return weights


def _conv(weights, prefix, x):
    return conv2d_forward(x, weights[f"{prefix}.kernel"], weights[f"{prefix}.bias"])


def _forward(weights, config, x):
    cache = {}
    cache["head.in"] = x
    head = _conv(weights, "head", x)
    h = head
    for i in range(config.blocks):
        p = f"block{i}"
        cache[f"{p}.conv1.in"] = h
        a = _conv(weights, f"{p}.conv1", h)
        cache[f"{p}.prelu.in"] = a
        a = prelu_forward(a, weights[f"{p}.prelu.slope"])
        cache[f"{p}.conv2.in"] = a
        h = h + _conv(weights, f"{p}.conv2", a)
    cache["body.in"] = h
    h = _conv(weights, "body", h) + head
    for s in range(config.stages):
        cache[f"up{s}.in"] = h
        h = pixel_shuffle(_conv(weights, f"up{s}", h), 2)
        cache[f"up{s}.prelu.in"] = h
        h = prelu_forward(h, weights[f"up{s}.prelu.slope"])
    cache["tail.in"] = h
    return _conv(weights, "tail", h), cache


def _conv_back(weights, prefix, cache, g, grads):
    gi, gk, gb = conv2d_backward(cache[f"{prefix}.in"], weights[f"{prefix}.kernel"], g)
    grads[f"{prefix}.kernel"] = gk
    grads[f"{prefix}.bias"] = gb
    return gi


def _backward(weights, config, cache, grad_out):
    grads = {}
    g = _conv_back(weights, "tail", cache, grad_out, grads)
    for s in reversed(range(config.stages)):
        g, grads[f"up{s}.prelu.slope"] = prelu_backward(
            cache[f"up{s}.prelu.in"], weights[f"up{s}.prelu.slope"], g
        )
        g = _conv_back(weights, f"up{s}", cache, pixel_shuffle_backward(g, 2), grads)
    g_head = g  # global skip
    g = _conv_back(weights, "body", cache, g, grads)
    for i in reversed(range(config.blocks)):
        p = f"block{i}"
        ga = _conv_back(weights, f"{p}.conv2", cache, g, grads)
        ga, grads[f"{p}.prelu.slope"] = prelu_backward(
            cache[f"{p}.prelu.in"], weights[f"{p}.prelu.slope"], ga
        )
        g = g + _conv_back(weights, f"{p}.conv1", cache, ga, grads)
    _conv_back(weights, "head", cache, g + g_head, grads)
    return {name: grads[name] for name in weights}


def _check_input(x, config):
    x = np.asarray(x)
    if x.ndim != 4:
        raise InvalidArgumentError(f"expected a (B,C,h,w) batch, got shape {x.shape}")
    if x.shape[1] != config.in_channels:
        raise InvalidArgumentError(
            f"batch has {x.shape[1]} channels, model expects {config.in_channels}"
        )
    return x


def forward(weights, lr_batch, config: ModelConfig | None = None):
    """Super-resolve a ``(B,3,h,w)`` batch. The output is not clamped."""
    config = config or config_from_weights(weights)
    x = _check_input(lr_batch, config)
    return _forward(weights, config, x)[0]


def loss_and_grads(weights, lr_batch, hr_batch, loss="l1", config=None):
    config = config or config_from_weights(weights)
    x = _check_input(lr_batch, config)
    hr = np.asarray(hr_batch)
    expected = (x.shape[0], config.in_channels, x.shape[2] * config.scale, x.shape[3] * config.scale)
    if hr.shape != expected:
        raise InvalidArgumentError(f"hr batch shape {hr.shape} != expected {expected}")
    pred, cache = _forward(weights, config, x)
    value, grad = get_loss(loss)(pred, hr)
    return value, _backward(weights, config, cache, grad)


# FSRW weight file: "FSRW", u32 version, u32 count, then per tensor
# u16 name length, utf-8 name, u8 ndim, u32 dims[ndim], f32 payload (all little-endian).
MAGIC = b"FSRW"
VERSION = 1


def weights_to_bytes(weights) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(weights)))
    for name, tensor in weights.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", tensor.ndim))
        buf.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        buf.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    return buf.getvalue()


def weights_from_bytes(data: bytes, path=None) -> dict[str, np.ndarray]:
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise ParseError(f"truncated weight file while reading {what}", pos, path)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise ParseError("bad magic, expected FSRW", 0, path)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise ParseError(f"unsupported version {version}", 4, path)
    weights = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        name = take(nlen, "name").decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1, "ndim"))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, "dims"))
        n = math.prod(dims)
        payload = np.frombuffer(take(4 * n, f"payload of {name}"), dtype="<f4")
        weights[name] = payload.astype(DTYPE).reshape(dims)
    if pos != len(data):
        raise ParseError("trailing bytes after last tensor", pos, path)
    return weights


def save_weights(weights, path):
    Path(path).write_bytes(weights_to_bytes(weights))


def load_weights(path):
    return weights_from_bytes(Path(path).read_bytes(), path=str(path))
