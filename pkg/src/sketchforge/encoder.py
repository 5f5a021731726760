"""Minimal convolutional feature extractor with explicit forward/backward.

Layers are 3x3 convolutions (stride 1 or 2, reflection padding 1) each
followed by ReLU; activations at designated tap layers feed the feature
loss. Weights travel in the little-endian SKW1 binary format:

    magic "SKW1" | u32 version=1 | u32 layer_count | u32 tap_count
    | tap_count * u32 tap indices | f32 input_mean[3] | f32 input_std[3]
    | per layer: u32 out_ch, in_ch, kernel=3, stride;
      f32 weights[out][in][3][3]; f32 biases[out]

Weights are held as float32 (the wire type) and promoted to float64 for
arithmetic, so a write/load round-trip is byte-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .canvas import Canvas
from .errors import FormatError, ValidationError
from .rng import Xoshiro256PP

MAGIC = b"SKW1"
VERSION = 1

DEFAULT_WIDTHS = (16, 32, 64, 64)
DEFAULT_STRIDES = (1, 2, 2, 2)


@dataclass
class ConvLayer:
    weight: NDArray[np.float32]  # (out_ch, in_ch, 3, 3)
    bias: NDArray[np.float32]  # (out_ch,)
    stride: int

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float32)
        self.bias = np.asarray(self.bias, dtype=np.float32)
        if self.weight.ndim != 4 or self.weight.shape[2:] != (3, 3):
            raise ValidationError(f"conv weight must be (out, in, 3, 3), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValidationError("bias length must equal out_ch")
        if self.stride not in (1, 2):
            raise ValidationError(f"stride must be 1 or 2, got {self.stride}")
        if not (np.isfinite(self.weight).all() and np.isfinite(self.bias).all()):
            raise ValidationError("layer contains non-finite weights")

    @property
    def out_ch(self) -> int:
        return self.weight.shape[0]

    @property
    def in_ch(self) -> int:
        return self.weight.shape[1]


@dataclass
class EncoderNet:
    layers: list[ConvLayer]
    taps: tuple[int, ...]
    input_mean: NDArray[np.float32] = field(default_factory=lambda: np.zeros(3, np.float32))
    input_std: NDArray[np.float32] = field(default_factory=lambda: np.ones(3, np.float32))

    def __post_init__(self):
        self.taps = tuple(int(t) for t in self.taps)
        self.input_mean = np.asarray(self.input_mean, dtype=np.float32).reshape(3)
        self.input_std = np.asarray(self.input_std, dtype=np.float32).reshape(3)
        if not self.layers:
            raise ValidationError("encoder needs at least one layer")
        for i in range(1, len(self.layers)):
            if self.layers[i].in_ch != self.layers[i - 1].out_ch:
                raise ValidationError(
                    f"layer {i} expects {self.layers[i].in_ch} input channels but "
                    f"layer {i - 1} produces {self.layers[i - 1].out_ch}"
                )
        if any(t < 0 or t >= len(self.layers) for t in self.taps):
            raise ValidationError("tap index out of range")
        if any(b <= a for a, b in zip(self.taps, self.taps[1:])):
            raise ValidationError("taps must be strictly increasing")
        if not self.taps:
            raise ValidationError("encoder needs at least one tap")
        if (np.abs(self.input_std) < 1e-12).any():
            raise ValidationError("input_std must be non-zero")

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_ch

    def with_taps(self, taps) -> EncoderNet:
        return EncoderNet(self.layers, tuple(taps), self.input_mean, self.input_std)


FeatureSet = list[tuple[int, NDArray[np.float64]]]


def write_skw1(net: EncoderNet, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, len(net.layers), len(net.taps)))
        fh.write(struct.pack(f"<{len(net.taps)}I", *net.taps))
        fh.write(net.input_mean.astype("<f4").tobytes())
        fh.write(net.input_std.astype("<f4").tobytes())
        for layer in net.layers:
            fh.write(struct.pack("<IIII", layer.out_ch, layer.in_ch, 3, layer.stride))
            fh.write(layer.weight.astype("<f4").tobytes())
            fh.write(layer.bias.astype("<f4").tobytes())


def load_skw1(path: str) -> EncoderNet:
    with open(path, "rb") as fh:
        raw = fh.read()
    view = memoryview(raw)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(f"truncated SKW1 file (need {n} bytes at offset {pos})")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise FormatError("bad SKW1 magic")
    version, layer_count, tap_count = struct.unpack("<III", take(12))
    if version != VERSION:
        raise FormatError(f"unsupported SKW1 version {version}")
    if layer_count == 0:
        raise ValidationError("SKW1 file declares zero layers")
    taps = struct.unpack(f"<{tap_count}I", take(4 * tap_count))
    input_mean = np.frombuffer(take(12), dtype="<f4").copy()
    input_std = np.frombuffer(take(12), dtype="<f4").copy()
    layers = []
    for _ in range(layer_count):
        out_ch, in_ch, kernel, stride = struct.unpack("<IIII", take(16))
        if kernel != 3:
            raise FormatError(f"only 3x3 kernels supported, got {kernel}")
        n_w = out_ch * in_ch * 9
        weight = np.frombuffer(take(4 * n_w), dtype="<f4").copy().reshape(out_ch, in_ch, 3, 3)
        bias = np.frombuffer(take(4 * out_ch), dtype="<f4").copy()
        if not (np.isfinite(weight).all() and np.isfinite(bias).all()):
            raise ValidationError("SKW1 weights contain NaN or Inf")
        layers.append(ConvLayer(weight=weight, bias=bias, stride=int(stride)))
    if pos != len(raw):
        raise FormatError(f"{len(raw) - pos} trailing bytes after SKW1 payload")
    return EncoderNet(layers=layers, taps=taps, input_mean=input_mean, input_std=input_std)


def random_encoder(seed: int, widths=DEFAULT_WIDTHS, in_channels: int = 1,
                   strides=None, taps=None, input_mean: float = 0.0,
                   input_std: float = 1.0) -> EncoderNet:
    """He-initialised random conv stack (std = sqrt(2 / (9 * in_ch)),
    zero biases), deterministic for a given seed via the pinned PRNG."""
    widths = tuple(int(w) for w in widths)
    if not widths:
        raise ValidationError("widths must be non-empty")
    if strides is None:
        strides = tuple(DEFAULT_STRIDES[: len(widths)]) if len(widths) <= len(DEFAULT_STRIDES) \
            else (1,) + (2,) * (len(widths) - 1)
    if taps is None:
        taps = tuple(range(len(widths)))
    rng = Xoshiro256PP(seed)
    layers = []
    prev = in_channels
    for width, stride in zip(widths, strides):
        std = np.sqrt(2.0 / (9.0 * prev))
        w = rng.normals(width * prev * 9).reshape(width, prev, 3, 3) * std
        layers.append(ConvLayer(weight=w.astype(np.float32),
                                bias=np.zeros(width, np.float32), stride=int(stride)))
        prev = width
    mean = np.full(3, input_mean, np.float32)
    std_arr = np.full(3, input_std, np.float32)
    return EncoderNet(layers=layers, taps=tuple(taps), input_mean=mean, input_std=std_arr)


@dataclass
class EncoderTape:
    net: EncoderNet
    pre_acts: list[NDArray[np.float64]]  # pre-ReLU conv outputs per layer
    in_shape: tuple[int, int, int]


def _reflect_pad(x: NDArray[np.float64]) -> NDArray[np.float64]:
    if x.shape[0] < 2 or x.shape[1] < 2:
        raise ValidationError("reflection padding needs spatial dims >= 2")
    return np.pad(x, ((1, 1), (1, 1), (0, 0)), mode="reflect")


def _reflect_pad_adjoint(gpad: NDArray[np.float64]) -> NDArray[np.float64]:
    """Adjoint of 1-pixel reflection padding: fold border gradients back onto
    the rows/columns they mirrored."""
    g = gpad[1:-1, 1:-1].copy()
    g[1, :] += gpad[0, 1:-1]
    g[-2, :] += gpad[-1, 1:-1]
    g[:, 1] += gpad[1:-1, 0]
    g[:, -2] += gpad[1:-1, -1]
    g[1, 1] += gpad[0, 0]
    g[1, -2] += gpad[0, -1]
    g[-2, 1] += gpad[-1, 0]
    g[-2, -2] += gpad[-1, -1]
    return g


def _conv_forward(x: NDArray[np.float64], layer: ConvLayer) -> NDArray[np.float64]:
    xp = _reflect_pad(x)
    h, w, _ = x.shape
    s = layer.stride
    ho = (h - 1) // s + 1
    wo = (w - 1) // s + 1
    weight = layer.weight.astype(np.float64)
    out = np.tile(layer.bias.astype(np.float64), (ho, wo, 1))
    for ky in range(3):
        for kx in range(3):
            patch = xp[ky : ky + (ho - 1) * s + 1 : s, kx : kx + (wo - 1) * s + 1 : s, :]
            out += np.einsum("hwi,oi->hwo", patch, weight[:, :, ky, kx])
    return out


def _conv_backward_input(gout: NDArray[np.float64], layer: ConvLayer,
                         in_shape: tuple[int, int]) -> NDArray[np.float64]:
    h, w = in_shape
    s = layer.stride
    ho, wo = gout.shape[:2]
    weight = layer.weight.astype(np.float64)
    gpad = np.zeros((h + 2, w + 2, layer.in_ch))
    for ky in range(3):
        for kx in range(3):
            gpad[ky : ky + (ho - 1) * s + 1 : s, kx : kx + (wo - 1) * s + 1 : s, :] += np.einsum(
                "hwo,oi->hwi", gout, weight[:, :, ky, kx]
            )
    return _reflect_pad_adjoint(gpad)


def forward(net: EncoderNet, img: Canvas) -> tuple[FeatureSet, EncoderTape]:
    """Run the conv/ReLU stack, returning tap activations and a tape holding
    the pre-activations the backward pass needs for ReLU masking."""
    x = img.data
    c = net.in_channels
    if img.channels != c:
        raise ValidationError(f"encoder expects {c} input channels, image has {img.channels}")
    mean = net.input_mean.astype(np.float64)[:c]
    std = net.input_std.astype(np.float64)[:c]
    x = (x - mean) / std
    pre_acts = []
    features: FeatureSet = []
    for i, layer in enumerate(net.layers):
        z = _conv_forward(x, layer)
        pre_acts.append(z)
        x = np.maximum(z, 0.0)
        if i in net.taps:
            features.append((i, x))
    return features, EncoderTape(net=net, pre_acts=pre_acts, in_shape=img.data.shape)


def backward(tape: EncoderTape, dL_dfeatures: FeatureSet) -> NDArray[np.float64]:
    """Propagate per-tap activation gradients back to the input image."""
    net = tape.net
    grads = dict()
    for idx, g in dL_dfeatures:
        if idx not in net.taps:
            raise ValidationError(f"gradient supplied for non-tap layer {idx}")
        if g.shape != tape.pre_acts[idx].shape:
            raise ValidationError(
                f"tap {idx} gradient shape {g.shape} != activation {tape.pre_acts[idx].shape}"
            )
        grads[idx] = np.asarray(g, dtype=np.float64)

    running: NDArray[np.float64] | None = None
    for i in range(len(net.layers) - 1, -1, -1):
        if running is None:
            running = np.zeros_like(tape.pre_acts[i])
        if i in grads:
            running = running + grads[i]
        running = running * (tape.pre_acts[i] > 0.0)
        in_shape = tape.in_shape[:2] if i == 0 else tape.pre_acts[i - 1].shape[:2]
        running = _conv_backward_input(running, net.layers[i], in_shape)
    c = net.in_channels
    std = net.input_std.astype(np.float64)[:c]
    return running / std
