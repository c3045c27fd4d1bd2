"""Dense rank-4 tensor primitives.

Everything downstream (the distillation losses, the demo trainer, the
benchmark kernels) is built on three things defined here:

* ``Tensor4`` -- an immutable (batch, channel, height, width) array of
  float32 values, always finite.
* ``ConvLayer`` -- learnable 1x1 or 3x3 convolution parameters with a
  hand-written forward/backward pair (stride 1, zero padding so spatial
  dims are preserved).
* ``Rng`` -- a counter-based random generator whose stream depends only
  on the seed, never on platform, history or thread count.

Reductions accumulate in float64; only storage is float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

__all__ = [
    "Tensor4",
    "ConvLayer",
    "ConvLayerGrads",
    "Rng",
    "spatial_softmax",
    "conv2d_forward",
    "conv2d_backward",
    "sample_mask",
    "ten1_bytes",
    "tensor_from_ten1",
    "save_ten1",
    "load_ten1",
]

TEN1_MAGIC = b"TEN1"


class Tensor4:
    """Immutable dense tensor with dims (n, c, h, w), float32 storage."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        arr = np.asarray(data)
        if arr.ndim != 4:
            raise ValueError(f"Tensor4 requires a rank-4 array, got rank {arr.ndim}")
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        if arr.size and not np.all(np.isfinite(arr)):
            raise ValueError("Tensor4 values must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Tensor4 is immutable")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def c(self) -> int:
        return self.data.shape[1]

    @property
    def h(self) -> int:
        return self.data.shape[2]

    @property
    def w(self) -> int:
        return self.data.shape[3]

    @property
    def size(self) -> int:
        return self.data.size

    @classmethod
    def zeros(cls, n: int, c: int, h: int, w: int) -> "Tensor4":
        return cls(np.zeros((n, c, h, w), dtype=np.float32))

    @classmethod
    def full(cls, n: int, c: int, h: int, w: int, value: float) -> "Tensor4":
        return cls(np.full((n, c, h, w), value, dtype=np.float32))

    def astype64(self) -> np.ndarray:
        """Writable float64 copy for internal accumulation."""
        return self.data.astype(np.float64)

    def __repr__(self) -> str:
        return f"Tensor4(dims={self.dims})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Tensor4) and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.dims, self.data.tobytes()))


# ---------------------------------------------------------------------------
# TEN1 binary format: magic "TEN1", u32 LE rank (always 4), four u32 LE dims,
# then float32 LE payload in row-major (n, c, h, w) order.
# ---------------------------------------------------------------------------

def ten1_bytes(t: Tensor4) -> bytes:
    header = TEN1_MAGIC + struct.pack("<5I", 4, *t.dims)
    payload = t.data.astype("<f4", copy=False).tobytes()
    return header + payload


def tensor_from_ten1(blob: bytes) -> Tensor4:
    if len(blob) < 24:
        raise ValueError("TEN1 blob truncated: header is 24 bytes")
    if blob[:4] != TEN1_MAGIC:
        raise ValueError("bad magic: expected TEN1")
    rank, n, c, h, w = struct.unpack("<5I", blob[4:24])
    if rank != 4:
        raise ValueError(f"TEN1 rank must be 4, got {rank}")
    count = n * c * h * w
    expected = 24 + 4 * count
    if len(blob) != expected:
        raise ValueError(f"TEN1 payload length mismatch: expected {expected} bytes, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=24).reshape(n, c, h, w)
    return Tensor4(data)


def save_ten1(t: Tensor4, fp: BinaryIO | str) -> None:
    if isinstance(fp, str):
        with open(fp, "wb") as fh:
            fh.write(ten1_bytes(t))
    else:
        fp.write(ten1_bytes(t))


def load_ten1(fp: BinaryIO | str) -> Tensor4:
    if isinstance(fp, str):
        with open(fp, "rb") as fh:
            return tensor_from_ten1(fh.read())
    return tensor_from_ten1(fp.read())


# ---------------------------------------------------------------------------
# Counter-based RNG (splitmix64 finalizer over key + counter).  Output i of a
# given key is mix(key + (i+1)*GOLDEN), so draws are pure functions of
# (seed, counter): reproducible regardless of platform or call batching.
# ---------------------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_SPLIT = np.uint64(0x632BE59BD9B4E019)
_U64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


class Rng:
    """Deterministic counter-based generator.

    Same seed => bit-identical draw sequence, independent of how draws are
    batched.  ``split`` derives a statistically independent child stream.
    """

    __slots__ = ("key", "counter")

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.key = _mix64(np.uint64(seed))
        self.counter = 0

    def next_u64(self, count: int) -> np.ndarray:
        """Next ``count`` raw 64-bit draws, advancing the counter."""
        if count < 0:
            raise ValueError("count must be non-negative")
        idx = np.arange(self.counter + 1, self.counter + count + 1, dtype=np.uint64)
        self.counter += count
        with np.errstate(over="ignore"):
            return _mix64(self.key + idx * _GOLDEN)

    def uniform(self, count: int) -> np.ndarray:
        """``count`` float64 draws uniform in [0, 1)."""
        return (self.next_u64(count) >> np.uint64(11)) * 2.0**-53

    def uniform_signed(self, count: int) -> np.ndarray:
        """``count`` float64 draws uniform in [-1, 1)."""
        return self.uniform(count) * 2.0 - 1.0

    def split(self, label: int) -> "Rng":
        """Independent child stream identified by ``label``."""
        child = Rng.__new__(Rng)
        with np.errstate(over="ignore"):
            child.key = _mix64(self.key ^ _mix64(np.uint64(label & 0xFFFFFFFFFFFFFFFF) * _GOLDEN + _SPLIT))
        child.counter = 0
        return child


# ---------------------------------------------------------------------------
# Convolution layers (kernel 1x1 or 3x3, stride 1, zero padding (k-1)/2).
# ---------------------------------------------------------------------------

@dataclass
class ConvLayer:
    """Learnable convolution parameters: weight (out_c, in_c, k, k), bias (out_c,)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float32)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float32)
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise ValueError("conv weight must have shape (out_c, in_c, k, k)")
        if self.kernel_size not in (1, 3):
            raise ValueError(f"kernel size must be 1 or 3, got {self.kernel_size}")
        if self.bias.shape != (self.out_channels,):
            raise ValueError("bias shape must be (out_c,)")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("conv parameters must be finite")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    @classmethod
    def identity(cls, channels: int, kernel_size: int = 1) -> "ConvLayer":
        """Channel-identity mapping: output equals input exactly."""
        w = np.zeros((channels, channels, kernel_size, kernel_size), dtype=np.float32)
        mid = kernel_size // 2
        for ch in range(channels):
            w[ch, ch, mid, mid] = 1.0
        return cls(w, np.zeros(channels, dtype=np.float32))

    @classmethod
    def init_uniform(cls, rng: Rng, out_channels: int, in_channels: int, kernel_size: int) -> "ConvLayer":
        """Uniform init in +-sqrt(1/fan_in), bias zero."""
        fan_in = in_channels * kernel_size * kernel_size
        bound = float(np.sqrt(1.0 / fan_in))
        count = out_channels * in_channels * kernel_size * kernel_size
        w = rng.uniform_signed(count).reshape(out_channels, in_channels, kernel_size, kernel_size) * bound
        return cls(w.astype(np.float32), np.zeros(out_channels, dtype=np.float32))

    def copy(self) -> "ConvLayer":
        return ConvLayer(self.weight.copy(), self.bias.copy())


@dataclass
class ConvLayerGrads:
    """Gradients mirroring a ConvLayer's parameter shapes."""

    weight: np.ndarray
    bias: np.ndarray


def _pad_same(x64: np.ndarray, k: int) -> np.ndarray:
    if k == 1:
        return x64
    p = (k - 1) // 2
    return np.pad(x64, ((0, 0), (0, 0), (p, p), (p, p)))


def _conv2d(x64: np.ndarray, w64: np.ndarray, b64: np.ndarray) -> np.ndarray:
    """Cross-correlation with zero padding, float64 throughout."""
    k = w64.shape[2]
    xp = _pad_same(x64, k)
    # (n, in_c, h, w, k, k) windows; einsum keeps a deterministic reduction order
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    out = np.einsum("ncijab,ocab->noij", windows, w64, optimize=False)
    return out + b64[None, :, None, None]


def _conv2d_backward(
    x64: np.ndarray, w64: np.ndarray, gout64: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dw, db) of sum(grad_out * conv(x)) in float64."""
    k = w64.shape[2]
    xp = _pad_same(x64, k)
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    gw = np.einsum("ncijab,noij->ocab", windows, gout64, optimize=False)
    gb = gout64.sum(axis=(0, 2, 3))
    # dx is a transposed convolution: correlate grad_out with the spatially
    # flipped kernel, summing over output channels (exact for stride 1,
    # same padding).
    w_flip = w64[:, :, ::-1, ::-1]
    gp = _pad_same(gout64, k)
    gwindows = np.lib.stride_tricks.sliding_window_view(gp, (k, k), axis=(2, 3))
    gx = np.einsum("noijab,ocab->ncij", gwindows, w_flip, optimize=False)
    return gx, gw, gb


def conv2d_forward(x: Tensor4, layer: ConvLayer) -> Tensor4:
    """Apply the layer to x. Output dims (n, out_c, h, w)."""
    if x.c != layer.in_channels:
        raise ValueError(f"channel mismatch: input has {x.c} channels, layer expects {layer.in_channels}")
    if x.size == 0:
        raise ValueError("empty tensor")
    out = _conv2d(x.astype64(), layer.weight.astype(np.float64), layer.bias.astype(np.float64))
    return Tensor4(out)


def conv2d_backward(x: Tensor4, layer: ConvLayer, grad_out: Tensor4) -> tuple[Tensor4, ConvLayerGrads]:
    """Backprop grad_out through the layer at input x."""
    if x.c != layer.in_channels:
        raise ValueError(f"channel mismatch: input has {x.c} channels, layer expects {layer.in_channels}")
    if grad_out.dims != (x.n, layer.out_channels, x.h, x.w):
        raise ValueError(
            f"grad_out dims {grad_out.dims} do not match forward output "
            f"{(x.n, layer.out_channels, x.h, x.w)}"
        )
    gx, gw, gb = _conv2d_backward(x.astype64(), layer.weight.astype(np.float64), grad_out.astype64())
    return Tensor4(gx), ConvLayerGrads(gw.astype(np.float32), gb.astype(np.float32))


# ---------------------------------------------------------------------------
# Spatial softmax and mask sampling.
# ---------------------------------------------------------------------------

def _spatial_softmax64(x64: np.ndarray, temperature: float) -> np.ndarray:
    n, c, h, w = x64.shape
    flat = x64.reshape(n, c, h * w) / temperature
    flat = flat - flat.max(axis=2, keepdims=True)
    e = np.exp(flat)
    return (e / e.sum(axis=2, keepdims=True)).reshape(n, c, h, w)


def spatial_softmax(x: Tensor4, temperature: float) -> Tensor4:
    """Per-(n, c) softmax over spatial locations with temperature scaling.

    Max-subtraction keeps exp() in range; every (n, c) slice of the output
    is a probability distribution over the h*w cells.
    """
    if not (np.isfinite(temperature) and temperature > 0):
        raise ValueError("temperature must be a positive real")
    if x.size == 0:
        raise ValueError("empty tensor")
    return Tensor4(_spatial_softmax64(x.astype64(), float(temperature)))


def sample_mask(rng: Rng, dims: tuple[int, int], ratio: float) -> Tensor4:
    """Binary (1, 1, h, w) mask: each cell is 0 with probability ``ratio``.

    Deterministic given the rng state; cells are zeroed independently.
    """
    h, w = dims
    if h <= 0 or w <= 0:
        raise ValueError("mask dims must be positive")
    if not (np.isfinite(ratio) and 0.0 <= ratio <= 1.0):
        raise ValueError("mask ratio must lie in [0, 1]")
    u = rng.uniform(h * w)
    keep = (u >= ratio).astype(np.float32).reshape(1, 1, h, w)
    return Tensor4(keep)
