"""LR synthesis: blur -> bicubic downsample -> additive noise -> JPEG.

Stages always run in that order. In ``train`` mode the active stages draw
their parameters from the stream; in ``test`` mode parameters are fixed
and the caller's stream is never advanced.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError
from .tensor import DTYPE


class DegradationType(enum.IntEnum):
    CLEAN = 0
    BLUR = 1
    NOISE = 2
    JPEG = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value) -> "DegradationType":
        if isinstance(value, cls):
            return value
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise InvalidArgumentError(f"unknown degradation type {value!r}")


BLUR_RANGE = (0.2, 3.0)
NOISE_RANGE = (1 / 255, 30 / 255)
JPEG_RANGE = (30, 95)
TEST_PARAMS = {"blur": 2.0, "noise": 20 / 255, "jpeg": 50}

# canonical order of the 8 cross-degradation test variants
VARIANTS = ("clean", "blur", "noise", "jpeg", "b+n", "b+j", "n+j", "b+n+j")
_VARIANT_STAGES = {
    "clean": (),
    "blur": ("blur",),
    "noise": ("noise",),
    "jpeg": ("jpeg",),
    "b+n": ("blur", "noise"),
    "b+j": ("blur", "jpeg"),
    "n+j": ("noise", "jpeg"),
    "b+n+j": ("blur", "noise", "jpeg"),
}


@dataclass(frozen=True)
class DegradationSpec:
    """Active stages and their parameters.

    Each of ``blur``/``noise``/``jpeg`` is ``None`` (inactive), a scalar
    (fixed) or a ``(low, high)`` pair (sampled in train mode).
    """

    scale: int = 4
    blur: float | tuple | None = None
    noise: float | tuple | None = None
    jpeg: int | tuple | None = None
    mode: str = "test"

    def __post_init__(self):
        if self.scale not in (1, 2, 4):
            raise InvalidArgumentError(f"scale must be 1, 2 or 4, got {self.scale}")
        if self.mode not in ("train", "test"):
            raise InvalidArgumentError(f"mode must be train or test, got {self.mode!r}")
        if self.mode == "test":
            for name in ("blur", "noise", "jpeg"):
                if isinstance(getattr(self, name), (tuple, list)):
                    raise InvalidArgumentError(f"test mode needs a fixed {name} parameter")

    def to_dict(self) -> dict:
        def enc(v):
            return list(v) if isinstance(v, tuple) else v

        return {"scale": self.scale, "blur": enc(self.blur), "noise": enc(self.noise),
                "jpeg": enc(self.jpeg), "mode": self.mode}

    @classmethod
    def from_dict(cls, d) -> "DegradationSpec":
        def dec(v):
            return tuple(v) if isinstance(v, list) else v

        return cls(scale=d["scale"], blur=dec(d.get("blur")), noise=dec(d.get("noise")),
                   jpeg=dec(d.get("jpeg")), mode=d.get("mode", "test"))


def spec_for_type(dtype, scale, ranges=None) -> DegradationSpec:
    """Train-mode spec for a single client degradation type."""
    ranges = {"blur": BLUR_RANGE, "noise": NOISE_RANGE, "jpeg": JPEG_RANGE, **(ranges or {})}
    dtype = DegradationType.parse(dtype)
    spec = DegradationSpec(scale=scale, mode="train")
    if dtype is DegradationType.CLEAN:
        return spec
    key = dtype.label
    return replace(spec, **{key: tuple(ranges[key])})


def test_variant_specs(scale, params=None) -> dict[str, DegradationSpec]:
    params = {**TEST_PARAMS, **(params or {})}
    return {
        name: DegradationSpec(scale=scale, mode="test", **{s: params[s] for s in stages})
        for name, stages in _VARIANT_STAGES.items()
    }


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Isotropic kernel of size ``2*ceil(3*sigma)+1`` normalized to sum 1."""
    if not sigma > 0:
        raise InvalidArgumentError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3 * sigma)
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2 * sigma * sigma))
    return k / k.sum()


def apply_blur(image, kernel):
    """Per-channel correlation with edge-replicate padding; shape preserved."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] % 2 == 0:
        raise InvalidArgumentError(f"kernel must be odd and square, got {kernel.shape}")
    r = kernel.shape[0] // 2
    pad = [(0, 0)] * (image.ndim - 2) + [(r, r), (r, r)]
    padded = np.pad(image.astype(np.float64), pad, mode="edge")
    win = sliding_window_view(padded, kernel.shape, axis=(-2, -1))
    return np.tensordot(win, kernel, axes=([-2, -1], [0, 1])).astype(image.dtype)


def cubic(x, a=-0.5):
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def bicubic_weights(n_in: int, s: int) -> np.ndarray:
    """(n_in//s, n_in) resampling matrix; kernel stretched by ``s`` and renormalized."""
    n_out = n_in // s
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        center = (i + 0.5) * s - 0.5
        lo = math.floor(center - 2 * s)
        hi = math.ceil(center + 2 * s)
        taps = np.arange(lo, hi + 1)
        w = cubic((taps - center) / s)
        w /= w.sum()
        np.add.at(m[i], np.clip(taps, 0, n_in - 1), w)
    return m


def downsample_bicubic(image, s: int):
    """Antialiased bicubic (a=-0.5) reduction by ``s``, edge-replicated, clamped to [0,1]."""
    c, h, w = image.shape
    if h % s or w % s:
        raise InvalidArgumentError(f"image {h}x{w} not divisible by scale {s}")
    if s == 1:
        return image.copy()
    mh = bicubic_weights(h, s)
    mw = bicubic_weights(w, s)
    out = np.einsum("ij,cjk,lk->cil", mh, image.astype(np.float64), mw)
    # negative cubic lobes can overshoot the unit range
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def add_gaussian_noise(image, sigma: float, rng):
    """Add i.i.d. N(0, sigma^2) per element in (C,H,W) row-major order, then clamp."""
    if sigma < 0:
        raise InvalidArgumentError(f"noise sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return image.copy()
    noise = rng.normals(image.size).reshape(image.shape) * sigma
    return np.clip(image + noise, 0.0, 1.0).astype(image.dtype)


_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)
_CHROMA_TABLE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.int64)


def quant_tables(quality: int) -> tuple[np.ndarray, np.ndarray]:
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    return tuple(
        np.clip((t * scale + 50) // 100, 1, 255).astype(np.float64)
        for t in (_LUMA_TABLE, _CHROMA_TABLE)
    )


def _dct_matrix(n=8):
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    c = np.cos((2 * x + 1) * k * np.pi / (2 * n))
    c[0] *= math.sqrt(1 / n)
    c[1:] *= math.sqrt(2 / n)
    return c


DCT8 = _dct_matrix()


def rgb_to_ycbcr(rgb):
    r, g, b = rgb
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.stack([y, cb, cr])


def ycbcr_to_rgb(ycc):
    y, cb, cr = ycc[0], ycc[1] - 128.0, ycc[2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b])


def jpeg_roundtrip(image, quality: int):
    """Lossy JPEG distortion without chroma subsampling or entropy coding."""
    if not (isinstance(quality, (int, np.integer)) and 1 <= quality <= 100):
        raise InvalidArgumentError(f"JPEG quality must be an integer in [1,100], got {quality}")
    if image.shape[0] != 3:
        raise InvalidArgumentError("JPEG round trip needs a 3-channel image")
    _, h, w = image.shape
    ycc = rgb_to_ycbcr(image.astype(np.float64) * 255.0) - 128.0
    ph, pw = -h % 8, -w % 8
    ycc = np.pad(ycc, ((0, 0), (0, ph), (0, pw)), mode="edge")
    H, W = ycc.shape[1:]
    # (C, by, bx, 8, 8) block view
    blocks = ycc.reshape(3, H // 8, 8, W // 8, 8).transpose(0, 1, 3, 2, 4)
    coef = DCT8 @ blocks @ DCT8.T
    luma_q, chroma_q = quant_tables(int(quality))
    q = np.stack([luma_q, chroma_q, chroma_q])[:, None, None]
    coef = np.round(coef / q) * q
    rec = DCT8.T @ coef @ DCT8
    rec = rec.transpose(0, 1, 3, 2, 4).reshape(3, H, W)[:, :h, :w] + 128.0
    rgb = ycbcr_to_rgb(rec) / 255.0
    return np.clip(rgb, 0.0, 1.0).astype(image.dtype)


def degrade(hr, spec: DegradationSpec, rng):
    """Apply the active stages to a (C,H,W) HR image.

    Train mode consumes, in order: 1 draw for a ranged blur sigma, 1 for a
    ranged noise sigma, 2*ceil(C*h*w/2) for the noise field, 1 for a ranged
    JPEG quality. Test mode works on a copy of ``rng``.
    """
    if spec.mode == "test":
        rng = rng.copy() if rng is not None else None
    _, h, w = hr.shape
    if h % spec.scale or w % spec.scale:
        raise InvalidArgumentError(f"HR {h}x{w} not divisible by scale {spec.scale}")
    x = hr
    blur = spec.blur
    if isinstance(blur, (tuple, list)):
        blur = rng.uniform(*blur)
    if blur is not None:
        x = apply_blur(x, gaussian_kernel(blur))
    x = downsample_bicubic(x, spec.scale)
    noise = spec.noise
    if isinstance(noise, (tuple, list)):
        noise = rng.uniform(*noise)
    if noise is not None:
        if rng is None:
            raise InvalidArgumentError("noise stage needs a random stream")
        x = add_gaussian_noise(x, noise, rng)
    q = spec.jpeg
    if isinstance(q, (tuple, list)):
        q = rng.randint(int(q[0]), int(q[1]))
    if q is not None:
        x = jpeg_roundtrip(x, int(q))
    return np.clip(x, 0.0, 1.0).astype(DTYPE)
