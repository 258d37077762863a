"""Dense float32 kernels with hand-written backward passes.

Tensors are plain ``numpy.ndarray`` objects. Image-like tensors use
``(C, H, W)`` layout; every kernel here also accepts a leading batch axis
``(B, C, H, W)``. Convolutions are stride-1 cross-correlations with "same"
zero padding.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError

DTYPE = np.float32


def _as_batch(x):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise InvalidArgumentError(f"expected (C,H,W) or (B,C,H,W), got shape {x.shape}")


def _im2col(x, kh, kw):
    """(B,C,H,W) -> (B*H*W, C*kh*kw) patch matrix with zero padding."""
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    b, c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(padded, (kh, kw), axis=(2, 3))  # B,C,H,W,kh,kw
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * kh * kw)


def _check_conv(x, kernel, bias=None):
    if kernel.ndim != 4:
        raise InvalidArgumentError(f"kernel must be (Cout,Cin,kh,kw), got {kernel.shape}")
    cout, cin, kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise InvalidArgumentError(f"kernel spatial size must be odd, got {kh}x{kw}")
    if x.shape[-3] != cin:
        raise InvalidArgumentError(
            f"input has {x.shape[-3]} channels but kernel expects {cin}"
        )
    if bias is not None and bias.shape != (cout,):
        raise InvalidArgumentError(f"bias must have shape ({cout},), got {bias.shape}")


def conv2d_forward(x, kernel, bias=None):
    x = np.asarray(x)
    kernel = np.asarray(kernel)
    _check_conv(x, kernel, bias)
    xb, squeeze = _as_batch(x)
    cout, cin, kh, kw = kernel.shape
    b, _, h, w = xb.shape
    cols = _im2col(xb, kh, kw)
    out = cols @ kernel.reshape(cout, -1).T
    if bias is not None:
        out += bias
    out = out.reshape(b, h, w, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    return out[0] if squeeze else out


def conv2d_backward(x, kernel, grad_out):
    """Gradients of :func:`conv2d_forward` w.r.t. input, kernel and bias."""
    x = np.asarray(x)
    kernel = np.asarray(kernel)
    grad_out = np.asarray(grad_out)
    _check_conv(x, kernel)
    cout, cin, kh, kw = kernel.shape
    expected = x.shape[:-3] + (cout,) + x.shape[-2:]
    if grad_out.shape != expected:
        raise InvalidArgumentError(f"grad_out shape {grad_out.shape} != {expected}")
    xb, squeeze = _as_batch(x)
    gb, _ = _as_batch(grad_out)
    g2 = gb.transpose(0, 2, 3, 1).reshape(-1, cout)
    grad_kernel = (g2.T @ _im2col(xb, kh, kw)).reshape(kernel.shape)
    grad_bias = g2.sum(axis=0)
    # full correlation with the flipped, channel-transposed kernel
    flipped = np.ascontiguousarray(kernel[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    grad_input = conv2d_forward(gb, flipped)
    if squeeze:
        grad_input = grad_input[0]
    return grad_input, grad_kernel.astype(kernel.dtype), grad_bias.astype(kernel.dtype)


def _channel_view(slope, x):
    if slope.ndim != 1 or slope.shape[0] != x.shape[-3]:
        raise InvalidArgumentError(
            f"slope length {slope.shape} does not match {x.shape[-3]} channels"
        )
    return slope.reshape(-1, 1, 1)


def prelu_forward(x, slope):
    s = _channel_view(np.asarray(slope), x)
    return np.where(x > 0, x, s * x).astype(x.dtype, copy=False)


def prelu_backward(x, slope, grad_out):
    s = _channel_view(np.asarray(slope), x)
    pos = x > 0
    grad_input = np.where(pos, grad_out, s * grad_out).astype(x.dtype, copy=False)
    contrib = np.where(pos, 0, x * grad_out)
    axes = tuple(i for i in range(x.ndim) if i != x.ndim - 3)
    grad_slope = contrib.sum(axis=axes).astype(slope.dtype)
    return grad_input, grad_slope


def pixel_shuffle(x, r: int):
    """Depth-to-space: ``(..., C*r*r, H, W) -> (..., C, H*r, W*r)``."""
    *lead, c, h, w = x.shape
    if r < 1 or c % (r * r):
        raise InvalidArgumentError(f"{c} channels not divisible by r^2={r * r}")
    oc = c // (r * r)
    y = x.reshape(*lead, oc, r, r, h, w)
    n = len(lead)
    y = y.transpose(*range(n), n, n + 3, n + 1, n + 4, n + 2)
    return np.ascontiguousarray(y.reshape(*lead, oc, h * r, w * r))


def pixel_shuffle_backward(grad_out, r: int):
    """Exact inverse scatter of :func:`pixel_shuffle` (space-to-depth)."""
    *lead, c, hr, wr = grad_out.shape
    if r < 1 or hr % r or wr % r:
        raise InvalidArgumentError(f"spatial dims {hr}x{wr} not divisible by r={r}")
    h, w = hr // r, wr // r
    y = grad_out.reshape(*lead, c, h, r, w, r)
    n = len(lead)
    y = y.transpose(*range(n), n, n + 2, n + 4, n + 1, n + 3)
    return np.ascontiguousarray(y.reshape(*lead, c * r * r, h, w))


def _check_pair(pred, target):
    if pred.shape != target.shape:
        raise InvalidArgumentError(f"shape mismatch: {pred.shape} vs {target.shape}")


def l1_loss(pred, target):
    _check_pair(pred, target)
    diff = pred - target
    loss = float(np.mean(np.abs(diff), dtype=np.float64))
    grad = (np.sign(diff) / diff.size).astype(pred.dtype)
    return loss, grad


def mse_loss(pred, target):
    _check_pair(pred, target)
    diff = pred - target
    loss = float(np.mean(np.square(diff, dtype=np.float64)))
    grad = (diff * (2.0 / diff.size)).astype(pred.dtype)
    return loss, grad


LOSSES = {"l1": l1_loss, "mse": mse_loss}


def get_loss(name: str):
    try:
        return LOSSES[name.lower()]
    except KeyError:
        raise InvalidArgumentError(f"unknown loss {name!r}; choose from {sorted(LOSSES)}")


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update. Inputs are left untouched.

    Returns ``(new_params, new_state)``.
    """
    if list(params) != list(grads):
        raise InvalidArgumentError("grads are not aligned name-by-name with params")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** step
    corr2 = 1.0 - b2 ** step
    new_params, new_m, new_v = {}, {}, {}
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise InvalidArgumentError(
                f"{name}: grad shape {g.shape} != param shape {theta.shape}"
            )
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(theta)
            v = np.zeros_like(theta)
        m = (b1 * m + (1.0 - b1) * g).astype(theta.dtype)
        v = (b2 * v + (1.0 - b2) * g * g).astype(theta.dtype)
        m_hat = m / corr1
        v_hat = v / corr2
        new_params[name] = (theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(
            theta.dtype
        )
        new_m[name] = m
        new_v[name] = v
    new_state = AdamState(state.lr, b1, b2, state.eps, step, new_m, new_v)
    return new_params, new_state
