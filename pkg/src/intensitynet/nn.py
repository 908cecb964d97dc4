"""Dense/conv network kernels with hand-derived backward passes.

Everything works on plain numpy arrays. The convolution is a zero-padded
cross-correlation evaluated through ``scipy.signal.fftconvolve`` (in float64
regardless of input dtype, so rounding stays far below test tolerances);
its gradients and the dense/activation/loss gradients are exact analytic
expressions, pinned down by the finite-difference checks in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import expit

#: Clamp applied to probabilities inside the binary cross entropy.
BCE_EPS = 1e-7


@dataclass
class LayerParams:
    """One layer's weights and bias, together with gradient buffers."""

    name: str
    weights: np.ndarray
    bias: np.ndarray
    grad_weights: Optional[np.ndarray] = None
    grad_bias: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.grad_weights is None:
            self.grad_weights = np.zeros_like(self.weights)
        if self.grad_bias is None:
            self.grad_bias = np.zeros_like(self.bias)
        if self.grad_weights.shape != self.weights.shape or self.grad_bias.shape != self.bias.shape:
            raise ValueError(f"layer {self.name!r}: gradient shapes must match parameter shapes")

    def zero_grads(self) -> None:
        self.grad_weights.fill(0)
        self.grad_bias.fill(0)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float32):
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _check_conv_shapes(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, padding: int) -> None:
    if x.ndim != 3:
        raise ValueError(f"conv input must be (C, H, W), got shape {x.shape}")
    if weights.ndim != 4:
        raise ValueError(f"conv weights must be (F, C, K, K), got shape {weights.shape}")
    filters, channels, kh, kw = weights.shape
    if channels != x.shape[0]:
        raise ValueError(f"conv channel mismatch: input has {x.shape[0]}, weights expect {channels}")
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv kernel must be square with odd size, got {kh}x{kw}")
    if bias.shape != (filters,):
        raise ValueError(f"conv bias must have shape ({filters},), got {bias.shape}")
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    if x.shape[1] + 2 * padding - kh + 1 < 1 or x.shape[2] + 2 * padding - kw + 1 < 1:
        raise ValueError(
            f"conv output would be empty for input {x.shape}, kernel {kh}, padding {padding}"
        )


def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, padding: int) -> np.ndarray:
    """Cross-correlate (C, H, W) with (F, C, K, K) under zero padding.

    Returns (F, H + 2*padding - K + 1, W + 2*padding - K + 1); with K odd and
    padding = (K - 1) / 2 the spatial size is preserved.
    """
    _check_conv_shapes(x, weights, bias, padding)
    xp = np.pad(x.astype(np.float64), ((0, 0), (padding, padding), (padding, padding)))
    w = weights.astype(np.float64)
    # correlation = convolution with a spatially flipped kernel
    out = fftconvolve(xp[None], w[..., ::-1, ::-1], mode="valid", axes=(-2, -1)).sum(axis=1)
    out += bias.astype(np.float64)[:, None, None]
    return out.astype(np.result_type(x, weights))


def conv2d_backward(
    upstream: np.ndarray, x: np.ndarray, weights: np.ndarray, padding: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of :func:`conv2d_forward` w.r.t. input, weights, and bias.

    ``upstream`` is dLoss/dOutput of shape (F, H', W') and ``x`` the cached
    forward input. The weight gradient is the valid correlation of the padded
    input with the upstream map; the input gradient is the full convolution
    of the upstream map with the kernel, cropped back through the padding.
    """
    filters, channels, k, _ = weights.shape
    h, w = x.shape[1], x.shape[2]
    expected = (filters, h + 2 * padding - k + 1, w + 2 * padding - k + 1)
    if upstream.shape != expected:
        raise ValueError(f"upstream gradient shape {upstream.shape}, expected {expected}")
    up = upstream.astype(np.float64)
    xp = np.pad(x.astype(np.float64), ((0, 0), (padding, padding), (padding, padding)))
    w64 = weights.astype(np.float64)

    grad_bias = up.sum(axis=(-2, -1))
    grad_weights = fftconvolve(xp[None], up[:, None, ::-1, ::-1], mode="valid", axes=(-2, -1))
    full = fftconvolve(up[:, None], w64, mode="full", axes=(-2, -1)).sum(axis=0)
    grad_x = full[:, padding : padding + h, padding : padding + w]
    return (
        grad_x.astype(x.dtype),
        grad_weights.astype(weights.dtype),
        grad_bias.astype(weights.dtype),
    )


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map ``x @ weights.T + bias`` for x of shape (In,) or (B, In)."""
    if weights.ndim != 2:
        raise ValueError(f"dense weights must be (Out, In), got shape {weights.shape}")
    if x.shape[-1] != weights.shape[1]:
        raise ValueError(f"dense input size {x.shape[-1]} != weight In {weights.shape[1]}")
    if bias.shape != (weights.shape[0],):
        raise ValueError(f"dense bias must have shape ({weights.shape[0]},), got {bias.shape}")
    return x @ weights.T + bias


def dense_backward(
    upstream: np.ndarray, x: np.ndarray, weights: np.ndarray, need_input_grad: bool = True
) -> tuple[Optional[np.ndarray], np.ndarray, np.ndarray]:
    """Gradients of :func:`dense_forward`; skips the input gradient on request."""
    grad_x = upstream @ weights if need_input_grad else None
    if x.ndim == 1:
        grad_w = np.outer(upstream, x)
        grad_b = upstream.copy()
    else:
        grad_w = upstream.T @ x
        grad_b = upstream.sum(axis=0)
    return grad_x, grad_w, grad_b


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def sigmoid_backward(upstream: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Backward through sigmoid given its forward output."""
    return upstream * out * (1.0 - out)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(upstream: np.ndarray, x: np.ndarray) -> np.ndarray:
    return upstream * (x > 0)


def masked_mse_loss(
    pred: np.ndarray, target: np.ndarray, mask: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean squared error over masked cells only.

    Unmasked cells contribute nothing: their target values never enter the
    arithmetic and their gradient is exactly zero. An all-false mask yields
    loss 0 with a zero gradient.
    """
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise ValueError(
            f"shape mismatch: pred {pred.shape}, target {target.shape}, mask {mask.shape}"
        )
    n = int(np.count_nonzero(mask))
    if n == 0:
        return 0.0, np.zeros_like(pred)
    diff = np.where(mask, np.subtract(pred, target, dtype=np.float64), 0.0)
    loss = float(np.sum(diff * diff) / n)
    grad = ((2.0 / n) * diff).astype(pred.dtype)
    return loss, grad


def bce_loss(pred: np.ndarray, target: np.ndarray, eps: float = BCE_EPS) -> tuple[float, np.ndarray]:
    """Mean binary cross entropy over every element, with clamped probabilities.

    Probabilities are clamped to [eps, 1 - eps] before the logs; the gradient
    is zero where the clamp is active (the composite is flat there).
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, target {target.shape}")
    p = np.clip(pred.astype(np.float64), eps, 1.0 - eps)
    t = target.astype(np.float64)
    loss = float(-np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p)))
    inside = (pred > eps) & (pred < 1.0 - eps)
    grad = np.where(inside, (p - t) / (p * (1.0 - p)), 0.0) / pred.size
    return loss, grad.astype(pred.dtype)


class Adam:
    """Adam over a list of :class:`LayerParams`; ``step`` clears gradients.

    Bias correction is folded into the per-step rate, which is algebraically
    the standard update with epsilon rescaled by sqrt(1 - beta2**t).
    """

    def __init__(
        self,
        params: Sequence[LayerParams],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> None:
        if learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {learning_rate}")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        self.params = list(params)
        for layer in self.params:
            # the in-place flat updates below require contiguous parameters
            if not (layer.weights.flags.c_contiguous and layer.bias.flags.c_contiguous):
                raise ValueError(f"layer {layer.name!r}: parameters must be C-contiguous")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self._moments = [
            (np.zeros_like(t), np.zeros_like(t))
            for layer in self.params
            for t in (layer.weights, layer.bias)
        ]
        max_size = max(m.size for m, _ in self._moments)
        self._scratch = np.empty(max_size, dtype=self.params[0].weights.dtype)

    def _tensors(self):
        for layer in self.params:
            yield layer.weights, layer.grad_weights
            yield layer.bias, layer.grad_bias

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc2 = math.sqrt(1.0 - self.beta2**t)
        alpha = self.learning_rate * bc2 / (1.0 - self.beta1**t)
        eps_t = self.epsilon * bc2
        for (param, grad), (m, v) in zip(self._tensors(), self._moments):
            g = grad.reshape(-1)
            mf, vf = m.reshape(-1), v.reshape(-1)
            scratch = self._scratch[: g.size]
            if scratch.dtype != g.dtype:
                scratch = np.empty(g.size, dtype=g.dtype)
            np.multiply(mf, self.beta1, out=mf)
            np.multiply(g, 1.0 - self.beta1, out=scratch)
            mf += scratch
            np.multiply(vf, self.beta2, out=vf)
            np.multiply(g, g, out=scratch)
            scratch *= 1.0 - self.beta2
            vf += scratch
            np.sqrt(vf, out=scratch)
            scratch += eps_t
            np.divide(mf, scratch, out=scratch)
            scratch *= alpha
            param.reshape(-1)[...] -= scratch
            grad.fill(0)


def gradient_check(
    loss_and_grads: Callable[[Sequence[np.ndarray]], tuple[float, Sequence[np.ndarray]]],
    params: Sequence[np.ndarray],
    step: float = 1e-3,
    sample_size: int = 100,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error of analytic gradients vs central finite differences.

    ``loss_and_grads(params)`` must return ``(loss, grads)`` with one gradient
    array per parameter array. A random sample of coordinates (all of them if
    there are fewer than ``sample_size``) is perturbed in place by ``+-step``
    and restored. Use float64 parameters; float32 drowns the differences.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    if rng is None:
        rng = np.random.default_rng(0)
    params = list(params)
    offsets = np.cumsum([0] + [p.size for p in params])
    total = int(offsets[-1])
    if total <= sample_size:
        picks = np.arange(total)
    else:
        picks = rng.choice(total, size=sample_size, replace=False)

    _, grads = loss_and_grads(params)
    analytic = []
    for flat in picks:
        pi = int(np.searchsorted(offsets, flat, side="right") - 1)
        analytic.append((pi, int(flat - offsets[pi]), float(grads[pi].flat[flat - offsets[pi]])))

    worst = 0.0
    for pi, idx, ana in analytic:
        p = params[pi]
        orig = p.flat[idx]
        p.flat[idx] = orig + step
        loss_plus = loss_and_grads(params)[0]
        p.flat[idx] = orig - step
        loss_minus = loss_and_grads(params)[0]
        p.flat[idx] = orig
        numeric = (loss_plus - loss_minus) / (2.0 * step)
        err = abs(numeric - ana) / max(abs(numeric), abs(ana), 1e-8)
        worst = max(worst, err)
    return worst
