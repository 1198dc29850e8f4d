"""From-scratch classifier: depthwise conv 2D -> ReLU -> FC -> softmax.

All math is plain numpy in double precision with exact analytic
gradients; there is no autograd.  The depthwise layer convolves the
single input channel with 8 independent 10x1 filters at stride 2x2
under SAME zero padding, so a 49x40 feature map flattens to 4000
values going into the fully connected layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def conv_output_size(in_size: int, stride: int) -> int:
    """SAME padding output extent: ceil(in / stride)."""
    return -(-in_size // stride)


def same_padding(in_size: int, kernel: int, stride: int) -> tuple[int, int]:
    """Total SAME pad split floor-before / ceil-after."""
    out = conv_output_size(in_size, stride)
    total = max(0, (out - 1) * stride + kernel - in_size)
    return total // 2, total - total // 2


@dataclass(frozen=True)
class ModelParams:
    """Weights plus the architecture facts needed to apply them.

    ``dw_kernel`` has shape (kh, kw, 1, multiplier); ``fc_weights`` is
    (C, D) where D is always derived from the conv output shape.
    """

    dw_kernel: np.ndarray
    dw_bias: np.ndarray
    fc_weights: np.ndarray
    fc_bias: np.ndarray
    input_shape: tuple[int, int]
    stride: tuple[int, int] = (2, 2)
    beta: float = 1.0

    def __post_init__(self):
        kh, kw, in_ch, mult = self.dw_kernel.shape
        if in_ch != 1:
            raise ValueError(f"expected single input channel, kernel has {in_ch}")
        if self.dw_bias.shape != (mult,):
            raise ValueError(f"dw_bias shape {self.dw_bias.shape} != ({mult},)")
        d = self.flat_size
        c, d_fc = self.fc_weights.shape
        if d_fc != d:
            raise ValueError(
                f"fc_weights expect {d_fc} inputs but conv over {self.input_shape} "
                f"flattens to {d}"
            )
        if self.fc_bias.shape != (c,):
            raise ValueError(f"fc_bias shape {self.fc_bias.shape} != ({c},)")
        if c < 2:
            raise ValueError("need at least 2 classes")

    @property
    def multiplier(self) -> int:
        return self.dw_kernel.shape[3]

    @property
    def n_classes(self) -> int:
        return self.fc_weights.shape[0]

    @property
    def conv_output_shape(self) -> tuple[int, int, int]:
        t, f = self.input_shape
        return (
            conv_output_size(t, self.stride[0]),
            conv_output_size(f, self.stride[1]),
            self.multiplier,
        )

    @property
    def flat_size(self) -> int:
        oh, ow, m = self.conv_output_shape
        return oh * ow * m


@dataclass(frozen=True)
class Gradients:
    """Parameter gradients, same shapes as the corresponding params."""

    dw_kernel: np.ndarray
    dw_bias: np.ndarray
    fc_weights: np.ndarray
    fc_bias: np.ndarray


def init_params(
    input_shape: tuple[int, int],
    n_classes: int,
    seed: int,
    kernel_size: tuple[int, int] = (10, 1),
    multiplier: int = 8,
    stride: tuple[int, int] = (2, 2),
    beta: float = 1.0,
) -> ModelParams:
    """Seeded uniform(-0.05, 0.05) weights, zero biases.

    Draw order is fixed (conv kernel, then FC weights) so a seed fully
    determines the initialization.
    """
    rng = np.random.default_rng(seed)
    kh, kw = kernel_size
    t, f = input_shape
    d = conv_output_size(t, stride[0]) * conv_output_size(f, stride[1]) * multiplier
    return ModelParams(
        dw_kernel=rng.uniform(-0.05, 0.05, (kh, kw, 1, multiplier)),
        dw_bias=np.zeros(multiplier),
        fc_weights=rng.uniform(-0.05, 0.05, (n_classes, d)),
        fc_bias=np.zeros(n_classes),
        input_shape=(t, f),
        stride=stride,
        beta=beta,
    )


def _check_input(x: np.ndarray, params: ModelParams) -> np.ndarray:
    """Accept (T,F), (T,F,1), or batched (B,T,F); return (B,T,F)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3 and x.shape[-1] == 1 and x.shape[:2] == params.input_shape:
        x = x[..., 0][np.newaxis]
    elif x.ndim == 2:
        x = x[np.newaxis]
    if x.ndim != 3 or x.shape[1:] != params.input_shape:
        raise ValueError(f"input shape {np.asarray(x).shape} != expected {params.input_shape}")
    return x


def _conv_patches(x: np.ndarray, params: ModelParams) -> np.ndarray:
    """SAME-padded sliding patches: (B, OH, OW, KH, KW)."""
    kh, kw = params.dw_kernel.shape[:2]
    sh, sw = params.stride
    t, f = params.input_shape
    (pt, pb), (pl, pr) = same_padding(t, kh, sh), same_padding(f, kw, sw)
    padded = np.pad(x, ((0, 0), (pt, pb), (pl, pr)))
    oh, ow = conv_output_size(t, sh), conv_output_size(f, sw)
    rows = sh * np.arange(oh)[:, np.newaxis] + np.arange(kh)  # (OH, KH)
    cols = sw * np.arange(ow)[:, np.newaxis] + np.arange(kw)  # (OW, KW)
    return padded[:, rows[:, np.newaxis, :, np.newaxis], cols[np.newaxis, :, np.newaxis, :]]


def conv_forward_batch(x: np.ndarray, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Depthwise conv + bias for a (B,T,F) batch.

    Returns (pre_activation (B,OH,OW,M), patches) -- patches are reused
    by the backward pass.
    """
    patches = _conv_patches(x, params)
    pre = np.einsum("bhwij,ijm->bhwm", patches, params.dw_kernel[:, :, 0, :], optimize=True)
    return pre + params.dw_bias, patches


def depthwise_conv2d(x: np.ndarray, params: ModelParams) -> np.ndarray:
    """Single-input depthwise conv with bias and ReLU: (OH, OW, M)."""
    xb = _check_input(x, params)
    pre, _ = conv_forward_batch(xb, params)
    return np.maximum(pre[0], 0.0)


def fully_connected(x_flat: np.ndarray, params: ModelParams) -> np.ndarray:
    """logits_c = sum_d W[c,d] x[d] + b[c]."""
    x_flat = np.asarray(x_flat, dtype=np.float64)
    if x_flat.shape[-1] != params.flat_size:
        raise ValueError(f"flat input length {x_flat.shape[-1]} != {params.flat_size}")
    return x_flat @ params.fc_weights.T + params.fc_bias


def softmax(logits: np.ndarray, beta: float = 1.0) -> np.ndarray:
    """Numerically stable softmax over the last axis with inverse temperature."""
    z = beta * np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(x: np.ndarray, params: ModelParams) -> tuple[np.ndarray, dict]:
    """Class probabilities for one input, plus cached activations."""
    xb = _check_input(x, params)
    pre, patches = conv_forward_batch(xb, params)
    act = np.maximum(pre, 0.0)
    flat = act.reshape(xb.shape[0], -1)
    logits = fully_connected(flat, params)
    probs = softmax(logits, params.beta)
    cache = {"pre": pre, "patches": patches, "flat": flat, "logits": logits, "probs": probs}
    return probs[0], cache


def predict_proba(xs: np.ndarray, params: ModelParams) -> np.ndarray:
    """Class probabilities for a (B, T, F) batch."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 2:
        xs = xs[np.newaxis]
    if xs.ndim != 3 or xs.shape[1:] != params.input_shape:
        raise ValueError(f"input shape {xs.shape} != expected (B,) + {params.input_shape}")
    pre, _ = conv_forward_batch(xs, params)
    flat = np.maximum(pre, 0.0).reshape(xs.shape[0], -1)
    return softmax(flat @ params.fc_weights.T + params.fc_bias, params.beta)


def loss_and_gradients(
    xs: np.ndarray, labels: np.ndarray, params: ModelParams
) -> tuple[float, Gradients]:
    """Mean cross-entropy over a batch and exact parameter gradients.

    ``xs`` is (B, T, F); ``labels`` integer class indices.  Gradients go
    through softmax-CE, the FC layer, the ReLU mask, and the SAME-padded
    depthwise conv.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 2:
        xs = xs[np.newaxis]
    if xs.ndim != 3 or xs.shape[1:] != params.input_shape:
        raise ValueError(f"input shape {xs.shape} != expected (B,) + {params.input_shape}")
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if np.any(labels < 0) or np.any(labels >= params.n_classes):
        raise ValueError(f"labels outside [0, {params.n_classes})")
    b = xs.shape[0]
    if labels.shape != (b,):
        raise ValueError(f"{labels.shape[0]} labels for {b} inputs")

    pre, patches = conv_forward_batch(xs, params)
    act = np.maximum(pre, 0.0)
    flat = act.reshape(b, -1)
    logits = flat @ params.fc_weights.T + params.fc_bias

    z = params.beta * logits
    z_shift = z - z.max(axis=1, keepdims=True)
    log_probs = z_shift - np.log(np.exp(z_shift).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(b), labels].mean())

    # softmax-CE: dL/dlogits = beta * (p - onehot) / B
    dlogits = np.exp(log_probs)
    dlogits[np.arange(b), labels] -= 1.0
    dlogits *= params.beta / b

    d_fc_w = dlogits.T @ flat
    d_fc_b = dlogits.sum(axis=0)
    dflat = dlogits @ params.fc_weights
    dpre = dflat.reshape(pre.shape) * (pre > 0.0)
    d_kernel = np.einsum("bhwij,bhwm->ijm", patches, dpre, optimize=True)[:, :, np.newaxis, :]
    d_bias = dpre.sum(axis=(0, 1, 2))

    return loss, Gradients(dw_kernel=d_kernel, dw_bias=d_bias, fc_weights=d_fc_w, fc_bias=d_fc_b)


def sgd_step(params: ModelParams, grads: Gradients, lr: float) -> ModelParams:
    """One plain gradient-descent update; returns fresh params."""
    return ModelParams(
        dw_kernel=params.dw_kernel - lr * grads.dw_kernel,
        dw_bias=params.dw_bias - lr * grads.dw_bias,
        fc_weights=params.fc_weights - lr * grads.fc_weights,
        fc_bias=params.fc_bias - lr * grads.fc_bias,
        input_shape=params.input_shape,
        stride=params.stride,
        beta=params.beta,
    )
