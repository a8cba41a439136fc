"""Dense MLPs with manual backpropagation, Adam, and a WGAN gradient penalty.

Everything runs in float64 numpy. The gradient penalty differentiates the
critic's input gradient with respect to the critic parameters by reverse
mode over the combined forward+backward graph (double backprop), which is
exact for relu/tanh/linear activations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RELU = "relu"
TANH = "tanh"
LINEAR = "linear"
SOFTMAX_BLOCK = "softmax_block"

_ACTIVATIONS = (RELU, TANH, LINEAR, SOFTMAX_BLOCK)


class NeuralError(ValueError):
    pass


@dataclass
class Layer:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray    # (fan_out,)
    activation: str


@dataclass
class Mlp:
    layers: list[Layer]
    # (offset, width) segments softmaxed independently by softmax_block layers.
    segments: list[tuple[int, int]] = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out


def mlp_init(layer_dims: list[int], activations: list[str], seed: int,
             segments: list[tuple[int, int]] | None = None) -> Mlp:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    if len(layer_dims) < 2:
        raise NeuralError("need at least one layer")
    if len(activations) != len(layer_dims) - 1:
        raise NeuralError("one activation per layer required")
    if any(d <= 0 for d in layer_dims):
        raise NeuralError("layer dimensions must be positive")
    for a in activations:
        if a not in _ACTIVATIONS:
            raise NeuralError(f"unknown activation {a!r}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(layer_dims, layer_dims[1:], activations):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(Layer(rng.uniform(-a, a, size=(fan_in, fan_out)),
                            np.zeros(fan_out), act))
    return Mlp(layers, list(segments or []))


def segment_softmax(z: np.ndarray, segments) -> np.ndarray:
    out = z.copy()
    for off, width in segments:
        block = z[:, off:off + width]
        m = block.max(axis=1, keepdims=True)
        e = np.exp(block - m)
        out[:, off:off + width] = e / e.sum(axis=1, keepdims=True)
    return out


def segment_softmax_backward(p: np.ndarray, grad: np.ndarray, segments) -> np.ndarray:
    """Jacobian-vector product of segment_softmax given its output p."""
    out = grad.copy()
    for off, width in segments:
        pb = p[:, off:off + width]
        gb = grad[:, off:off + width]
        dot = (pb * gb).sum(axis=1, keepdims=True)
        out[:, off:off + width] = pb * (gb - dot)
    return out


def _activate(z: np.ndarray, act: str, segments) -> np.ndarray:
    if act == RELU:
        return np.maximum(z, 0.0)
    if act == TANH:
        return np.tanh(z)
    if act == LINEAR:
        return z
    return segment_softmax(z, segments)


def forward(mlp: Mlp, batch: np.ndarray) -> tuple[np.ndarray, list]:
    """Run the net; returns (output, cache) with per-layer (input, z, output)."""
    a = np.asarray(batch, dtype=float)
    if a.ndim != 2 or a.shape[1] != mlp.input_dim:
        raise NeuralError(f"batch width {a.shape} != input dim {mlp.input_dim}")
    cache = []
    for layer in mlp.layers:
        z = a @ layer.weight + layer.bias
        out = _activate(z, layer.activation, mlp.segments)
        cache.append((a, z, out))
        a = out
    return a, cache


def _activation_grad(layer: Layer, z: np.ndarray, out: np.ndarray,
                     grad: np.ndarray, segments) -> np.ndarray:
    if layer.activation == RELU:
        return grad * (z > 0)
    if layer.activation == TANH:
        return grad * (1.0 - out ** 2)
    if layer.activation == LINEAR:
        return grad
    return segment_softmax_backward(out, grad, segments)


def backward(mlp: Mlp, cache: list, output_grad: np.ndarray
             ) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Reverse-mode gradients.

    Returns ([(dW, db) per layer], input gradient). The input gradient is
    what the gradient penalty and the generator update consume.
    """
    grad = np.asarray(output_grad, dtype=float)
    if grad.shape != cache[-1][2].shape:
        raise NeuralError("output_grad shape mismatch")
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(mlp.layers)
    for li in range(len(mlp.layers) - 1, -1, -1):
        layer = mlp.layers[li]
        a_in, z, out = cache[li]
        dz = _activation_grad(layer, z, out, grad, mlp.segments)
        grads[li] = (a_in.T @ dz, dz.sum(axis=0))
        grad = dz @ layer.weight.T
    return grads, grad


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float = 2e-4,
                   beta1: float = 0.5, beta2: float = 0.9, eps: float = 1e-8):
        return cls(lr, beta1, beta2, eps, 0,
                   [np.zeros_like(p) for p in params],
                   [np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params: list[np.ndarray],
              grads: list[np.ndarray]) -> list[np.ndarray]:
    """One bias-corrected Adam update, applied to `params` in place."""
    if len(params) != len(state.m) or len(params) != len(grads):
        raise NeuralError("parameter/gradient count mismatch")
    state.step += 1
    t = state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise NeuralError("parameter/gradient shape mismatch")
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        mhat = m / (1 - state.beta1 ** t)
        vhat = v / (1 - state.beta2 ** t)
        p -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return params


# ---------------------------------------------------------------------------
# Gradient penalty
# ---------------------------------------------------------------------------

def input_gradient(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    """Gradient of the scalar critic output with respect to each input row."""
    out, cache = forward(mlp, x)
    if out.shape[1] != 1:
        raise NeuralError("input_gradient expects a scalar-output net")
    _, gin = backward(mlp, cache, np.ones_like(out))
    return gin


def gradient_penalty(critic: Mlp, real_batch: np.ndarray, fake_batch: np.ndarray,
                     rng: np.random.Generator
                     ) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """WGAN-GP penalty mean[(||grad_x critic(x_hat)|| - 1)^2] and its
    gradients with respect to the critic parameters.

    x_hat interpolates real and fake rows at per-row Uniform(0,1) weights.
    Softmax-block activations are not supported inside the critic.
    """
    real = np.asarray(real_batch, dtype=float)
    fake = np.asarray(fake_batch, dtype=float)
    if real.shape != fake.shape:
        raise NeuralError("real/fake batch shape mismatch")
    for layer in critic.layers:
        if layer.activation == SOFTMAX_BLOCK:
            raise NeuralError("gradient_penalty does not support softmax_block critics")
    n = real.shape[0]
    u = rng.uniform(size=(n, 1))
    xhat = u * real + (1.0 - u) * fake

    out, cache = forward(critic, xhat)
    if out.shape[1] != 1:
        raise NeuralError("critic must have scalar output")
    L = len(critic.layers)

    # Input-gradient chain: u_L = 1; s_l = u_l * act'(z_l); u_{l-1} = s_l W_l^T.
    us = [None] * (L + 1)
    ss = [None] * L
    ds = [None] * L  # act'(z_l), cached for the reverse sweep
    us[L] = np.ones_like(out)
    for li in range(L - 1, -1, -1):
        layer = critic.layers[li]
        _, z, a_out = cache[li]
        if layer.activation == RELU:
            d = (z > 0).astype(float)
        elif layer.activation == TANH:
            d = 1.0 - a_out ** 2
        else:
            d = np.ones_like(z)
        ds[li] = d
        ss[li] = us[li + 1] * d
        us[li] = ss[li] @ layer.weight.T
    g = us[0]

    r = np.sqrt((g ** 2).sum(axis=1))
    penalty = float(np.mean((r - 1.0) ** 2))
    r_safe = np.maximum(r, 1e-12)
    g_bar = (2.0 / n) * ((r - 1.0) / r_safe)[:, None] * g

    dW = [np.zeros_like(l.weight) for l in critic.layers]
    db = [np.zeros_like(l.bias) for l in critic.layers]
    zbar_extra = [None] * L

    # Reverse through the input-gradient chain; collects the explicit W
    # gradients and the second-derivative contributions to each z_l.
    ubar = g_bar
    for li in range(L):
        layer = critic.layers[li]
        dW[li] += ubar.T @ ss[li]
        sbar = ubar @ layer.weight
        _, z, a_out = cache[li]
        if layer.activation == TANH:
            ddz = -2.0 * a_out * (1.0 - a_out ** 2)  # d act'(z) / dz
            zbar_extra[li] = sbar * us[li + 1] * ddz
        else:
            zbar_extra[li] = None  # relu/linear: act'' = 0 a.e.
        ubar = sbar * ds[li]

    # Reverse through the forward chain, folding in the extra z terms.
    abar = np.zeros_like(out)
    for li in range(L - 1, -1, -1):
        layer = critic.layers[li]
        a_in, z, a_out = cache[li]
        zbar = abar * ds[li]
        if zbar_extra[li] is not None:
            zbar = zbar + zbar_extra[li]
        dW[li] += a_in.T @ zbar
        db[li] += zbar.sum(axis=0)
        abar = zbar @ layer.weight.T

    return penalty, list(zip(dW, db))
