"""A small feed-forward network engine with hand-written backpropagation.

Just enough machinery for the discriminator: linear layers, batch norm,
leaky ReLU, inverted dropout, a sigmoid head, binary cross-entropy and Adam.
Every layer keeps the cache of its last forward pass; ``backward`` consumes
it and fills ``grads`` alongside ``params``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import BatchTooSmallError, StateError

DISCRIMINATOR_WIDTHS = (16, 64, 128, 128, 256, 128, 64, 1)
BCE_CLAMP = 1e-7


class Layer:
    params: list[np.ndarray] = []
    grads: list[np.ndarray] = []

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray, param_grads: bool = True) -> np.ndarray:
        raise NotImplementedError


class Linear(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None,
                 dtype=np.float64):
        # Kaiming-uniform on fan-in, leaky-ReLU gain
        bound = np.sqrt(6.0 / ((1 + 0.1**2) * n_in))
        if rng is None:
            weight = np.zeros((n_out, n_in), dtype)
            bias = np.zeros(n_out, dtype)
        else:
            weight = rng.uniform(-bound, bound, (n_out, n_in)).astype(dtype)
            bias = rng.uniform(-1 / np.sqrt(n_in), 1 / np.sqrt(n_in), n_out).astype(dtype)
        self.params = [weight, bias]
        self.grads = [np.zeros_like(weight), np.zeros_like(bias)]
        self._x = None

    @property
    def weight(self) -> np.ndarray:
        return self.params[0]

    @property
    def bias(self) -> np.ndarray:
        return self.params[1]

    def forward(self, x, train):
        self._x = x
        return x @ self.params[0].T + self.params[1]

    def backward(self, g, param_grads: bool = True):
        if self._x is None:
            raise StateError("Linear.backward called before forward")
        if param_grads:
            np.matmul(g.T, self._x, out=self.grads[0])
            g.sum(axis=0, out=self.grads[1])
        return g @ self.params[0]


class BatchNorm(Layer):
    def __init__(self, n: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float64):
        self.params = [np.ones(n, dtype), np.zeros(n, dtype)]
        self.grads = [np.zeros(n, dtype), np.zeros(n, dtype)]
        self.running_mean = np.zeros(n, dtype)
        self.running_var = np.ones(n, dtype)
        self.momentum = momentum
        self.eps = eps
        self._cache = None

    @property
    def gamma(self) -> np.ndarray:
        return self.params[0]

    @property
    def beta(self) -> np.ndarray:
        return self.params[1]

    def forward(self, x, train):
        if train:
            k = x.shape[0]
            if k < 2:
                raise BatchTooSmallError("batch norm needs at least 2 samples in train mode")
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean += self.momentum * (mu - self.running_mean)
            self.running_var += self.momentum * (var * k / (k - 1) - self.running_var)
        else:
            mu, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv_std
        self._cache = (xhat, inv_std, train)
        return self.params[0] * xhat + self.params[1]

    def backward(self, g, param_grads: bool = True):
        if self._cache is None:
            raise StateError("BatchNorm.backward called before forward")
        xhat, inv_std, train = self._cache
        if param_grads:
            self.grads[0][...] = (g * xhat).sum(axis=0)
            self.grads[1][...] = g.sum(axis=0)
        gx = g * self.params[0]
        if not train:
            return gx * inv_std
        return inv_std * (gx - gx.mean(axis=0) - xhat * (gx * xhat).mean(axis=0))


class LeakyReLU(Layer):
    def __init__(self, slope: float = 0.1):
        self.slope = slope
        self._mask = None

    def forward(self, x, train):
        t = x.dtype.type
        mask = (x > 0).astype(x.dtype)
        mask *= t(1.0 - self.slope)
        mask += t(self.slope)
        self._mask = mask
        return x * self._mask

    def backward(self, g, param_grads: bool = True):
        if self._mask is None:
            raise StateError("LeakyReLU.backward called before forward")
        return g * self._mask


class Dropout(Layer):
    """Inverted dropout; a no-op in eval mode.

    With ``frozen`` set, the previous mask is reused so that repeated forward
    passes over the same batch are deterministic (used by gradient checks).
    """

    def __init__(self, p: float, rng: np.random.Generator):
        self.p = p
        self.rng = rng
        self.frozen = False
        self._mask = None

    def forward(self, x, train):
        if not train or self.p == 0.0:
            self._mask = None
            return x
        if not (self.frozen and self._mask is not None and self._mask.shape == x.shape):
            keep = self.rng.random(x.shape, dtype=np.float32) >= self.p
            self._mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - self.p))
        return x * self._mask

    def backward(self, g, param_grads: bool = True):
        return g if self._mask is None else g * self._mask


class Sigmoid(Layer):
    def __init__(self):
        self._y = None

    def forward(self, x, train):
        self._y = expit(x)
        return self._y

    def backward(self, g, param_grads: bool = True):
        if self._y is None:
            raise StateError("Sigmoid.backward called before forward")
        return g * self._y * (1.0 - self._y)


class Sequential:
    """Layer stack whose parameters live in one contiguous buffer.

    ``flat_params`` / ``flat_grads`` are views shared with the layers, so an
    optimizer can update everything with a single vectorized step.
    """

    def __init__(self, layers: Sequence[Layer], dtype=np.float64):
        self.layers = list(layers)
        self.dtype = np.dtype(dtype)
        self._ran_train = False
        total = sum(p.size for layer in self.layers for p in layer.params)
        self.flat_params = np.zeros(total, self.dtype)
        self.flat_grads = np.zeros(total, self.dtype)
        i = 0
        for layer in self.layers:
            new_p, new_g = [], []
            for p in layer.params:
                view = self.flat_params[i:i + p.size].reshape(p.shape)
                view[...] = p
                new_p.append(view)
                new_g.append(self.flat_grads[i:i + p.size].reshape(p.shape))
                i += p.size
            layer.params, layer.grads = new_p, new_g

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    @property
    def grads(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads]

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        for layer in self.layers:
            x = layer.forward(x, train)
        self._ran_train = train
        return x

    __call__ = forward

    def backward(self, g: np.ndarray, param_grads: bool = True,
                 from_logits: bool = False) -> np.ndarray:
        """Backpropagate ``dL/d(output)``; returns ``dL/d(input)``.

        Parameter gradients are left in ``self.grads`` unless ``param_grads``
        is false (input gradient only, as needed by the generator). With
        ``from_logits`` the upstream gradient is taken with respect to the
        pre-sigmoid output, which avoids the vanishing product of a saturated
        sigmoid and a clamped log.
        """
        if not self._ran_train:
            raise StateError("backward requires a preceding train-mode forward pass")
        g = np.asarray(g, dtype=self.dtype)
        layers = self.layers
        if from_logits:
            if not isinstance(layers[-1], Sigmoid):
                raise StateError("from_logits needs a sigmoid output layer")
            layers = layers[:-1]
        for layer in reversed(layers):
            g = layer.backward(g, param_grads)
        return g

    def freeze_dropout(self, frozen: bool = True) -> None:
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.frozen = frozen

    def state_dict(self) -> dict:
        state = {"params": [p.tolist() for p in self.params]}
        bns = [l for l in self.layers if isinstance(l, BatchNorm)]
        state["running"] = [[bn.running_mean.tolist(), bn.running_var.tolist()] for bn in bns]
        return state

    def load_state_dict(self, state: dict) -> None:
        for p, v in zip(self.params, state["params"], strict=True):
            v = np.asarray(v, dtype=float)
            if v.shape != p.shape:
                raise ValueError(f"parameter shape mismatch: {v.shape} vs {p.shape}")
            p[...] = v
        bns = [l for l in self.layers if isinstance(l, BatchNorm)]
        for bn, (mean, var) in zip(bns, state.get("running", []), strict=True):
            bn.running_mean[...] = mean
            bn.running_var[...] = var


def save_params(net: Sequential, path) -> None:
    """Dump parameters as JSON, in layer order (weight then bias, BN gamma then beta)."""
    Path(path).write_text(json.dumps(net.state_dict()))


def load_params(net: Sequential, path) -> None:
    net.load_state_dict(json.loads(Path(path).read_text()))


def build_mlp(
    widths: Sequence[int],
    seed: int | None = 0,
    batchnorm_after: Sequence[int] = (3,),
    slope: float = 0.1,
    dropout: float = 0.5,
    dtype=np.float64,
) -> Sequential:
    """Linear stack with leaky ReLU + dropout between layers and a sigmoid head.

    ``batchnorm_after`` lists 1-based linear-layer indices followed by batch
    norm (inserted before the activation). ``seed=None`` gives all-zero
    weights, handy for structural tests.
    """
    rng = np.random.default_rng(seed)
    init_rng = None if seed is None else rng
    n_linear = len(widths) - 1
    layers: list[Layer] = []
    for i in range(n_linear):
        layers.append(Linear(widths[i], widths[i + 1], init_rng, dtype))
        if i == n_linear - 1:
            break
        if i + 1 in batchnorm_after:
            layers.append(BatchNorm(widths[i + 1], dtype=dtype))
        layers.append(LeakyReLU(slope))
        layers.append(Dropout(dropout, rng))
    layers.append(Sigmoid())
    return Sequential(layers, dtype)


def build_discriminator(seed: int | None = 0, dtype=np.float64) -> Sequential:
    """The seven-layer discriminator over the 16 entries of a homogeneous matrix."""
    return build_mlp(DISCRIMINATOR_WIDTHS, seed=seed, batchnorm_after=(3,), dtype=dtype)


def bce_loss(pred: np.ndarray, label: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient with respect to ``pred``."""
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = np.asarray(label, dtype=float)
    loss = -np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    grad = (p - y) / (p * (1.0 - p)) / p.size
    return float(loss), grad


class Adam:
    """Bias-corrected adaptive-moment optimizer updating arrays in place."""

    def __init__(self, params: Sequence[np.ndarray], lr: float = 2e-4,
                 betas: tuple[float, float] = (0.5, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("adam: parameter list length changed")
        for p, g, m in zip(params, grads, self.m):
            if p.shape != m.shape or g.shape != m.shape:
                raise ValueError(f"adam: shape mismatch {p.shape} / {g.shape} / {m.shape}")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            denom = np.sqrt(v * (1.0 / c2))
            denom += self.eps
            p -= (self.lr / c1) * m / denom
