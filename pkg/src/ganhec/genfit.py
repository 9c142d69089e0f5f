"""Correspondence-free parameter fitting for decoupled models.

A model is decoupled when its implicit relation between samples ``a``, ``b``
and parameters ``x`` can be written ``g_b(b) = g_a(a, x)``. The same
adversarial scheme used for hand-eye calibration then applies: ``g_a(a, x)``
plays the generator, ``g_b(b)`` the real data, and ``x`` is learned from the
discriminator's input gradient. No pairing between the ``a`` and ``b``
samples is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .calibrator import GanConfig, quality_from_outputs
from .errors import DivergenceError
from .tinynet import BCE_CLAMP, Adam, Sequential, build_mlp

POLY_DISC_WIDTHS = (1, 64, 128, 64, 1)


@dataclass(frozen=True)
class DecoupledModel:
    """``g_a(a, x) -> (N, feature_dim)``, ``g_b(b) -> (N, feature_dim)`` and the
    vector-Jacobian product ``x_gradient(a, x, upstream) -> (x_dim,)``."""

    g_a: Callable[[np.ndarray, np.ndarray], np.ndarray]
    g_b: Callable[[np.ndarray], np.ndarray]
    x_dim: int
    feature_dim: int
    x_gradient: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def polynomial_model() -> DecoupledModel:
    """``b = c0 + c1 a + c2 a^2`` with ``x = (c0, c1, c2)``."""

    def basis(a):
        a = np.asarray(a, dtype=float)
        return np.stack([np.ones_like(a), a, a * a], axis=-1)

    def g_a(a, x):
        return (basis(a) @ np.asarray(x, dtype=float))[..., None]

    def g_b(b):
        return np.asarray(b, dtype=float)[..., None]

    def x_gradient(a, x, upstream):
        return basis(a).T @ np.asarray(upstream, dtype=float).reshape(-1)

    return DecoupledModel(g_a, g_b, 3, 1, x_gradient)


@dataclass(eq=False)
class ScalarSamples:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("scalar samples must be finite")

    def __len__(self) -> int:
        return len(self.values)


def generate_poly_data(n_a: int = 400, n_b: int = 600, x_true=(3.0, -2.0, 1.0),
                       a_lo: float = -4.0, a_hi: float = 3.0,
                       rng: np.random.Generator | None = None):
    """Uniform ``a`` on ``[a_lo, a_hi]``; the first ``n_a`` draws are kept as
    the ``a`` set, the rest are pushed through the polynomial to make ``b``."""
    if not a_lo < a_hi:
        raise ValueError(f"need a_lo < a_hi, got [{a_lo}, {a_hi}]")
    if n_a < 1 or n_b < 1:
        raise ValueError("sample counts must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    a = rng.uniform(a_lo, a_hi, n_a + n_b)
    b = polynomial_model().g_a(a[n_a:], x_true)[:, 0]
    return ScalarSamples(a[:n_a]), ScalarSamples(b)


def polyfit_config(**overrides) -> GanConfig:
    """Training settings that work for the scalar polynomial example."""
    base = dict(batch_size=64, iterations=6000, lr_gen=1e-2, lr_gen_final=1e-4,
                lr_decay_start=0.2, lr_disc=1e-3, averaging_window=1500,
                gen_betas=(0.9, 0.999), standardize_inputs=False)
    base.update(overrides)
    return GanConfig(**base)


def fit(model: DecoupledModel, a_set: ScalarSamples | np.ndarray, b_set: ScalarSamples | np.ndarray,
        cfg: GanConfig | None = None, scale: float | None = None,
        x0: np.ndarray | None = None, disc: Sequential | None = None):
    """Adversarial estimate of ``x``; returns ``(x_est, q)``.

    Features are divided by ``scale`` (default: the largest ``|g_b(b)|``) and
    ``x`` is trained in the same units, starting from zero. The returned
    ``x_est`` is the trailing-window average, de-normalized.
    """
    cfg = cfg or polyfit_config()
    a = np.asarray(getattr(a_set, "values", a_set), dtype=float)
    b = np.asarray(getattr(b_set, "values", b_set), dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("fit: empty sample set")
    real_all = model.g_b(b)
    if scale is None:
        scale = float(np.max(np.abs(real_all)))
        if scale == 0.0:
            scale = 1.0
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    real_all = real_all / scale

    rng = np.random.default_rng(cfg.seed)
    if disc is None:
        widths = (model.feature_dim,) + POLY_DISC_WIDTHS[1:]
        disc = build_mlp(widths, seed=int(rng.integers(2**63)), batchnorm_after=(3,),
                         dtype=cfg.dtype)
    u = np.zeros(model.x_dim) if x0 is None else np.asarray(x0, dtype=float) / scale

    k = cfg.batch_size
    opt_d = Adam([disc.flat_params], lr=cfg.lr_disc, betas=cfg.betas)
    opt_g = Adam([u], lr=cfg.lr_gen, betas=cfg.gen_betas)
    labels = np.concatenate([np.ones((k, 1)), np.zeros((k, 1))])
    up = np.zeros((2 * k, 1))
    hold = int(cfg.lr_decay_start * cfg.iterations)
    decay = math.log(cfg.lr_gen_final / cfg.lr_gen) / max(cfg.iterations - 1 - hold, 1)
    window = min(cfg.averaging_window, cfg.iterations)
    kept, trace = [], []

    def fake(idx):
        return model.g_a(a[idx], u * scale) / scale

    for it in range(cfg.iterations):
        for _ in range(cfg.disc_steps_per_gen):
            ia = rng.integers(0, len(a), k)
            ib = rng.integers(0, len(b), k)
            out = disc.forward(np.concatenate([real_all[ib], fake(ia)]), train=True)
            disc.backward((out - labels) / out.size, from_logits=True)
            opt_d.step([disc.flat_params], [disc.flat_grads])

        ia = rng.integers(0, len(a), k)
        ib = rng.integers(0, len(b), k)
        out = disc.forward(np.concatenate([real_all[ib], fake(ia)]), train=True)
        g_loss = float(-np.mean(np.log(np.clip(out[k:], BCE_CLAMP, 1.0))))
        trace.append(g_loss)
        if not np.isfinite(g_loss):
            raise DivergenceError(f"non-finite loss at iteration {it}", trace)
        up[k:] = (out[k:] - 1.0) / k
        g_in = disc.backward(up, param_grads=False, from_logits=True)[k:].astype(float)
        # d/du of g_a(a, u s) / s is the x-gradient itself
        grad_u = model.x_gradient(a[ia], u * scale, g_in)
        if not np.all(np.isfinite(grad_u)):
            raise DivergenceError(f"non-finite parameter gradient at iteration {it}", trace)
        opt_g.lr = cfg.lr_gen * math.exp(decay * max(it - hold, 0))
        opt_g.step([u], [grad_u])
        if it >= cfg.iterations - window:
            kept.append(u.copy())

    u_avg = np.mean(kept, axis=0)
    ia = rng.integers(0, len(a), cfg.q_samples)
    ib = rng.integers(0, len(b), cfg.q_samples)
    d_fake = disc.forward(model.g_a(a[ia], u_avg * scale) / scale, train=False)
    d_real = disc.forward(real_all[ib], train=False)
    return u_avg * scale, quality_from_outputs(d_fake, d_real)


def load_samples(path) -> ScalarSamples:
    """One float per line; blank lines and ``#`` comments are skipped."""
    values = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: not a number: {line!r}") from None
    return ScalarSamples(values)


def save_samples(samples: ScalarSamples | np.ndarray, path, header: str | None = None) -> None:
    values = np.asarray(getattr(samples, "values", samples), dtype=float)
    lines = [f"# {header}"] if header else []
    lines += [repr(float(v)) for v in values]
    Path(path).write_text("\n".join(lines) + "\n")
