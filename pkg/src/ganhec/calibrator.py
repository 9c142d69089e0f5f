"""Adversarial AX=XB solver.

The generator is the conjugation ``G(A) = X^-1 A X`` with ``X`` as its only
trainable parameter; a discriminator learns to tell ``G(A)`` apart from the
measured ``B``'s and its input gradient drives ``X``. Rotation updates are
right-multiplicative exponentials, so ``R_X`` never leaves SO(3).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .datagen import PoseSet
from .errors import CalibrationFailure, DegenerateRotationSpreadError, DivergenceError
from .se3 import Pose, rotation_mean_chordal, sample_uniform_rotation, so3_exp, vee
from .tinynet import BCE_CLAMP, Adam, Sequential, build_discriminator

log = logging.getLogger(__name__)

# entries of the flattened 4x4 matrix holding the rotation / position blocks
ROT_IDX = np.array([0, 1, 2, 4, 5, 6, 8, 9, 10])
POS_IDX = np.array([3, 7, 11])


@dataclass
class GanConfig:
    """Adversarial training settings.

    Each restart runs ``iterations`` steps with the generator learning rate
    decaying from ``lr_gen`` to ``lr_gen_final`` (held constant for the first
    ``lr_decay_start`` fraction). The best restart is then refined for
    ``refine_iterations`` steps at ``refine_lr_gen -> refine_lr_gen_final``,
    continuing its discriminator. Position steps are scaled by
    ``lr_pos_scale`` relative to rotation steps.
    """

    batch_size: int = 64
    iterations: int = 3000
    lr_gen: float = 3e-2
    lr_gen_final: float = 1e-3
    lr_decay_start: float = 0.0
    lr_pos_scale: float = 0.1
    lr_disc: float = 1e-3
    betas: tuple[float, float] = (0.5, 0.999)
    gen_betas: tuple[float, float] = (0.5, 0.999)
    disc_steps_per_gen: int = 1
    averaging_window: int = 600
    refine_iterations: int = 2000
    refine_lr_gen: float = 3e-3
    refine_lr_gen_final: float = 1e-4
    refine_decay_start: float = 0.3
    q_threshold: float = 0.9
    q_samples: int = 1024
    max_restarts: int = 10
    standardize_inputs: bool = True
    init_position: str = "mean"
    position_offset: bool = True
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "iterations", "disc_steps_per_gen", "averaging_window",
                     "max_restarts", "q_samples"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"GanConfig.{name} must be >= 1")
        if self.refine_iterations < 0:
            raise ValueError("GanConfig.refine_iterations must be >= 0")
        for name in ("lr_gen", "lr_gen_final", "lr_disc", "refine_lr_gen", "refine_lr_gen_final"):
            if not getattr(self, name) > 0:
                raise ValueError(f"GanConfig.{name} must be positive")
        for name in ("lr_decay_start", "refine_decay_start"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"GanConfig.{name} must lie in [0, 1]")
        if not 0.0 <= self.q_threshold <= 1.0:
            raise ValueError("GanConfig.q_threshold must lie in [0, 1]")
        if self.init_position not in ("mean", "ball"):
            raise ValueError("GanConfig.init_position must be 'mean' or 'ball'")
        if self.batch_size < 2:
            raise ValueError("GanConfig.batch_size must be >= 2 (batch norm)")
        self.betas = tuple(self.betas)
        self.gen_betas = tuple(self.gen_betas)

    @classmethod
    def from_dict(cls, d: dict) -> "GanConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown GanConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def refinement(self) -> "GanConfig":
        """Settings for the low-rate polishing run."""
        return replace(self, iterations=max(self.refine_iterations, 1), lr_gen=self.refine_lr_gen,
                       lr_gen_final=self.refine_lr_gen_final,
                       lr_decay_start=self.refine_decay_start)


@dataclass
class GeneratorParams:
    r: np.ndarray
    p: np.ndarray

    def pose(self) -> Pose:
        return Pose(self.r, self.p)


@dataclass
class NormalizationInfo:
    s: float
    mean_a: np.ndarray
    mean_b: np.ndarray
    sigma_max: float


@dataclass
class RestartRecord:
    index: int
    quality: float
    x: Pose | None
    status: str = "ok"
    wall_time: float = 0.0


@dataclass
class CalibrationResult:
    x_est: Pose
    quality: float
    restarts_used: int
    restarts: list[RestartRecord] = field(default_factory=list)
    wall_time: float = 0.0
    scale: float = 1.0

    def to_dict(self) -> dict:
        return {
            "x_est": self.x_est.matrix.ravel().tolist(),
            "quality": self.quality,
            "restarts_used": self.restarts_used,
            "scale": self.scale,
            "wall_time": self.wall_time,
            "restarts": [
                {"index": r.index, "quality": r.quality, "status": r.status,
                 "wall_time": r.wall_time,
                 "x": None if r.x is None else r.x.matrix.ravel().tolist()}
                for r in self.restarts
            ],
        }


# ------------------------------------------------------------ normalization

def compute_normalization(a_set: PoseSet, b_set: PoseSet, max_cond: float = 1e8) -> NormalizationInfo:
    """Upper bound on ``|p_X|`` from the averaged loop equation.

    Averaging ``A X = X B`` gives ``p_X = (mean R_A - I)^-1 (R_X mean p_B - mean p_A)``,
    hence ``|p_X| <= sigma_max (|mean p_B| + |mean p_A|)``.
    """
    if len(a_set) == 0 or len(b_set) == 0:
        raise ValueError("compute_normalization: empty pose set")
    mean_a = a_set.matrices().mean(axis=0)
    mean_b = b_set.matrices().mean(axis=0)
    m = mean_a[:3, :3] - np.eye(3)
    sv = np.linalg.svd(m, compute_uv=False)
    if sv[-1] <= 0 or sv[0] / sv[-1] > max_cond:
        fallback = float(max(np.linalg.norm(a_set.p, axis=1).max(),
                             np.linalg.norm(b_set.p, axis=1).max()))
        raise DegenerateRotationSpreadError(
            f"mean(R_A) - I is ill-conditioned (singular values {sv})", fallback_s=fallback)
    sigma_max = 1.0 / sv[-1]
    s = sigma_max * (np.linalg.norm(mean_b[:3, 3]) + np.linalg.norm(mean_a[:3, 3]))
    return NormalizationInfo(float(s), mean_a, mean_b, float(sigma_max))


def normalize(poses: PoseSet, s: float) -> PoseSet:
    if not s > 0:
        raise ValueError(f"normalization factor must be positive, got {s}")
    return PoseSet(poses.r, poses.p / s, poses.scale_hint)


def denormalize_x(x: Pose, s: float) -> Pose:
    if not s > 0:
        raise ValueError(f"normalization factor must be positive, got {s}")
    return Pose(x.r, x.p * s)


# --------------------------------------------------------------- generator

def generate_fake(x: GeneratorParams | Pose, a: Pose) -> Pose:
    """``X^-1 A X``."""
    return Pose(x.r.T @ a.r @ x.r, x.r.T @ (a.r @ x.p + a.p - x.p))


def fake_features(x: GeneratorParams | Pose, a_r: np.ndarray, a_p: np.ndarray):
    """Batched conjugation; returns ``(features (k,16), M (k,3,3), q (k,3))``."""
    m = x.r.T @ a_r @ x.r
    q = (a_r @ x.p + a_p - x.p) @ x.r
    return to_features(m, q), m, q


def to_features(r: np.ndarray, p: np.ndarray) -> np.ndarray:
    k = len(r)
    f = np.zeros((k, 16))
    f[:, ROT_IDX] = r.reshape(k, 9)
    f[:, POS_IDX] = p
    f[:, 15] = 1.0
    return f


def generator_gradient(x: GeneratorParams | Pose, a_r: np.ndarray, a_p: np.ndarray,
                       grad_features: np.ndarray):
    """Chain ``dL/d(features)`` of each fake sample back to ``X``.

    Returns ``(dL/dw, dL/dp)`` where ``w`` is the right perturbation
    ``R_X exp([w])`` at ``w = 0`` and ``p`` is ``p_X`` itself.
    """
    grad_features = np.asarray(grad_features, dtype=float)
    if grad_features.shape != (len(a_r), 16) or len(a_p) != len(a_r):
        raise ValueError(f"batch mismatch: {len(a_r)} A's, gradient shape {grad_features.shape}")
    m = x.r.T @ a_r @ x.r
    q = (a_r @ x.p + a_p - x.p) @ x.r
    g_r = grad_features[:, ROT_IDX].reshape(-1, 3, 3)
    g_q = grad_features[:, POS_IDX]
    # d/dw of exp(-[w]) M exp([w]) is M[dw] - [dw]M; <G, [u]> = 2 u . vee(G)
    mt = np.swapaxes(m, -1, -2)
    dw = 2.0 * vee(mt @ g_r - g_r @ mt).sum(axis=0)
    # d/dw of exp(-[w]) q is -[dw] q
    dw -= np.cross(q, g_q).sum(axis=0)
    # d/dp of R^T (R_A p - p) is R^T (R_A - I)
    rg = g_q @ x.r.T
    dp = ((np.swapaxes(a_r, -1, -2) @ rg[..., None])[..., 0] - rg).sum(axis=0)
    return dw, dp


def apply_generator_update(x: GeneratorParams, w_step: np.ndarray, p_step: np.ndarray) -> GeneratorParams:
    """``R <- R exp([w])``, ``p <- p + step``."""
    return GeneratorParams(x.r @ so3_exp(w_step), x.p + np.asarray(p_step, dtype=float))


class GroupAdam:
    """Adam whose second moment is shared within each 3-vector block.

    A per-block scalar keeps the step direction rotation-equivariant, which the
    per-coordinate variant would not be.
    """

    def __init__(self, n_blocks: int, lr: float, betas=(0.5, 0.999), eps: float = 1e-8,
                 block_scale=None):
        self.lr = lr
        self.block_scale = np.ones(n_blocks) if block_scale is None else np.asarray(block_scale, float)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = np.zeros((n_blocks, 3))
        self.v = np.zeros(n_blocks)

    def direction(self, grads: np.ndarray) -> np.ndarray:
        g = np.asarray(grads, dtype=float).reshape(self.m.shape)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * np.mean(g * g, axis=1)
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return -self.lr * self.block_scale[:, None] * mhat / (np.sqrt(vhat)[:, None] + self.eps)


# ---------------------------------------------------------------- quality

def quality_from_outputs(d_fake: np.ndarray, d_real: np.ndarray) -> float:
    """``1 - E[2(D(G(A)) - 1/2)^2] - E[2(D(B) - 1/2)^2]`` clamped to [0, 1]."""
    d_fake = np.asarray(d_fake, dtype=float)
    d_real = np.asarray(d_real, dtype=float)
    q = 1.0 - np.mean(2.0 * (d_fake - 0.5) ** 2) - np.mean(2.0 * (d_real - 0.5) ** 2)
    return float(min(1.0, max(0.0, q)))


class Standardizer:
    """Fixed per-feature affine map fed to the discriminator."""

    def __init__(self, mean: np.ndarray, scale: np.ndarray):
        self.mean = mean
        self.scale = scale

    @classmethod
    def fit(cls, features: np.ndarray) -> "Standardizer":
        mean = features.mean(axis=0)
        sd = features.std(axis=0)
        sd = np.where(sd > 1e-12, sd, 1.0)
        return cls(mean, sd)

    @classmethod
    def identity(cls) -> "Standardizer":
        return cls(np.zeros(16), np.ones(16))

    def __call__(self, f: np.ndarray) -> np.ndarray:
        return (f - self.mean) / self.scale


def quality_measure(disc: Sequential, x, a_set: PoseSet, b_set: PoseSet, sample_count: int,
                    rng: np.random.Generator, standardizer: Standardizer | None = None) -> float:
    """Monte-Carlo estimate of the quality measure with ``disc`` in eval mode."""
    if len(a_set) == 0 or len(b_set) == 0:
        raise ValueError("quality_measure: empty pose set")
    if sample_count < 1:
        raise ValueError("quality_measure: sample_count must be >= 1")
    std = standardizer or Standardizer.identity()
    ia = rng.integers(0, len(a_set), sample_count)
    ib = rng.integers(0, len(b_set), sample_count)
    fake, _, _ = fake_features(x, a_set.r[ia], a_set.p[ia])
    real = to_features(b_set.r[ib], b_set.p[ib])
    d_fake = disc.forward(std(fake), train=False)
    d_real = disc.forward(std(real), train=False)
    return quality_from_outputs(d_fake, d_real)


# ---------------------------------------------------------------- training

@dataclass
class TrainTrace:
    d_loss: list[float] = field(default_factory=list)
    g_loss: list[float] = field(default_factory=list)


def random_initial_x(rng: np.random.Generator, a_set: PoseSet | None = None,
                     b_set: PoseSet | None = None) -> GeneratorParams:
    """Haar rotation; position uniform in the unit ball, or, when both sets are
    given, the position that makes the arithmetic means satisfy the loop
    equation for that rotation."""
    r = sample_uniform_rotation(rng)
    if a_set is None or b_set is None:
        u = rng.standard_normal(3)
        u /= np.linalg.norm(u)
        return GeneratorParams(r, u * rng.random() ** (1.0 / 3.0))
    return GeneratorParams(r, mean_consistent_position(r, a_set, b_set))


def mean_consistent_position(r: np.ndarray, a_set: PoseSet, b_set: PoseSet) -> np.ndarray:
    """``(mean R_A - I)^-1 (R mean p_B - mean p_A)``; falls back to least squares."""
    return MeanAnchor(a_set, b_set)(r)


class MeanAnchor:
    """The position ``p*(R)`` at which the averaged loop equation holds.

    Training the offset ``p - p*(R)`` instead of ``p`` straightens the narrow
    valley along which rotation and position errors compensate each other.
    """

    def __init__(self, a_set: PoseSet, b_set: PoseSet, rcond: float = 1e-8):
        m = a_set.r.mean(axis=0) - np.eye(3)
        self.m_pinv = np.linalg.pinv(m, rcond=rcond)
        self.mean_pa = a_set.p.mean(axis=0)
        self.mean_pb = b_set.p.mean(axis=0)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self.m_pinv @ (r @ self.mean_pb - self.mean_pa)

    def chain_rotation(self, r: np.ndarray, dw: np.ndarray, dp: np.ndarray) -> np.ndarray:
        """``dL/dw`` holding the offset fixed; ``dp*/dw = -M^+ R [mean p_B]``."""
        return dw + np.cross(self.mean_pb, r.T @ (self.m_pinv.T @ dp))


def _bce(out: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(out, BCE_CLAMP, 1 - BCE_CLAMP)
    return float(-np.mean(labels * np.log(p) + (1 - labels) * np.log(1 - p)))


def train_once(a_set: PoseSet, b_set: PoseSet, cfg: GanConfig, rng: np.random.Generator,
               x0: GeneratorParams | None = None, disc: Sequential | None = None,
               callback=None):
    """One adversarial training run on normalized sets.

    Returns ``(x, q, trace)``: the iterate average over the last
    ``cfg.averaging_window`` steps, its quality measure and the loss trace.
    """
    k = cfg.batch_size
    if x0 is not None:
        x = GeneratorParams(np.array(x0.r), np.array(x0.p))
    elif cfg.init_position == "mean":
        x = random_initial_x(rng, a_set, b_set)
    else:
        x = random_initial_x(rng)
    if disc is None:
        disc = build_discriminator(seed=int(rng.integers(2**63)), dtype=cfg.dtype)
    anchor = MeanAnchor(a_set, b_set) if cfg.position_offset else None
    offset = None if anchor is None else x.p - anchor(x.r)
    real_all = to_features(b_set.r, b_set.p)
    std = Standardizer.fit(real_all) if cfg.standardize_inputs else Standardizer.identity()
    real_all = std(real_all)

    opt_d = Adam([disc.flat_params], lr=cfg.lr_disc, betas=cfg.betas)
    opt_g = GroupAdam(2, lr=cfg.lr_gen, betas=cfg.gen_betas, block_scale=(1.0, cfg.lr_pos_scale))
    labels = np.concatenate([np.ones((k, 1)), np.zeros((k, 1))])
    up = np.zeros((2 * k, 1))
    hold = int(cfg.lr_decay_start * cfg.iterations)
    decay = math.log(cfg.lr_gen_final / cfg.lr_gen) / max(cfg.iterations - 1 - hold, 1)
    n_a, n_b = len(a_set), len(b_set)
    window = min(cfg.averaging_window, cfg.iterations)
    keep_r, keep_p = [], []
    trace = TrainTrace()

    for it in range(cfg.iterations):
        for _ in range(cfg.disc_steps_per_gen):
            ia = rng.integers(0, n_a, k)
            ib = rng.integers(0, n_b, k)
            fake, _, _ = fake_features(x, a_set.r[ia], a_set.p[ia])
            batch = np.concatenate([real_all[ib], std(fake)])
            out = disc.forward(batch, train=True)
            d_loss = _bce(out, labels)
            # dBCE/dlogit = D - label
            disc.backward((out - labels) / out.size, from_logits=True)
            opt_d.step([disc.flat_params], [disc.flat_grads])

        ia = rng.integers(0, n_a, k)
        ib = rng.integers(0, n_b, k)
        a_r, a_p = a_set.r[ia], a_set.p[ia]
        fake, _, _ = fake_features(x, a_r, a_p)
        batch = np.concatenate([real_all[ib], std(fake)])
        out = disc.forward(batch, train=True)
        g_loss = _bce(out[k:], labels[:k])
        if not (np.isfinite(d_loss) and np.isfinite(g_loss)):
            raise DivergenceError(f"non-finite loss at iteration {it}", trace)
        # non-saturating: d(-log D)/dlogit = D - 1
        up[k:] = (out[k:] - 1.0) / k
        g_in = disc.backward(up, param_grads=False, from_logits=True)[k:].astype(float) / std.scale
        dw, dp = generator_gradient(x, a_r, a_p, g_in)
        if anchor is not None:
            dw = anchor.chain_rotation(x.r, dw, dp)
        opt_g.lr = cfg.lr_gen * math.exp(decay * max(it - hold, 0))
        step = opt_g.direction(np.concatenate([dw, dp]))
        if anchor is None:
            x = apply_generator_update(x, step[0], step[1])
        else:
            offset = offset + step[1]
            r_new = x.r @ so3_exp(step[0])
            x = GeneratorParams(r_new, anchor(r_new) + offset)

        if callback is not None:
            callback(it, x, disc)
        trace.d_loss.append(float(d_loss))
        trace.g_loss.append(float(g_loss))
        if it >= cfg.iterations - window:
            keep_r.append(x.r)
            keep_p.append(x.p)

    x_avg = GeneratorParams(rotation_mean_chordal(np.array(keep_r)), np.mean(keep_p, axis=0))
    q = quality_measure(disc, x_avg, a_set, b_set, cfg.q_samples, rng, std)
    return x_avg, q, trace


def _restart_rngs(seed: int, count: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def calibrate(a_set: PoseSet, b_set: PoseSet, cfg: GanConfig | None = None,
              scale: float | None = None) -> CalibrationResult:
    """Multi-start adversarial calibration.

    Restarts stop as soon as one reaches ``cfg.q_threshold``; the
    highest-quality restart (ties go to the earlier one) is refined at a low
    learning rate and returned de-normalized.
    ``scale`` overrides the automatic normalization factor.
    """
    cfg = cfg or GanConfig()
    t0 = time.perf_counter()
    if scale is None:
        try:
            scale = compute_normalization(a_set, b_set).s
        except DegenerateRotationSpreadError as exc:
            log.warning("%s; using fallback scale %.6g", exc, exc.fallback_s)
            scale = exc.fallback_s
    a_n, b_n = normalize(a_set, scale), normalize(b_set, scale)

    records: list[RestartRecord] = []
    states = {}
    rngs = _restart_rngs(cfg.seed, cfg.max_restarts + 1)
    for i, rng in enumerate(rngs[:-1]):
        t1 = time.perf_counter()
        disc = build_discriminator(seed=int(rng.integers(2**63)), dtype=cfg.dtype)
        try:
            x, q, _ = train_once(a_n, b_n, cfg, rng, disc=disc)
        except DivergenceError as exc:
            log.warning("restart %d diverged: %s", i, exc)
            records.append(RestartRecord(i, float("nan"), None, "diverged", time.perf_counter() - t1))
            continue
        states[i] = (x, disc)
        records.append(RestartRecord(i, q, denormalize_x(x.pose(), scale), "ok",
                                     time.perf_counter() - t1))
        log.info("restart %d: Q = %.4f", i, q)
        if q >= cfg.q_threshold:
            break

    ok = [r for r in records if r.status == "ok"]
    if not ok:
        raise CalibrationFailure("all restarts diverged", records)
    best = max(ok, key=lambda r: (r.quality, -r.index))
    x_best, q_best = best.x, best.quality
    if cfg.refine_iterations > 0:
        x0, disc = states[best.index]
        try:
            x, q, _ = train_once(a_n, b_n, cfg.refinement(), rngs[-1], x0=x0, disc=disc)
            x_best, q_best = denormalize_x(x.pose(), scale), q
        except DivergenceError as exc:
            log.warning("refinement diverged, keeping restart %d: %s", best.index, exc)
    return CalibrationResult(x_best, q_best, len(records), records,
                             time.perf_counter() - t0, scale)
