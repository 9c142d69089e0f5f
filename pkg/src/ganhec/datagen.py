"""Synthetic AX=XB datasets, pose-set files and stream utilities."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PoseParseError
from .se3 import Pose, sample_uniform_rotation, sample_unit_vector, so3_exp


@dataclass(eq=False)
class PoseSet:
    """Ordered collection of poses stored as stacked arrays.

    ``r`` has shape ``(N, 3, 3)`` and ``p`` shape ``(N, 3)``. ``scale_hint``
    records the position scale the set was generated with, if known.
    """

    r: np.ndarray
    p: np.ndarray
    scale_hint: float | None = None

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float).reshape(-1, 3, 3)
        self.p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        if len(self.r) != len(self.p):
            raise ValueError(f"PoseSet: {len(self.r)} rotations but {len(self.p)} positions")

    def __len__(self) -> int:
        return len(self.r)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return Pose(self.r[i], self.p[i])
        return PoseSet(self.r[i], self.p[i], self.scale_hint)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_poses(cls, poses, scale_hint=None) -> "PoseSet":
        poses = list(poses)
        if not poses:
            return cls(np.zeros((0, 3, 3)), np.zeros((0, 3)), scale_hint)
        return cls(np.stack([q.r for q in poses]), np.stack([q.p for q in poses]), scale_hint)

    def matrices(self) -> np.ndarray:
        """Homogeneous matrices, shape ``(N, 4, 4)``."""
        m = np.zeros((len(self), 4, 4))
        m[:, :3, :3] = self.r
        m[:, :3, 3] = self.p
        m[:, 3, 3] = 1.0
        return m

    @classmethod
    def from_matrices(cls, m: np.ndarray, scale_hint=None) -> "PoseSet":
        m = np.asarray(m, dtype=float)
        return cls(m[:, :3, :3], m[:, :3, 3], scale_hint)

    def conjugate(self, x: Pose) -> "PoseSet":
        """Elementwise ``x @ T @ x^-1``."""
        r = x.r @ self.r @ x.r.T
        p = (x.r @ self.p[..., None])[..., 0] + x.p - (r @ x.p[:, None])[..., 0]
        return PoseSet(r, p, self.scale_hint)

    def left(self, c: Pose) -> "PoseSet":
        """Elementwise ``c @ T``."""
        return PoseSet(c.r @ self.r, (c.r @ self.p[..., None])[..., 0] + c.p, self.scale_hint)

    def right(self, c: Pose) -> "PoseSet":
        """Elementwise ``T @ c``."""
        return PoseSet(self.r @ c.r, (self.r @ c.p) + self.p, self.scale_hint)


def compose_sets(a: PoseSet, b: PoseSet) -> PoseSet:
    r = a.r @ b.r
    p = (a.r @ b.p[..., None])[..., 0] + a.p
    return PoseSet(r, p, a.scale_hint)


@dataclass
class SimConfig:
    """Synthetic data settings. ``sigma_w``/``sigma_p`` are diagonal standard
    deviations; ``None`` draws each entry from U[0, 1] per dataset."""

    d: float = 125.31
    n: int = 6000
    m: int = 4000
    sigma_w: tuple[float, float, float] | None = None
    sigma_p: tuple[float, float, float] | None = None
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("SimConfig: n and m must be >= 1")
        if self.noise_std < 0:
            raise ValueError("SimConfig: noise_std must be >= 0")
        for name in ("sigma_w", "sigma_p"):
            s = getattr(self, name)
            if s is not None and not all(0.0 <= v <= 1.0 for v in s):
                raise ValueError(f"SimConfig: {name} entries must lie in [0, 1]")


@dataclass(eq=False)
class SimPairs:
    """Pre-split paired data; kept so tests can check loop closure."""

    a: PoseSet
    b: PoseSet
    x_true: Pose
    b0: Pose
    sigma_w: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sigma_p: np.ndarray = field(default_factory=lambda: np.zeros(3))


def sample_ground_truth(d: float, rng: np.random.Generator) -> Pose:
    """Random hand-eye transform: Haar rotation, position of norm ``d``."""
    r = sample_uniform_rotation(rng)
    return Pose(r, d * sample_unit_vector(rng))


def generate_pairs(cfg: SimConfig, rng: np.random.Generator | None = None) -> SimPairs:
    """Draw ``n + m`` noiseless pairs with ``A_k = X B_k X^-1``."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    d = cfg.d
    x_true = sample_ground_truth(d, rng)
    b0 = Pose(sample_uniform_rotation(rng), 10.0 * d * rng.standard_normal(3))
    sigma_w = rng.uniform(0, 1, 3) if cfg.sigma_w is None else np.asarray(cfg.sigma_w, float)
    sigma_p = rng.uniform(0, 1, 3) if cfg.sigma_p is None else np.asarray(cfg.sigma_p, float)
    k = cfg.n + cfg.m
    w = rng.standard_normal((k, 3)) * sigma_w
    p = rng.standard_normal((k, 3)) * sigma_p
    local = PoseSet(so3_exp(w), d * p)
    b = local.left(b0)
    b.scale_hint = d
    a = b.conjugate(x_true)
    return SimPairs(a, b, x_true, b0, sigma_w, sigma_p)


def add_noise(poses: PoseSet, noise_std: float, rng: np.random.Generator,
              d: float | None = None) -> PoseSet:
    """Right-translated noise ``T @ [exp(e_w), e_p]``.

    ``e_w ~ N(0, noise_std^2 I)`` radians and ``e_p ~ N(0, (noise_std d)^2 I)``;
    ``d`` defaults to the set's ``scale_hint`` (or 1).
    """
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    if noise_std == 0:
        return poses
    if d is None:
        d = poses.scale_hint if poses.scale_hint is not None else 1.0
    k = len(poses)
    eps = PoseSet(so3_exp(noise_std * rng.standard_normal((k, 3))),
                  noise_std * d * rng.standard_normal((k, 3)))
    out = compose_sets(poses, eps)
    out.scale_hint = poses.scale_hint
    return out


def generate_dataset(cfg: SimConfig, rng: np.random.Generator | None = None):
    """Returns ``(A_set, B_set, X_true)`` with no element-wise correspondence.

    The first ``n`` generated pairs contribute only their A's, the last ``m``
    only their B's.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    pairs = generate_pairs(cfg, rng)
    a_set = pairs.a[: cfg.n]
    b_set = pairs.b[cfg.n:]
    a_set.scale_hint = b_set.scale_hint = cfg.d
    if cfg.noise_std > 0:
        a_set = add_noise(a_set, cfg.noise_std, rng, cfg.d)
        b_set = add_noise(b_set, cfg.noise_std, rng, cfg.d)
    return a_set, b_set, pairs.x_true


def merge_pairs(stream: PoseSet) -> PoseSet:
    """All relative transforms ``T_i^-1 T_j`` for ``i < j``."""
    if len(stream) < 2:
        raise ValueError("merge_pairs needs at least 2 poses")
    i, j = np.triu_indices(len(stream), k=1)
    ri_t = np.swapaxes(stream.r[i], -1, -2)
    r = ri_t @ stream.r[j]
    p = (ri_t @ (stream.p[j] - stream.p[i])[..., None])[..., 0]
    return PoseSet(r, p, stream.scale_hint)


def simulate_time_offset(stream_a: PoseSet, stream_b: PoseSet, fraction: float):
    """Drop the first ``fraction`` of ``stream_a`` and the last of ``stream_b``."""
    if not 0.0 <= fraction < 0.5:
        raise ValueError(f"fraction must lie in [0, 0.5), got {fraction}")
    ka = int(np.floor(fraction * len(stream_a)))
    kb = int(np.floor(fraction * len(stream_b)))
    return stream_a[ka:], stream_b[: len(stream_b) - kb]


@dataclass
class StreamConfig:
    """Continuous robot motion sampled independently by robot and camera clocks."""

    d: float = 125.31
    n_robot: int = 60
    n_camera: int = 50
    duration: float = 180.0
    rot_amplitude: float = 0.6
    pos_amplitude: float = 1.0
    n_harmonics: int = 3
    seed: int = 0


def generate_streams(cfg: StreamConfig, rng: np.random.Generator | None = None):
    """Robot poses ``E(t)`` and camera poses ``G E(t) X`` on unrelated time grids.

    Returns ``(robot_stream, camera_stream, X_true)``. Merging each stream with
    :func:`merge_pairs` yields sets with ``B = X^-1 A X`` in distribution.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    d = cfg.d
    x_true = sample_ground_truth(d, rng)
    e0 = Pose(sample_uniform_rotation(rng), 10.0 * d * rng.standard_normal(3))
    g = Pose(sample_uniform_rotation(rng), 10.0 * d * rng.standard_normal(3))
    h = cfg.n_harmonics
    freq = rng.uniform(0.5, 3.0, (h, 6)) * 2 * np.pi / cfg.duration
    phase = rng.uniform(0, 2 * np.pi, (h, 6))
    amp = rng.uniform(0.3, 1.0, (h, 6)) / np.sqrt(h)
    amp[:, :3] *= cfg.rot_amplitude
    amp[:, 3:] *= cfg.pos_amplitude * d

    def trajectory(t):
        s = np.sin(t[:, None, None] * freq + phase) * amp
        s = s.sum(axis=1)
        local = PoseSet(so3_exp(s[:, :3]), s[:, 3:])
        return local.left(e0)

    t_robot = np.sort(rng.uniform(0, cfg.duration, cfg.n_robot))
    t_cam = np.sort(rng.uniform(0, cfg.duration, cfg.n_camera))
    robot = trajectory(t_robot)
    cam = trajectory(t_cam).left(g).right(x_true)
    robot.scale_hint = cam.scale_hint = d
    return robot, cam, x_true


# ---------------------------------------------------------------- file I/O

def save_poseset(poses: PoseSet, path) -> None:
    """One pose per line: 16 floats, row-major homogeneous matrix."""
    path = Path(path)
    lines = []
    if poses.scale_hint is not None:
        lines.append(f"# scale_hint {poses.scale_hint!r}")
    for m in poses.matrices():
        lines.append(" ".join(repr(float(v)) for v in m.ravel()))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _check_rotation(r: np.ndarray, line: int | None) -> None:
    resid = np.linalg.norm(r.T @ r - np.eye(3))
    det = np.linalg.det(r)
    if resid > 1e-6 or abs(det - 1.0) > 1e-6:
        raise PoseParseError(
            f"rotation block is not in SO(3) (|R^T R - I| = {resid:.2e}, det = {det:.6f}); "
            "re-orthogonalize it (e.g. SVD projection) before loading",
            line,
        )


def load_poseset(path) -> PoseSet:
    """Read a pose file (16-float rows) or a JSON list of ``{"R", "p"}``."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json" or text.lstrip().startswith("["):
        return _load_json(text)
    scale_hint = None
    mats = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "scale_hint":
                scale_hint = float(parts[1])
            continue
        try:
            vals = [float(v) for v in line.split()]
        except ValueError as exc:
            raise PoseParseError(f"non-numeric entry ({exc})", lineno) from None
        if len(vals) != 16:
            raise PoseParseError(f"expected 16 numbers, found {len(vals)}", lineno)
        m = np.array(vals).reshape(4, 4)
        if np.max(np.abs(m[3] - [0, 0, 0, 1])) > 1e-12:
            raise PoseParseError("last row must be 0 0 0 1", lineno)
        if not np.all(np.isfinite(m)):
            raise PoseParseError("non-finite entry", lineno)
        _check_rotation(m[:3, :3], lineno)
        mats.append(m)
    if not mats:
        return PoseSet(np.zeros((0, 3, 3)), np.zeros((0, 3)), scale_hint)
    return PoseSet.from_matrices(np.stack(mats), scale_hint)


def _load_json(text: str) -> PoseSet:
    items = json.loads(text)
    rs, ps = [], []
    for k, item in enumerate(items):
        r = np.asarray(item["R"], dtype=float)
        p = np.asarray(item["p"], dtype=float)
        if r.shape != (3, 3) or p.shape != (3,):
            raise PoseParseError(f"entry {k}: R must be 3x3 and p length 3")
        try:
            _check_rotation(r, None)
        except PoseParseError as exc:
            raise PoseParseError(f"entry {k}: {exc}") from None
        rs.append(r)
        ps.append(p)
    return PoseSet(np.array(rs).reshape(-1, 3, 3), np.array(ps).reshape(-1, 3))


def save_poseset_json(poses: PoseSet, path) -> None:
    items = [{"R": r.tolist(), "p": p.tolist()} for r, p in zip(poses.r, poses.p)]
    Path(path).write_text(json.dumps(items), encoding="utf-8")


def save_pose(pose: Pose, path) -> None:
    save_poseset(PoseSet(pose.r[None], pose.p[None]), path)


def load_pose(path) -> Pose:
    s = load_poseset(path)
    if len(s) != 1:
        raise PoseParseError(f"{path}: expected exactly one pose, found {len(s)}")
    return s[0]
