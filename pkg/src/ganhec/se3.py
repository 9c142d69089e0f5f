"""Rigid-body math on SO(3) and SE(3).

Rotations are plain ``(3, 3)`` arrays (or stacks ``(..., 3, 3)``); a pose is
a :class:`Pose` holding a rotation matrix and a position vector. Twists use
the ordering ``(w, v)``: rotation part first, translation part second.

All angles are radians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMeanError, DomainError

# below this angle the Rodrigues coefficients switch to Taylor series
SMALL_ANGLE = 1e-6
# principal-branch margin for the logarithm
PI_MARGIN = 1e-6


def skew(w: np.ndarray) -> np.ndarray:
    """Hat operator, broadcasting over leading axes."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`skew` (reads the antisymmetric part only)."""
    m = np.asarray(m, dtype=float)
    return 0.5 * np.stack(
        [m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]],
        axis=-1,
    )


def _rodrigues_coeffs(theta: np.ndarray):
    """Return ``sin(t)/t`` and ``(1-cos(t))/t^2`` with small-angle care."""
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(t) / t)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(t)) / t**2)
    return a, b


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Exponential map so(3) -> SO(3) (Rodrigues), batched over leading axes."""
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != 3:
        raise ValueError(f"expected trailing dimension 3, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("so3_exp: non-finite rotation vector")
    theta = np.linalg.norm(w, axis=-1)
    a, b = _rodrigues_coeffs(theta)
    k = skew(w)
    k2 = k @ k
    return np.eye(3) + a[..., None, None] * k + b[..., None, None] * k2


def rotation_angle(r: np.ndarray) -> np.ndarray:
    """Geodesic angle of a rotation (or stack), in ``[0, pi]``."""
    r = np.asarray(r, dtype=float)
    s = np.linalg.norm(vee(r), axis=-1)
    c = 0.5 * (np.trace(r, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(s, c)


def so3_log(r: np.ndarray) -> np.ndarray:
    """Logarithm SO(3) -> so(3) on the principal branch, batched.

    Raises :class:`DomainError` when any angle is within ``PI_MARGIN`` of pi,
    where the axis is ill-determined.
    """
    r = np.asarray(r, dtype=float)
    v = vee(r)
    s = np.linalg.norm(v, axis=-1)
    c = 0.5 * (np.trace(r, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)
    if np.any(theta >= np.pi - PI_MARGIN):
        raise DomainError("so3_log: rotation angle too close to pi for the principal branch")
    small = theta < SMALL_ANGLE
    factor = np.where(small, 1.0 + theta**2 / 6.0, theta / np.where(small, 1.0, s))
    return v * factor[..., None]


def is_rotation(r: np.ndarray, tol: float = 1e-9) -> bool:
    r = np.asarray(r, dtype=float)
    if r.shape[-2:] != (3, 3):
        return False
    resid = np.linalg.norm(np.swapaxes(r, -1, -2) @ r - np.eye(3), axis=(-2, -1))
    det = np.linalg.det(r)
    return bool(np.all(resid < tol) and np.all(np.abs(det - 1.0) < tol))


@dataclass(frozen=True, eq=False)
class Pose:
    """Element of SE(3): ``x -> r @ x + p``."""

    r: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        r = np.array(self.r, dtype=float).reshape(3, 3)
        p = np.array(self.p, dtype=float).reshape(3)
        r.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "p", p)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.r
        m[:3, 3] = self.p
        return m

    def __matmul__(self, other: "Pose") -> "Pose":
        return pose_compose(self, other)

    def inv(self) -> "Pose":
        return pose_inverse(self)

    def __repr__(self) -> str:
        return f"Pose(r={self.r.tolist()}, p={self.p.tolist()})"


def pose_compose(a: Pose, b: Pose) -> Pose:
    return Pose(a.r @ b.r, a.r @ b.p + a.p)


def pose_inverse(a: Pose) -> Pose:
    return Pose(a.r.T, -a.r.T @ a.p)


def _v_matrix(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    k = skew(w)
    if theta < SMALL_ANGLE:
        b = 0.5 - theta**2 / 24.0
        c = 1.0 / 6.0 - theta**2 / 120.0
    else:
        b = (1.0 - np.cos(theta)) / theta**2
        c = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + b * k + c * (k @ k)


def se3_exp(w: np.ndarray, v: np.ndarray) -> Pose:
    """Group exponential of the twist ``(w, v)``."""
    w = np.asarray(w, dtype=float)
    return Pose(so3_exp(w), _v_matrix(w) @ np.asarray(v, dtype=float))


def se3_log(pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`se3_exp`; returns ``(w, v)``."""
    w = so3_log(pose.r)
    v = np.linalg.solve(_v_matrix(w), pose.p)
    return w, v


def sample_uniform_rotation(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Haar-uniform rotation(s) via a normalized 4-D Gaussian quaternion."""
    shape = (1 if size is None else size, 4)
    q = rng.standard_normal(shape)
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    r = np.empty((shape[0], 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - z * w)
    r[:, 0, 2] = 2 * (x * z + y * w)
    r[:, 1, 0] = 2 * (x * y + z * w)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - x * w)
    r[:, 2, 0] = 2 * (x * z - y * w)
    r[:, 2, 1] = 2 * (y * z + x * w)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r[0] if size is None else r


def sample_unit_vector(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniform point(s) on the 2-sphere."""
    v = rng.standard_normal((1 if size is None else size, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v[0] if size is None else v


def rotation_error(est: np.ndarray, truth: np.ndarray) -> float:
    """Angular displacement between two rotations, radians."""
    return float(rotation_angle(np.asarray(truth).T @ np.asarray(est)))


def translation_error(est: Pose, truth: Pose) -> float:
    return float(np.linalg.norm(est.p - truth.p))


def project_to_so3(m: np.ndarray) -> np.ndarray:
    """Closest rotation to ``m`` in Frobenius norm."""
    u, sv, vt = np.linalg.svd(m)
    if sv[-1] < 1e-12 * max(sv[0], 1.0):
        raise DegenerateMeanError(f"matrix is rank-deficient (singular values {sv})")
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def rotation_mean_chordal(rs) -> np.ndarray:
    """Chordal mean: arithmetic mean of the matrices projected onto SO(3)."""
    rs = np.asarray(rs, dtype=float)
    if rs.ndim == 2:
        rs = rs[None]
    if rs.shape[0] == 0:
        raise ValueError("rotation_mean_chordal: empty input")
    return project_to_so3(rs.mean(axis=0))
