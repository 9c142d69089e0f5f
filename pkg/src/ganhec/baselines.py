"""Reference solvers: least squares under correspondence and moment matching.

``solve_with_correspondence`` is the classical paired solver (log-vector
Procrustes for the rotation, stacked linear least squares for the position).
It is exact on noiseless data and serves as the ground-truth procedure.

``solve_moment_matching`` needs no correspondence. It matches the group mean
and the covariance of the log-residuals of both sets, in the manner of the
batch methods from the literature:

* means:        ``M_A X = X M_B``
* covariances:  ``Sigma_B = Ad(X^-1) Sigma_A Ad(X^-1)^T``

The rotation comes from aligning the eigenframes of the rotational covariance
blocks (four sign candidates), each polished by a weighted least-squares fit
of the mean and covariance relations; the lowest-cost candidate wins. The
position comes from the mean relation stacked with the rotation/translation
cross-covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .datagen import PoseSet
from .errors import ConvergenceError, DegenerateDistributionError, DegenerateMotionError
from .se3 import SMALL_ANGLE, Pose, project_to_so3, skew, so3_exp, so3_log


@dataclass(eq=False)
class PairedDataset:
    a: PoseSet
    b: PoseSet

    def __post_init__(self):
        if len(self.a) != len(self.b):
            raise ValueError(f"paired sets differ in length: {len(self.a)} vs {len(self.b)}")
        if len(self.a) == 0:
            raise ValueError("paired dataset is empty")

    def __len__(self) -> int:
        return len(self.a)


def solve_with_correspondence(data: PairedDataset, rank_tol: float = 1e-6) -> Pose:
    """Least-squares ``X`` from paired motions ``A_i X = X B_i``."""
    alpha = so3_log(data.a.r)
    beta = so3_log(data.b.r)
    sv = np.linalg.svd(beta, compute_uv=False)
    if len(data) < 2 or sv.size < 2 or sv[1] <= rank_tol * max(sv[0], 1e-300):
        raise DegenerateMotionError(
            "rotation axes of the motions do not span two independent directions")
    # log(R_A) = R_X log(R_B): orthogonal Procrustes
    r_x = project_to_so3(alpha.T @ beta)
    # (R_A - I) p_X = R_X p_B - p_A
    lhs = (data.a.r - np.eye(3)).reshape(-1, 3)
    rhs = (data.b.p @ r_x.T - data.a.p).reshape(-1)
    p_x, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    return Pose(r_x, p_x)


# ------------------------------------------------------------ log-domain means

def _v_inverse(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w, axis=-1)
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    half = 0.5 * t
    # (1 - (t/2) cot(t/2)) / t^2, series 1/12 + t^2/720
    c = np.where(small, 1.0 / 12.0 + theta**2 / 720.0, (1.0 - half / np.tan(half)) / t**2)
    k = skew(w)
    return np.eye(3) - 0.5 * k + c[..., None, None] * (k @ k)


def _v_matrix(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w, axis=-1)
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(t)) / t**2)
    c = np.where(small, 1.0 / 6.0 - theta**2 / 120.0, (t - np.sin(t)) / t**3)
    k = skew(w)
    return np.eye(3) + b[..., None, None] * k + c[..., None, None] * (k @ k)


def log_residuals(m: Pose, poses: PoseSet) -> np.ndarray:
    """Twists ``log(M^-1 T_i)`` as rows ``(w, v)``, shape ``(N, 6)``."""
    r = m.r.T @ poses.r
    p = (poses.p - m.p) @ m.r
    w = so3_log(r)
    v = (_v_inverse(w) @ p[..., None])[..., 0]
    return np.concatenate([w, v], axis=1)


def _exp_twist(xi: np.ndarray) -> Pose:
    w, v = xi[:3], xi[3:]
    return Pose(so3_exp(w), _v_matrix(w) @ v)


def iterative_log_mean(poses: PoseSet, tol: float = 1e-12, max_iter: int = 100) -> Pose:
    """Fixed point of ``M <- M exp(mean_i log(M^-1 T_i))``."""
    if len(poses) == 0:
        raise ValueError("iterative_log_mean: empty set")
    m = poses[0]
    for _ in range(max_iter):
        step = log_residuals(m, poses).mean(axis=0)
        m = m @ _exp_twist(step)
        if np.linalg.norm(step) < tol:
            return m
    raise ConvergenceError(f"log mean did not converge in {max_iter} iterations")


# ------------------------------------------------------------ moment matching

def _moments(poses: PoseSet):
    mean = iterative_log_mean(poses, tol=1e-10, max_iter=200)
    xi = log_residuals(mean, poses)
    return mean, xi.T @ xi / len(xi)


def solve_moment_matching(a_set: PoseSet, b_set: PoseSet) -> Pose:
    """Correspondence-free estimate from means and covariances."""
    if len(a_set) == 0 or len(b_set) == 0:
        raise ValueError("solve_moment_matching: empty pose set")
    m_a, cov_a = _moments(a_set)
    m_b, cov_b = _moments(b_set)
    s_a, s_b = cov_a[:3, :3], cov_b[:3, :3]
    ev_a, q_a = np.linalg.eigh(s_a)
    ev_b, q_b = np.linalg.eigh(s_b)
    for ev in (ev_a, ev_b):
        if ev[0] <= 1e-12 * max(ev[-1], 1e-300):
            raise DegenerateDistributionError(
                f"rotational covariance is rank deficient (eigenvalues {ev})")

    # Each eigenframe sign candidate is polished by a weighted least-squares
    # fit of both relations. Residuals are scaled by their approximate
    # sampling spread so the (precise) mean and the (noisy) covariance
    # are fused rather than the covariance alone deciding the frame.
    n_a, n_b = len(a_set), len(b_set)
    mean_scale = np.sqrt(np.trace(s_a) / n_a + np.trace(s_b) / n_b)
    cov_scale = np.linalg.norm(s_a) * np.sqrt(2.0 / n_a + 2.0 / n_b)

    def residual(w, r0):
        r = r0 @ so3_exp(w)
        return np.concatenate([(m_a.r @ r - r @ m_b.r).ravel() / mean_scale,
                               (s_a - r @ s_b @ r.T).ravel() / cov_scale])

    best = None
    for signs in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
        r0 = q_a @ np.diag(signs) @ q_b.T
        if np.linalg.det(r0) < 0:
            r0 = q_a @ np.diag(signs) @ np.diag([1, 1, -1]) @ q_b.T
        sol = least_squares(residual, np.zeros(3), args=(r0,), jac="3-point", method="trf",
                            xtol=1e-15, ftol=1e-15, gtol=1e-15)
        if best is None or sol.cost < best[0]:
            best = (sol.cost, r0 @ so3_exp(sol.x))
    r_x = project_to_so3(best[1])

    # mean relation: (R_MA - I) p = R p_MB - p_MA
    lhs = [m_a.r - np.eye(3)]
    rhs = [r_x @ m_b.p - m_a.p]
    # cross-covariance: [p] S_ww = S_vw(A) - R S_vw(B) R^T, i.e. -[S e_j] p = C e_j
    cross = cov_a[3:, :3] - r_x @ cov_b[3:, :3] @ r_x.T
    weight = 1.0 / np.linalg.norm(s_a)
    for j in range(3):
        lhs.append(-weight * skew(s_a[:, j]))
        rhs.append(weight * cross[:, j])
    p_x, *_ = np.linalg.lstsq(np.vstack(lhs), np.concatenate(rhs), rcond=None)
    return Pose(r_x, p_x)
