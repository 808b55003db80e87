"""Minimal and linear geometric solvers for the generalized camera model.

Pose direction conventions:
  * relative pose solvers return the frame-a-to-frame-b transform
    (x_b = R x_a + t),
  * the absolute pose solver returns world-to-body.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CheiralityError,
    DegenerateConfigurationError,
    InsufficientDataError,
    LowParallaxError,
    NoConsensusError,
    PoseUnreliableError,
)
from .geometry import Pose, PluckerRay, project_to_so3, skew, so3_exp

_RANK_TOL = 1e-7


@dataclass(frozen=True)
class RayCorrespondence:
    """The same physical point seen as a Pluecker ray in two rig frames."""

    ray_a: PluckerRay
    ray_b: PluckerRay


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 500
    inlier_threshold: float = 1.0
    confidence: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (0.0 < self.confidence < 1.0):
            raise ValueError("confidence must lie in (0, 1)")


def corr_arrays(corrs) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stack correspondences into (q1, m1, q2, m2) arrays."""
    q1 = np.array([c.ray_a.direction for c in corrs])
    m1 = np.array([c.ray_a.moment for c in corrs])
    q2 = np.array([c.ray_b.direction for c in corrs])
    m2 = np.array([c.ray_b.moment for c in corrs])
    return q1, m1, q2, m2


def generalized_epipolar_residuals(
    R: np.ndarray, t: np.ndarray, q1: np.ndarray, m1: np.ndarray, q2: np.ndarray, m2: np.ndarray
) -> np.ndarray:
    """Algebraic residual q2'Eq1 + q2'Rm1 + m2'Rq1 per correspondence."""
    E = skew(t) @ R
    return (
        np.einsum("ni,ij,nj->n", q2, E, q1)
        + np.einsum("ni,ij,nj->n", q2, R, m1)
        + np.einsum("ni,ij,nj->n", m2, R, q1)
    )


def generalized_epipolar_angles(pose: Pose, corrs) -> np.ndarray:
    """Sampson-normalized residual per correspondence, in radians.

    The algebraic residual is divided by the norm of its gradient projected
    onto the unit-sphere tangent spaces of the two ray directions, giving an
    angle-like inlier measure for RANSAC.
    """
    q1, m1, q2, m2 = corr_arrays(corrs)
    R, t = pose.rotation, pose.translation
    E = skew(t) @ R
    r = generalized_epipolar_residuals(R, t, q1, m1, q2, m2)
    g1 = q2 @ E + m2 @ R  # d r / d q1
    g2 = q1 @ E.T + m1 @ R.T  # d r / d q2
    g1_t = g1 - q1 * np.sum(g1 * q1, axis=1, keepdims=True)
    g2_t = g2 - q2 * np.sum(g2 * q2, axis=1, keepdims=True)
    denom = np.sqrt(np.sum(g1_t**2, axis=1) + np.sum(g2_t**2, axis=1))
    return np.abs(r) / np.maximum(denom, 1e-15)


def _levenberg_marquardt(eval_fn, x0, retract, max_iters=50, cost_tol=1e-10, grad_tol=1e-14):
    """Small dense LM used by the pose solvers. eval_fn(x) -> (residuals, J)."""
    x = x0
    r, J = eval_fn(x)
    cost = float(r @ r)
    lam = 1e-6
    history = [cost]
    for _ in range(max_iters):
        g = J.T @ r
        if np.linalg.norm(g, np.inf) < grad_tol:
            break
        H = J.T @ J
        diag = np.maximum(np.diag(H), 1e-12)
        accepted = False
        while lam < 1e12:
            try:
                dx = np.linalg.solve(H + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = retract(x, dx)
            r_new, J_new = eval_fn(x_new)
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                rel_drop = (cost - cost_new) / max(cost, 1e-30)
                x, r, J, cost = x_new, r_new, J_new, cost_new
                history.append(cost)
                lam = max(lam * 0.3, 1e-12)
                accepted = True
                if rel_drop < cost_tol:
                    return x, cost, history
                break
            lam *= 10.0
        if not accepted:
            break
    return x, cost, history


def solve_rel_pose_generalized(corrs, polish: bool = True) -> Pose:
    """Linear 17-point solve of the generalized epipolar constraint.

    Stacks one row over the 18 unknowns (E and R entries) per
    correspondence, takes the SVD null vector, projects the R block onto
    SO(3), recovers metric t from E = [t]x R, then optionally runs one LM
    polish on the algebraic residuals.
    """
    n = len(corrs)
    if n < 17:
        raise InsufficientDataError(f"17-point solver needs >= 17 correspondences, got {n}")
    q1, m1, q2, m2 = corr_arrays(corrs)

    A = np.empty((n, 18))
    A[:, :9] = np.einsum("ni,nj->nij", q2, q1).reshape(n, 9)
    A[:, 9:] = (
        np.einsum("ni,nj->nij", q2, m1) + np.einsum("ni,nj->nij", m2, q1)
    ).reshape(n, 9)
    row_norms = np.linalg.norm(A, axis=1)
    A = A / np.maximum(row_norms, 1e-15)[:, None]

    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s[16] < _RANK_TOL * s[0]:
        raise DegenerateConfigurationError(
            "rank-deficient system (central rays: metric scale unobservable)"
        )
    v = Vt[-1]
    E_blk = v[:9].reshape(3, 3)
    R_blk = v[9:].reshape(3, 3)

    scale = np.sqrt(3.0) / np.linalg.norm(R_blk)
    if np.linalg.det(R_blk) < 0:
        scale = -scale
    R = project_to_so3(scale * R_blk)
    E = scale * E_blk
    M = E @ R.T
    t = np.array(
        [(M[2, 1] - M[1, 2]) / 2.0, (M[0, 2] - M[2, 0]) / 2.0, (M[1, 0] - M[0, 1]) / 2.0]
    )

    if polish:

        def eval_fn(rt):
            Rc, tc = rt
            r = generalized_epipolar_residuals(Rc, tc, q1, m1, q2, m2)
            a1 = np.cross(q2, np.broadcast_to(tc, q2.shape)) + m2
            J = np.empty((n, 6))
            J[:, :3] = -(np.cross(a1 @ Rc, q1) + np.cross(q2 @ Rc, m1))
            J[:, 3:] = np.cross(q1 @ Rc.T, q2)
            return r, J

        def retract(rt, dx):
            Rc, tc = rt
            return (Rc @ so3_exp(dx[:3]), tc + dx[3:])

        (R, t), _, _ = _levenberg_marquardt(eval_fn, (R, t), retract, max_iters=10)

    pose = Pose.from_rt(R, t)
    if _cheirality_votes(pose, corrs) < _cheirality_votes(Pose.from_rt(R, -t), corrs):
        pose = Pose.from_rt(R, -t)
    return pose


def _cheirality_votes(pose: Pose, corrs) -> int:
    votes = 0
    for c in corrs:
        ray_a_in_b = c.ray_a.transformed(pose)
        try:
            x = triangulate([ray_a_in_b, c.ray_b], min_parallax_deg=0.0)
        except (LowParallaxError, InsufficientDataError):
            continue
        d1 = np.dot(ray_a_in_b.direction, x - ray_a_in_b.closest_point_to_origin)
        d2 = np.dot(c.ray_b.direction, x - c.ray_b.closest_point_to_origin)
        if d1 > 0 and d2 > 0:
            votes += 1
    return votes


def essential_from_pose(pose: Pose) -> np.ndarray:
    return skew(pose.translation) @ pose.rotation


def sampson_distances(E: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """First-order epipolar distance for homogeneous normalized points (n, 3)."""
    Ex1 = x1 @ E.T
    Etx2 = x2 @ E
    num = np.sum(x2 * Ex1, axis=1)
    denom = Ex1[:, 0] ** 2 + Ex1[:, 1] ** 2 + Etx2[:, 0] ** 2 + Etx2[:, 1] ** 2
    return np.abs(num) / np.sqrt(np.maximum(denom, 1e-30))


def _triangulate_two_view(R: np.ndarray, t: np.ndarray, x1: np.ndarray, x2: np.ndarray):
    """Midpoint triangulation in frame 1 for normalized points given 1->2 motion."""
    c2 = -R.T @ t
    d1 = x1 / np.linalg.norm(x1, axis=1, keepdims=True)
    d2 = (x2 @ R) / np.linalg.norm(x2, axis=1, keepdims=True)
    n = x1.shape[0]
    pts = np.empty((n, 3))
    depth1 = np.empty(n)
    depth2 = np.empty(n)
    eye = np.eye(3)
    for k in range(n):
        M = 2 * eye - np.outer(d1[k], d1[k]) - np.outer(d2[k], d2[k])
        rhs = (eye - np.outer(d2[k], d2[k])) @ c2
        try:
            pts[k] = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            pts[k] = np.nan
            depth1[k] = depth2[k] = -1.0
            continue
        depth1[k] = np.dot(d1[k], pts[k])
        depth2[k] = np.dot(d2[k], pts[k] - c2)
    return pts, depth1, depth2


def solve_rel_pose_mono(
    px1: np.ndarray, px2: np.ndarray, K, min_parallax_deg: float = 0.05
) -> Pose:
    """Normalized 8-point essential solve with cheirality disambiguation.

    Scale is unobservable for a single pinhole; the returned translation has
    unit norm. Raises LowParallaxError on (near) pure rotation.
    """
    px1 = np.asarray(px1, dtype=float)
    px2 = np.asarray(px2, dtype=float)
    n = px1.shape[0]
    if n < 8:
        raise InsufficientDataError(f"8-point solver needs >= 8 correspondences, got {n}")
    Ki = K.K_inv
    x1 = np.column_stack([px1, np.ones(n)]) @ Ki.T
    x2 = np.column_stack([px2, np.ones(n)]) @ Ki.T

    A = np.einsum("ni,nj->nij", x2, x1).reshape(n, 9)
    A = A / np.maximum(np.linalg.norm(A, axis=1), 1e-15)[:, None]
    _, _, Vt = np.linalg.svd(A, full_matrices=False)
    E0 = Vt[-1].reshape(3, 3)
    U, _, Vt2 = np.linalg.svd(E0)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt2) < 0:
        Vt2 = -Vt2
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])

    best = None
    for R in (U @ W @ Vt2, U @ W.T @ Vt2):
        for t in (U[:, 2], -U[:, 2]):
            _, d1, d2 = _triangulate_two_view(R, t, x1, x2)
            votes = int(np.sum((d1 > 0) & (d2 > 0)))
            if best is None or votes > best[0]:
                best = (votes, R, t)
    votes, R, t = best
    if votes == 0:
        raise LowParallaxError("no candidate passes cheirality (degenerate motion)")

    d1 = x1 / np.linalg.norm(x1, axis=1, keepdims=True)
    d2 = (x2 @ R) / np.linalg.norm(x2, axis=1, keepdims=True)
    cosang = np.clip(np.sum(d1 * d2, axis=1), -1.0, 1.0)
    if np.degrees(np.median(np.arccos(cosang))) < min_parallax_deg:
        raise LowParallaxError("median ray parallax below threshold (pure rotation?)")
    return Pose.from_rt(R, t / np.linalg.norm(t))


def solve_gpnp(
    points_world: np.ndarray,
    rays,
    initial_guess: Pose,
    max_iters: int = 50,
    cost_tol: float = 1e-10,
    cost_gate: float | None = None,
) -> Pose:
    """Absolute rig pose from world points and their observing body-frame rays.

    Minimizes the ray-point defect (lambda q + q x m) - (R P + t) over SE(3)
    with Levenberg-Marquardt from the initial guess. cost_gate, if given,
    bounds the RMS residual norm (meters) for the pose to be accepted.
    """
    P = np.asarray(points_world, dtype=float)
    n = P.shape[0]
    if n < 4:
        raise InsufficientDataError(f"gPnP needs >= 4 points, got {n}")
    q = np.array([r.direction for r in rays])
    foot = np.array([r.closest_point_to_origin for r in rays])

    def eval_fn(pose: Pose):
        R = pose.rotation
        y = P @ R.T + pose.translation
        lam = np.sum(q * y, axis=1)
        r = foot + q * lam[:, None] - y
        J = np.empty((n, 3, 6))
        # d e / d y = q q^T - I, d y / d theta = -R [P]x, d y / d t = I
        M = q[:, :, None] * q[:, None, :] - np.eye(3)
        S = np.zeros((n, 3, 3))
        S[:, 0, 1] = -P[:, 2]
        S[:, 0, 2] = P[:, 1]
        S[:, 1, 0] = P[:, 2]
        S[:, 1, 2] = -P[:, 0]
        S[:, 2, 0] = -P[:, 1]
        S[:, 2, 1] = P[:, 0]
        dy_dtheta = -np.einsum("ij,njk->nik", R, S)
        J[:, :, :3] = np.einsum("nij,njk->nik", M, dy_dtheta)
        J[:, :, 3:] = M
        return r.reshape(-1), J.reshape(-1, 6)

    def retract(pose: Pose, dx):
        return pose.retract(dx)

    pose, cost, _ = _levenberg_marquardt(
        eval_fn, initial_guess, retract, max_iters=max_iters, cost_tol=cost_tol
    )
    if cost_gate is not None and np.sqrt(cost / n) > cost_gate:
        raise PoseUnreliableError(f"gPnP RMS residual {np.sqrt(cost / n):.4g} above gate")
    return pose


def triangulate(
    rays, origins: np.ndarray | None = None, min_parallax_deg: float = 1.0
) -> np.ndarray:
    """Least-squares midpoint of >= 2 rays expressed in a common frame.

    Exact minimizer of the sum of squared point-to-line distances (3x3
    solve). origins, when given, enable the cheirality check that the point
    lies in front of each contributing camera.
    """
    k = len(rays)
    if k < 2:
        raise InsufficientDataError("triangulation needs >= 2 rays")
    q = np.array([r.direction for r in rays])
    foot = np.array([r.closest_point_to_origin for r in rays])

    cosang = np.abs(np.clip(q @ q.T, -1.0, 1.0))
    np.fill_diagonal(cosang, 1.0)
    max_angle = np.degrees(np.arccos(cosang.min()))
    if max_angle < min_parallax_deg:
        raise LowParallaxError(f"max pairwise ray angle {max_angle:.4f} deg below threshold")

    M = k * np.eye(3) - q.T @ q
    rhs = foot.sum(axis=0) - q.T @ np.sum(q * foot, axis=1)
    try:
        x = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        raise LowParallaxError("singular normal matrix (parallel rays)")

    if origins is not None:
        origins = np.asarray(origins, dtype=float)
        depths = np.sum(q * (x[None, :] - origins), axis=1)
        if np.any(depths <= 0):
            raise CheiralityError("triangulated point behind a contributing camera")
    return x


def _take(data, idx):
    if isinstance(data, np.ndarray):
        return data[idx]
    return [data[int(k)] for k in idx]


def ransac(
    solve_fn,
    residual_fn,
    data,
    sample_size: int,
    cfg: RansacConfig,
    min_inliers: int | None = None,
):
    """Hypothesize-and-verify with adaptive iteration count and inlier refit.

    solve_fn(subset) -> model (may raise solver errors to reject a sample);
    residual_fn(model, data) -> per-item non-negative residuals. Returns
    (model, inlier mask). Deterministic for a fixed cfg.seed.
    """
    n = len(data)
    if n < sample_size:
        raise InsufficientDataError(f"RANSAC needs >= {sample_size} items, got {n}")
    if min_inliers is None:
        min_inliers = sample_size
    rng = np.random.default_rng(cfg.seed)

    best_count = 0
    best_mask = None
    best_model = None
    needed = cfg.max_iterations
    it = 0
    while it < min(needed, cfg.max_iterations):
        it += 1
        idx = rng.choice(n, size=sample_size, replace=False)
        try:
            model = solve_fn(_take(data, idx))
        except Exception:
            continue
        res = np.asarray(residual_fn(model, data))
        mask = res <= cfg.inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            best_model = model
            w = count / n
            p_sample = w**sample_size
            if p_sample >= 1.0 - 1e-12:
                needed = it
            elif p_sample > 1e-12:
                needed = int(np.ceil(np.log(1.0 - cfg.confidence) / np.log(1.0 - p_sample)))

    if best_mask is None or best_count < min_inliers:
        raise NoConsensusError(
            f"no hypothesis reached {min_inliers} inliers (best {best_count}/{n})"
        )

    inlier_idx = np.flatnonzero(best_mask)
    try:
        refit = solve_fn(_take(data, inlier_idx))
        res = np.asarray(residual_fn(refit, data))
        mask = res <= cfg.inlier_threshold
        if int(mask.sum()) >= min_inliers:
            return refit, mask
    except Exception:
        pass
    # refit failed or lost support: keep the best hypothesis as-is
    return best_model, best_mask
