"""Camera pose from 2D-3D correspondences: EPnP, RANSAC and error metrics.

The solver follows the control-point formulation: four control points span
the world points (three when they are coplanar), every point is expressed in
barycentric coordinates, and the camera-frame control points are recovered
from the null space of the 2n x 12 projection system.  Candidate combinations
of null-space vectors are scaled by solving the inter-control-point distance
constraints, polished with a few Gauss-Newton steps, turned into a rigid pose
by point-set alignment, and ranked by mean reprojection error.

RANSAC wraps the solver with seeded minimal 4-point hypotheses, scoring by
inlier count with mean inlier reprojection error as the tie-breaker, and
refits on the winning inlier set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (DegenerateConfigurationError, InsufficientPointsError,
                     LocalizationFailure)

DEFAULT_RANSAC_ITERATIONS = 1000
DEFAULT_REPROJ_THRESHOLD_PX = 8.0
LOCALIZATION_THRESHOLDS = ((0.5, 2.0), (1.0, 5.0), (5.0, 10.0))

_GN_ITERATIONS = 10
_GN_STEP_TOL = 1e-10
_RANK_TOL = 1e-9
_ROTATION_TOL = 1e-6


@dataclass(eq=False)
class PoseEstimate:
    """A world-to-camera pose with its supporting evidence."""

    rotation: np.ndarray
    translation: np.ndarray
    inlier_count: int
    inlier_mask: np.ndarray
    reprojection_error: float

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation,
                                      dtype=np.float64).reshape(3)
        self.inlier_mask = np.asarray(self.inlier_mask, dtype=bool)
        residual = self.rotation @ self.rotation.T - np.eye(3)
        if (np.max(np.abs(residual)) > _ROTATION_TOL
                or abs(np.linalg.det(self.rotation) - 1.0) > _ROTATION_TOL):
            raise ValueError("pose rotation is not a proper rotation matrix")

    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation


def _split(correspondences) -> tuple[np.ndarray, np.ndarray]:
    worlds = np.array([np.asarray(w, dtype=np.float64).reshape(3)
                       for w, _ in correspondences])
    pixels = np.array([np.asarray(p, dtype=np.float64).reshape(2)
                       for _, p in correspondences])
    return worlds, pixels


def _control_points(worlds: np.ndarray) -> tuple[np.ndarray, bool]:
    """Centroid plus scaled principal directions; 3 points when coplanar."""
    centroid = worlds.mean(axis=0)
    centered = worlds - centroid
    cov = centered.T @ centered / len(worlds)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order]
    if eigvals[0] <= 1e-12 or eigvals[1] <= _RANK_TOL * eigvals[0]:
        raise DegenerateConfigurationError(
            "world points are collinear or coincident")
    axes = [centroid + math.sqrt(eigvals[i]) * eigvecs[:, i]
            for i in range(3) if eigvals[i] > _RANK_TOL * eigvals[0]]
    planar = len(axes) == 2
    return np.vstack([centroid] + axes), planar


def _barycentric(worlds: np.ndarray, control: np.ndarray,
                 planar: bool) -> np.ndarray:
    if planar:
        e1 = control[1] - control[0]
        e2 = control[2] - control[0]
        gram = np.array([[e1 @ e1, e1 @ e2], [e2 @ e1, e2 @ e2]])
        rel = worlds - control[0]
        ab = np.linalg.solve(gram, np.stack([rel @ e1, rel @ e2]))
        return np.column_stack([1.0 - ab[0] - ab[1], ab[0], ab[1]])
    system = np.vstack([control.T, np.ones(4)])
    rhs = np.vstack([worlds.T, np.ones(len(worlds))])
    return np.linalg.solve(system, rhs).T


def _projection_system(pixels: np.ndarray, alphas: np.ndarray,
                       intrinsics) -> np.ndarray:
    n, k = alphas.shape
    m = np.zeros((2 * n, 3 * k))
    for j in range(k):
        a = alphas[:, j]
        m[0::2, 3 * j] = a * intrinsics.fx
        m[0::2, 3 * j + 2] = a * (intrinsics.cx - pixels[:, 0])
        m[1::2, 3 * j + 1] = a * intrinsics.fy
        m[1::2, 3 * j + 2] = a * (intrinsics.cy - pixels[:, 1])
    return m


def _pair_indices(k: int) -> list[tuple[int, int]]:
    return [(a, b) for a in range(k) for b in range(a + 1, k)]


def _delta_grams(deltas: list[np.ndarray]) -> np.ndarray:
    """Per-pair Gram matrices of the null-vector control-point differences.

    ``grams[i, a, b]`` is the dot product of the i-th pairwise difference of
    null vector a with that of null vector b; every quantity the distance
    system needs is bilinear in these.
    """
    stacked = np.stack(deltas)
    return np.einsum("aif,bif->iab", stacked, stacked)


def _betas_from_distances(grams: np.ndarray, rho: np.ndarray,
                          case: int) -> np.ndarray:
    """Initial scale coefficients from the control-point distance system.

    The returned vector always spans every null vector, with zeros beyond
    the approximation order ``case``.
    """
    betas = np.zeros(grams.shape[1])
    if case == 1:
        lengths = np.sqrt(grams[:, 0, 0])
        betas[0] = float(lengths @ np.sqrt(rho) / (lengths @ lengths))
        return betas
    if case == 2:
        cols = np.column_stack([grams[:, 0, 0], 2.0 * grams[:, 0, 1],
                                grams[:, 1, 1]])
        b = np.linalg.lstsq(cols, rho, rcond=None)[0]
        betas[0] = math.sqrt(abs(b[0]))
        betas[1] = math.sqrt(abs(b[2])) if b[0] * b[2] > 0 else 0.0
        if b[1] < 0:
            betas[0] = -betas[0]
        return betas
    cols = np.column_stack([grams[:, 0, 0], 2.0 * grams[:, 0, 1],
                            grams[:, 1, 1], 2.0 * grams[:, 0, 2],
                            2.0 * grams[:, 1, 2]])
    b = np.linalg.lstsq(cols, rho, rcond=None)[0]
    betas[0] = math.sqrt(abs(b[0]))
    betas[1] = math.sqrt(abs(b[2])) if b[0] * b[2] > 0 else 0.0
    if b[1] < 0:
        betas[0] = -betas[0]
    betas[2] = b[3] / betas[0] if betas[0] != 0.0 else 0.0
    return betas


def _refine_betas(grams: np.ndarray, rho: np.ndarray,
                  betas: np.ndarray) -> np.ndarray:
    """Gauss-Newton on the full coefficient vector over all distance pairs.

    The squared pair lengths are the quadratic form beta' G_i beta, so the
    residual and jacobian fall out of one matrix product per iteration.  The
    tiny normal equations are solved directly, falling back to least squares
    when a degenerate subset makes them singular.
    """
    betas = betas.copy()
    for _ in range(_GN_ITERATIONS):
        projected = grams @ betas
        residual = projected @ betas - rho
        jac = 2.0 * projected
        try:
            step = np.linalg.solve(jac.T @ jac, jac.T @ residual)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(jac, residual, rcond=None)
        betas -= step
        if np.max(np.abs(step)) < _GN_STEP_TOL:
            break
    return betas


def _align_points(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rigid (R, t) with dst ~= R @ src + t, det(R) = +1."""
    sc = src.mean(axis=0)
    dc = dst.mean(axis=0)
    h = (src - sc).T @ (dst - dc)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return rot, dc - rot @ sc


def reprojection_errors(worlds: np.ndarray, pixels: np.ndarray,
                        rotation: np.ndarray, translation: np.ndarray,
                        intrinsics) -> np.ndarray:
    """Per-point pixel error; points at or behind the camera get infinity."""
    cam_pts = worlds @ rotation.T + translation
    z = cam_pts[:, 2]
    errors = np.full(len(worlds), np.inf)
    front = z > 1e-12
    u = intrinsics.fx * cam_pts[front, 0] / z[front] + intrinsics.cx
    v = intrinsics.fy * cam_pts[front, 1] / z[front] + intrinsics.cy
    errors[front] = np.hypot(u - pixels[front, 0], v - pixels[front, 1])
    return errors


def epnp(correspondences, intrinsics) -> PoseEstimate:
    """Pose from >= 4 correspondences of (world xyz, pixel uv).

    Only the intrinsic fields of ``intrinsics`` are read.  The candidate
    null-space combinations (one, two or three vectors; one or two in the
    coplanar case) are each refined and scored by mean reprojection error,
    and the best pose wins.
    """
    if len(correspondences) < 4:
        raise InsufficientPointsError(
            f"need at least 4 correspondences, got {len(correspondences)}")
    worlds, pixels = _split(correspondences)
    control, planar = _control_points(worlds)
    alphas = _barycentric(worlds, control, planar)
    m = _projection_system(pixels, alphas, intrinsics)
    k = control.shape[0]
    _, eigvecs = np.linalg.eigh(m.T @ m)
    # On minimal inputs the null space is as wide as the unknown vector, so
    # refinement always spans every candidate basis vector even though the
    # closed-form initializations only reach the first few.
    cases = (1, 2) if planar else (1, 2, 3)
    span = 3 if planar else 4
    null_vecs = [eigvecs[:, i].reshape(k, 3) for i in range(span)]
    pairs = _pair_indices(k)
    rho = np.array([np.sum((control[a] - control[b]) ** 2) for a, b in pairs])
    deltas = [np.stack([v[a] - v[b] for a, b in pairs]) for v in null_vecs]
    grams = _delta_grams(deltas)

    best: PoseEstimate | None = None
    for case in cases:
        betas = _betas_from_distances(grams, rho, case)
        betas = _refine_betas(grams, rho, betas)
        ctrl_cam = sum(betas[m_] * null_vecs[m_] for m_ in range(span))
        cam_pts = alphas @ ctrl_cam
        if np.sum(cam_pts[:, 2]) < 0.0:
            cam_pts = -cam_pts
        rotation, translation = _align_points(worlds, cam_pts)
        errors = reprojection_errors(worlds, pixels, rotation, translation,
                                     intrinsics)
        mean_error = float(np.mean(errors))
        if best is None or mean_error < best.reprojection_error:
            best = PoseEstimate(rotation, translation, len(worlds),
                                np.ones(len(worlds), dtype=bool), mean_error)
    return best


def _batch_control_points(worlds: np.ndarray) -> tuple[np.ndarray, np.ndarray,
                                                       np.ndarray]:
    """Control points for a stack of subsets: (control, usable, planar).

    ``control`` always has four rows per subset; planar subsets simply leave
    the last row unused.  Subsets with collinear or coincident points are
    flagged unusable, the batched analogue of the degenerate-configuration
    error raised by the scalar path.
    """
    centroid = worlds.mean(axis=1)
    centered = worlds - centroid[:, None, :]
    cov = centered.transpose(0, 2, 1) @ centered / worlds.shape[1]
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.maximum(eigvals[:, ::-1], 0.0)
    eigvecs = eigvecs[:, :, ::-1]
    usable = (eigvals[:, 0] > 1e-12) & (eigvals[:, 1] > _RANK_TOL * eigvals[:, 0])
    planar = usable & ~(eigvals[:, 2] > _RANK_TOL * eigvals[:, 0])
    axes = (centroid[:, None, :]
            + np.sqrt(eigvals)[:, :, None] * eigvecs.transpose(0, 2, 1))
    control = np.concatenate([centroid[:, None, :], axes], axis=1)
    return control, usable, planar


def _batch_barycentric(worlds: np.ndarray, control: np.ndarray,
                       planar: bool) -> np.ndarray:
    if planar:
        e1 = control[:, 1] - control[:, 0]
        e2 = control[:, 2] - control[:, 0]
        gram = np.stack([
            np.stack([np.sum(e1 * e1, axis=1), np.sum(e1 * e2, axis=1)],
                     axis=1),
            np.stack([np.sum(e2 * e1, axis=1), np.sum(e2 * e2, axis=1)],
                     axis=1)], axis=1)
        rel = worlds - control[:, None, 0]
        rhs = np.stack([np.einsum("bpf,bf->bp", rel, e1),
                        np.einsum("bpf,bf->bp", rel, e2)], axis=1)
        ab = np.linalg.solve(gram, rhs)
        return np.stack([1.0 - ab[:, 0] - ab[:, 1], ab[:, 0], ab[:, 1]],
                        axis=2)
    count = worlds.shape[0]
    system = np.empty((count, 4, 4))
    system[:, :3, :] = control.transpose(0, 2, 1)
    system[:, 3, :] = 1.0
    rhs = np.empty((count, 4, worlds.shape[1]))
    rhs[:, :3, :] = worlds.transpose(0, 2, 1)
    rhs[:, 3, :] = 1.0
    return np.linalg.solve(system, rhs).transpose(0, 2, 1)


def _batch_projection_system(pixels: np.ndarray, alphas: np.ndarray,
                             intrinsics) -> np.ndarray:
    count, n, k = alphas.shape
    m = np.zeros((count, 2 * n, 3 * k))
    for j in range(k):
        a = alphas[:, :, j]
        m[:, 0::2, 3 * j] = a * intrinsics.fx
        m[:, 0::2, 3 * j + 2] = a * (intrinsics.cx - pixels[:, :, 0])
        m[:, 1::2, 3 * j + 1] = a * intrinsics.fy
        m[:, 1::2, 3 * j + 2] = a * (intrinsics.cy - pixels[:, :, 1])
    return m


def _batch_betas_init(grams: np.ndarray, rho: np.ndarray,
                      case: int) -> np.ndarray:
    span = grams.shape[2]
    betas = np.zeros((grams.shape[0], span))
    if case == 1:
        lengths = np.sqrt(grams[:, :, 0, 0])
        betas[:, 0] = (np.einsum("bp,bp->b", lengths, np.sqrt(rho))
                       / np.einsum("bp,bp->b", lengths, lengths))
        return betas
    if case == 2:
        cols = np.stack([grams[:, :, 0, 0], 2.0 * grams[:, :, 0, 1],
                         grams[:, :, 1, 1]], axis=2)
    else:
        cols = np.stack([grams[:, :, 0, 0], 2.0 * grams[:, :, 0, 1],
                         grams[:, :, 1, 1], 2.0 * grams[:, :, 0, 2],
                         2.0 * grams[:, :, 1, 2]], axis=2)
    sol = np.matmul(np.linalg.pinv(cols), rho[:, :, None])[:, :, 0]
    beta0 = np.sqrt(np.abs(sol[:, 0]))
    beta1 = np.where(sol[:, 0] * sol[:, 2] > 0,
                     np.sqrt(np.abs(sol[:, 2])), 0.0)
    beta0 = np.where(sol[:, 1] < 0, -beta0, beta0)
    betas[:, 0] = beta0
    betas[:, 1] = beta1
    if case == 3:
        betas[:, 2] = np.where(beta0 != 0.0,
                               sol[:, 3] / np.where(beta0 != 0.0, beta0, 1.0),
                               0.0)
    return betas


def _batch_refine(grams: np.ndarray, rho: np.ndarray,
                  betas: np.ndarray) -> np.ndarray:
    """Gauss-Newton over a (subset, case) grid of coefficient vectors.

    Identical math to the scalar refinement; converged entries freeze while
    the rest keep iterating, and a singular normal system anywhere in the
    batch falls back to per-item solves with the scalar's least-squares
    escape hatch.
    """
    count, cases, span = betas.shape
    betas = betas.copy()
    active = np.ones((count, cases), dtype=bool)
    for _ in range(_GN_ITERATIONS):
        projected = np.einsum("biml,bcl->bcim", grams, betas)
        residual = np.einsum("bcim,bcm->bci", projected, betas) - rho[:, None]
        jac = 2.0 * projected
        normal = np.einsum("bcim,bcin->bcmn", jac, jac)
        rhs = np.einsum("bcim,bci->bcm", jac, residual)
        flat_normal = normal.reshape(-1, span, span)
        flat_rhs = rhs.reshape(-1, span, 1)
        try:
            step = np.linalg.solve(flat_normal, flat_rhs)[..., 0]
        except np.linalg.LinAlgError:
            flat_jac = jac.reshape(-1, jac.shape[2], span)
            flat_res = residual.reshape(-1, residual.shape[2])
            step = np.empty((len(flat_normal), span))
            for i in range(len(flat_normal)):
                try:
                    step[i] = np.linalg.solve(flat_normal[i],
                                              flat_rhs[i][:, 0])
                except np.linalg.LinAlgError:
                    step[i], *_ = np.linalg.lstsq(flat_jac[i], flat_res[i],
                                                  rcond=None)
        step = np.where(active[..., None], step.reshape(count, cases, span),
                        0.0)
        betas -= step
        active &= np.max(np.abs(step), axis=-1) >= _GN_STEP_TOL
        if not active.any():
            break
    return betas


def _batch_case_poses(worlds: np.ndarray, pixels: np.ndarray,
                      control: np.ndarray, planar: bool,
                      intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Best-case pose per subset for one planarity class of minimal sets."""
    k = 3 if planar else 4
    span = k
    count = len(worlds)
    control = control[:, :k]
    alphas = _batch_barycentric(worlds, control, planar)
    m = _batch_projection_system(pixels, alphas, intrinsics)
    _, eigvecs = np.linalg.eigh(m.transpose(0, 2, 1) @ m)
    null_vecs = eigvecs[:, :, :span].transpose(0, 2, 1).reshape(count, span,
                                                                k, 3)
    pairs = _pair_indices(k)
    first = [a for a, _ in pairs]
    second = [b for _, b in pairs]
    rho = np.sum((control[:, first] - control[:, second]) ** 2, axis=-1)
    deltas = null_vecs[:, :, first] - null_vecs[:, :, second]
    grams = np.einsum("bmif,blif->biml", deltas, deltas)

    cases = (1, 2) if planar else (1, 2, 3)
    betas = np.stack([_batch_betas_init(grams, rho, case) for case in cases],
                     axis=1)
    betas = _batch_refine(grams, rho, betas)

    ctrl_cam = np.einsum("bcm,bmkf->bckf", betas, null_vecs)
    cam_pts = np.einsum("bpk,bckf->bcpf", alphas, ctrl_cam)
    flip = np.where(np.sum(cam_pts[..., 2], axis=-1) < 0.0, -1.0, 1.0)
    cam_pts = cam_pts * flip[..., None, None]

    src = np.broadcast_to(worlds[:, None], cam_pts.shape)
    src_center = src.mean(axis=2, keepdims=True)
    dst_center = cam_pts.mean(axis=2, keepdims=True)
    h = ((src - src_center).transpose(0, 1, 3, 2)
         @ (cam_pts - dst_center))
    u, _, vt = np.linalg.svd(h)
    ut = u.transpose(0, 1, 3, 2)
    v = vt.transpose(0, 1, 3, 2)
    d = np.sign(np.linalg.det(v @ ut))
    correction = np.zeros_like(h)
    correction[..., 0, 0] = 1.0
    correction[..., 1, 1] = 1.0
    correction[..., 2, 2] = d
    rotations = v @ correction @ ut
    translations = (dst_center[..., 0, :]
                    - np.einsum("bcij,bcj->bci", rotations,
                                src_center[..., 0, :]))

    cam = (np.einsum("bcij,bpj->bcpi", rotations, worlds)
           + translations[:, :, None, :])
    z = cam[..., 2]
    front = z > 1e-12
    safe_z = np.where(front, z, 1.0)
    du = (intrinsics.fx * cam[..., 0] / safe_z + intrinsics.cx
          - pixels[:, None, :, 0])
    dv = (intrinsics.fy * cam[..., 1] / safe_z + intrinsics.cy
          - pixels[:, None, :, 1])
    errors = np.where(front, np.hypot(du, dv), np.inf)
    mean_errors = np.mean(errors, axis=-1)

    # First case wins unless a later one is strictly better, matching the
    # scalar candidate loop (including its indifference to NaN scores).
    choice = np.zeros(count, dtype=np.int64)
    best = mean_errors[:, 0].copy()
    for case_index in range(1, mean_errors.shape[1]):
        better = mean_errors[:, case_index] < best
        choice[better] = case_index
        best[better] = mean_errors[better, case_index]
    take = np.arange(count)
    return rotations[take, choice], translations[take, choice]


def _batch_minimal_poses(worlds: np.ndarray, pixels: np.ndarray,
                         intrinsics) -> tuple[np.ndarray, np.ndarray,
                                              np.ndarray]:
    """Candidate poses for every minimal subset in one vectorized pass.

    Returns stacked rotations and translations plus a validity mask; a
    linear-algebra failure anywhere in a sub-batch falls back to the scalar
    solver for just that sub-batch, mirroring its per-subset behavior.
    """
    total = len(worlds)
    rotations = np.zeros((total, 3, 3))
    translations = np.zeros((total, 3))
    valid = np.zeros(total, dtype=bool)
    control, usable, planar = _batch_control_points(worlds)
    for is_planar in (False, True):
        sel = np.nonzero(usable & (planar == is_planar))[0]
        if len(sel) == 0:
            continue
        try:
            rot, tr = _batch_case_poses(worlds[sel], pixels[sel],
                                        control[sel], is_planar, intrinsics)
        except np.linalg.LinAlgError:
            for i in sel:
                try:
                    pose = epnp(list(zip(worlds[i], pixels[i])), intrinsics)
                except DegenerateConfigurationError:
                    continue
                rotations[i] = pose.rotation
                translations[i] = pose.translation
                valid[i] = True
            continue
        rotations[sel] = rot
        translations[sel] = tr
        valid[sel] = True
    return rotations, translations, valid


def ransac_pnp(correspondences, intrinsics,
               iterations: int = DEFAULT_RANSAC_ITERATIONS,
               reproj_threshold_px: float = DEFAULT_REPROJ_THRESHOLD_PX,
               seed: int = 0) -> PoseEstimate:
    """Robust pose: seeded minimal hypotheses, inlier voting, inlier refit.

    All minimal-subset hypotheses are solved as one batch.  Raises a
    localization failure when no hypothesis explains at least four points
    within the reprojection threshold.
    """
    n = len(correspondences)
    if n < 4:
        raise InsufficientPointsError(
            f"need at least 4 correspondences, got {n}")
    worlds, pixels = _split(correspondences)
    rng = np.random.default_rng(seed)
    subsets = np.stack([rng.choice(n, size=4, replace=False)
                        for _ in range(iterations)])
    rotations, translations, valid = _batch_minimal_poses(
        worlds[subsets], pixels[subsets], intrinsics)

    best_mask = None
    best_rotation = None
    best_translation = None
    if valid.any():
        cam = (np.einsum("bij,nj->bni", rotations[valid], worlds)
               + translations[valid][:, None, :])
        z = cam[..., 2]
        front = z > 1e-12
        safe_z = np.where(front, z, 1.0)
        du = intrinsics.fx * cam[..., 0] / safe_z + intrinsics.cx - pixels[:, 0]
        dv = intrinsics.fy * cam[..., 1] / safe_z + intrinsics.cy - pixels[:, 1]
        errors = np.where(front, np.hypot(du, dv), np.inf)
        masks = errors <= reproj_threshold_px
        counts = masks.sum(axis=1)
        eligible = counts >= 4
        if eligible.any():
            top = np.nonzero(eligible & (counts == counts[eligible].max()))[0]
            means = np.array([errors[i, masks[i]].mean() for i in top])
            winner = top[int(np.argmin(means))]
            best_mask = masks[winner]
            best_rotation = rotations[valid][winner]
            best_translation = translations[valid][winner]
    if best_mask is None:
        raise LocalizationFailure(
            f"no hypothesis reached 4 inliers in {iterations} iterations")
    inlier_points = [correspondences[i] for i in np.nonzero(best_mask)[0]]
    try:
        refit = epnp(inlier_points, intrinsics)
        refit_rotation = refit.rotation
        refit_translation = refit.translation
    except DegenerateConfigurationError:
        refit_rotation = best_rotation
        refit_translation = best_translation
    errors = reprojection_errors(worlds, pixels, refit_rotation,
                                 refit_translation, intrinsics)
    mask = errors <= reproj_threshold_px
    inlier_errors = errors[mask]
    mean_error = float(np.mean(inlier_errors)) if mask.any() else math.inf
    return PoseEstimate(refit_rotation, refit_translation, int(mask.sum()),
                        mask, mean_error)


def pose_error(estimate: PoseEstimate, truth) -> tuple[float, float]:
    """(position error in meters, orientation error in degrees) vs truth.

    ``truth`` is any pose-like object with ``rotation`` and ``translation``
    mapping world to camera coordinates.
    """
    truth_center = -np.asarray(truth.rotation).T @ np.asarray(truth.translation)
    position = float(np.linalg.norm(estimate.center() - truth_center))
    cos_angle = (np.trace(estimate.rotation.T @ truth.rotation) - 1.0) / 2.0
    angle = math.degrees(math.acos(min(1.0, max(-1.0, cos_angle))))
    return position, angle


def localization_accuracy(errors, thresholds=LOCALIZATION_THRESHOLDS) -> list[float]:
    """Percentage of images within each (position m, orientation deg) pair.

    ``errors`` holds one entry per test image: an (error_m, error_deg) tuple,
    or None for an image whose localization failed outright.  Failures stay
    in the denominator.
    """
    errors = list(errors)
    if not errors:
        raise ValueError("no localization results to score")
    out = []
    for pos_t, ang_t in thresholds:
        hits = sum(1 for e in errors
                   if e is not None and e[0] <= pos_t and e[1] <= ang_t)
        out.append(100.0 * hits / len(errors))
    return out
