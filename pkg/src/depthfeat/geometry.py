"""Pinhole camera geometry.

Covers the chain from raw depth pixels to cross-view supervision: projection
and unprojection, relative poses, block-averaged coarse depth at feature
resolution, the per-cell mapping grid that says where a target feature cell
lands in a source feature grid, and ground-truth cell correspondences vetted
by a mutual-visibility check.

Convention: rotation/translation always map world coordinates into the camera
frame.  Feature-grid work uses intrinsics divided by the downsample factor,
and the center of cell (i, j) sits at pixel (j + 0.5, i + 0.5) in those
scaled units, i.e. at continuous grid coordinate (row=i, col=j).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, InvalidDepthError, ShapeError

# Slack for frustum-bound checks, absorbing round-trip float error so that an
# identical camera pair yields an exact identity grid.
BOUNDS_EPS = 1e-9

MIN_CAMERA_DEPTH = 1e-9

DEFAULT_OCCLUSION_EPS = 0.05


@dataclass(eq=False)
class CameraParams:
    """Intrinsics plus a world-to-camera rigid transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.fx = float(self.fx)
        self.fy = float(self.fy)
        self.cx = float(self.cx)
        self.cy = float(self.cy)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if self.rotation.shape != (3, 3):
            raise ShapeError(f"rotation must be 3x3, got {self.rotation.shape}")
        if not np.allclose(self.rotation @ self.rotation.T, np.eye(3), atol=1e-6):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(self.rotation) - 1.0) > 1e-6:
            raise ValueError("rotation determinant is not +1")

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def scaled(self, factor: float) -> "CameraParams":
        """Camera for the same pose at a resolution scaled by ``factor``."""
        return CameraParams(
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=self.cx * factor,
            cy=self.cy * factor,
            rotation=self.rotation.copy(),
            translation=self.translation.copy(),
            width=math.ceil(self.width * factor),
            height=math.ceil(self.height * factor),
        )


def unproject(pixel, depth: float, cam: CameraParams) -> np.ndarray:
    """Lift a pixel with known depth to a world point."""
    if depth <= 0:
        raise InvalidDepthError(f"cannot unproject depth {depth}")
    u, v = float(pixel[0]), float(pixel[1])
    cam_point = np.array([
        (u - cam.cx) / cam.fx * depth,
        (v - cam.cy) / cam.fy * depth,
        depth,
    ])
    return cam.rotation.T @ (cam_point - cam.translation)


def project(world, cam: CameraParams) -> tuple[float, float, float]:
    """Project a world point, returning (u, v, camera-frame depth)."""
    p = cam.rotation @ np.asarray(world, dtype=np.float64) + cam.translation
    z = p[2]
    if z <= MIN_CAMERA_DEPTH:
        raise BehindCameraError(f"point at camera depth {z}")
    return (cam.fx * p[0] / z + cam.cx, cam.fy * p[1] / z + cam.cy, float(z))


def relative_pose(cam1: CameraParams, cam2: CameraParams) -> tuple[np.ndarray, np.ndarray]:
    """Rigid transform taking camera-1 coordinates into camera-2 coordinates."""
    r_rel = cam2.rotation @ cam1.rotation.T
    t_rel = cam2.translation - r_rel @ cam1.translation
    return r_rel, t_rel


@dataclass(eq=False)
class DepthImage:
    """A depth raster in meters with its camera; zero marks missing depth."""

    depth: np.ndarray
    max_depth: float
    camera: CameraParams

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.max_depth = float(self.max_depth)
        if self.depth.ndim != 2:
            raise ShapeError(f"depth must be 2D, got shape {self.depth.shape}")
        if self.max_depth <= 0:
            raise ValueError("max_depth must be positive")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0.0

    def normalized(self) -> np.ndarray:
        """Depth scaled into [0, 1]; invalid pixels become 0."""
        out = np.clip(self.depth / self.max_depth, 0.0, 1.0)
        out[~self.valid] = 0.0
        return out


def coarsen(image: DepthImage, factor: int,
            min_valid_fraction: float = 0.25) -> DepthImage:
    """Downsample depth by averaging the valid pixels of each factor x factor block.

    A block whose valid coverage falls below ``min_valid_fraction`` becomes an
    invalid (zero) cell.  The camera is rescaled to match.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return image
    h = math.ceil(image.height / factor)
    w = math.ceil(image.width / factor)
    out = np.zeros((h, w))
    depth = image.depth
    valid = image.valid
    for i in range(h):
        for j in range(w):
            block = depth[i * factor:(i + 1) * factor, j * factor:(j + 1) * factor]
            mask = valid[i * factor:(i + 1) * factor, j * factor:(j + 1) * factor]
            count = int(np.sum(mask))
            if count >= min_valid_fraction * block.size:
                out[i, j] = np.sum(block[mask]) / count
    return DepthImage(out, image.max_depth, image.camera.scaled(1.0 / factor))


@dataclass(eq=False)
class MappingGrid:
    """Continuous (row, col) source-grid coordinates per target cell."""

    coords: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.coords.ndim != 3 or self.coords.shape[2] != 2:
            raise ShapeError(f"coords must be h x w x 2, got {self.coords.shape}")
        if self.valid.shape != self.coords.shape[:2]:
            raise ShapeError("validity mask does not match the coordinate grid")

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape


@dataclass(eq=False)
class GridPositions:
    """Cell-center coordinates (row, col) of an h x w grid, in scaled pixels."""

    coords: np.ndarray

    @staticmethod
    def for_shape(height: int, width: int) -> "GridPositions":
        rr, cc = np.meshgrid(np.arange(height) + 0.5, np.arange(width) + 0.5,
                             indexing="ij")
        return GridPositions(np.stack([rr, cc], axis=-1))

    def normalized(self) -> np.ndarray:
        """Centers divided by the grid extent, landing strictly inside (0, 1)."""
        h, w = self.coords.shape[:2]
        return self.coords / np.array([h, w], dtype=np.float64)


def compute_mapping_grid(target_depth: DepthImage, cam_target: CameraParams,
                         cam_source: CameraParams,
                         source_grid_shape: tuple[int, int]) -> MappingGrid:
    """Where each target feature cell lands in the source feature grid.

    Every valid-depth target cell center is unprojected under ``cam_target``
    and reprojected under ``cam_source`` (both already scaled to feature
    resolution).  A cell is valid when the target depth is valid, the point
    lies in front of the source camera, and the projected coordinate falls
    inside the source grid bounds [0, h-1] x [0, w-1] in cell units (with
    1e-9 slack, after which coordinates are clamped into the bounds).
    Occlusion in the source view does not invalidate a cell.
    """
    h_t, w_t = target_depth.depth.shape
    h_s, w_s = source_grid_shape
    coords = np.zeros((h_t, w_t, 2))
    valid = np.zeros((h_t, w_t), dtype=bool)
    depth = target_depth.depth
    depth_ok = target_depth.valid
    for i in range(h_t):
        for j in range(w_t):
            if not depth_ok[i, j]:
                continue
            world = unproject((j + 0.5, i + 0.5), depth[i, j], cam_target)
            try:
                u, v, _ = project(world, cam_source)
            except BehindCameraError:
                continue
            row = v - 0.5
            col = u - 0.5
            if (-BOUNDS_EPS <= row <= h_s - 1 + BOUNDS_EPS
                    and -BOUNDS_EPS <= col <= w_s - 1 + BOUNDS_EPS):
                coords[i, j, 0] = min(max(row, 0.0), float(h_s - 1))
                coords[i, j, 1] = min(max(col, 0.0), float(w_s - 1))
                valid[i, j] = True
    return MappingGrid(coords, valid)


def correspondences_from_coarse(coarse1: DepthImage, coarse2: DepthImage,
                                occlusion_eps: float = DEFAULT_OCCLUSION_EPS,
                                ) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """Ground-truth cell pairs between two feature-resolution depth images.

    Each valid grid-2 cell is mapped into grid 1 and rounded to the nearest
    cell; the pair is kept only when the two cells' own unprojected 3D points
    agree within ``occlusion_eps`` meters, which rejects cells looking at
    different surfaces (occlusion).  Pairs are returned as ((i1, j1), (i2, j2))
    in row-major order of the grid-2 cell; a grid-1 cell may recur.
    """
    grid = compute_mapping_grid(coarse2, coarse2.camera, coarse1.camera,
                                coarse1.depth.shape)
    valid1 = coarse1.valid
    pairs: list[tuple[tuple[int, int], tuple[int, int]]] = []
    for i2 in range(grid.shape[0]):
        for j2 in range(grid.shape[1]):
            if not grid.valid[i2, j2]:
                continue
            i1 = int(np.rint(grid.coords[i2, j2, 0]))
            j1 = int(np.rint(grid.coords[i2, j2, 1]))
            if not valid1[i1, j1]:
                continue
            p1 = unproject((j1 + 0.5, i1 + 0.5), coarse1.depth[i1, j1],
                           coarse1.camera)
            p2 = unproject((j2 + 0.5, i2 + 0.5), coarse2.depth[i2, j2],
                           coarse2.camera)
            if np.linalg.norm(p1 - p2) <= occlusion_eps:
                pairs.append(((i1, j1), (i2, j2)))
    return pairs


def ground_truth_correspondences(img1: DepthImage, img2: DepthImage,
                                 grid_shape: tuple[int, int],
                                 occlusion_eps: float = DEFAULT_OCCLUSION_EPS,
                                 ) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """Cell correspondences between two full-resolution depth images.

    The images are block-averaged down to ``grid_shape`` first; images already
    at grid resolution pass through unchanged.
    """
    f1 = math.ceil(img1.height / grid_shape[0])
    f2 = math.ceil(img2.height / grid_shape[0])
    return correspondences_from_coarse(coarsen(img1, f1), coarsen(img2, f2),
                                       occlusion_eps)
