"""Dataset ingestion and training-pair sampling.

Two on-disk layouts are supported.  The TUM-style layout has a depth index
file (``depth.txt``: timestamp and image path per line) and a trajectory file
(``groundtruth.txt``: timestamp tx ty tz qx qy qz qw, camera-to-world);
frames are associated to the nearest pose within 20 ms.  The 7-Scenes-style
layout stores per-frame 16-bit millimeter depth PNGs next to per-frame 4x4
camera-to-world pose text files.  Both are converted to world-to-camera
convention on load.  Synthetic sequences come from the scene renderer.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import EmptySequenceError, IngestionError
from .geometry import CameraParams, DepthImage
from .scenes import SyntheticScene, render_synthetic

TUM_DEPTH_SCALE = 1.0 / 5000.0
SEVEN_SCENES_DEPTH_SCALE = 1.0 / 1000.0
DEFAULT_MAX_DEPTH = 10.0
POSE_ASSOCIATION_WINDOW = 0.020  # seconds

# Loaded rotations may carry text-file rounding; accept up to this much
# deviation from orthonormality and project onto the nearest rotation, so
# every stored camera ends up exactly orthonormal.
POSE_ORTHO_TOL = 1e-3


@dataclass
class Frame:
    index: int
    timestamp: float
    image: DepthImage


@dataclass
class Sequence:
    frames: list[Frame]
    depth_scale: float
    max_depth: float

    def __post_init__(self):
        indices = [f.index for f in self.frames]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise IngestionError("frame indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class PairSpec:
    sequence_id: str
    index: int
    offset: int


def quaternion_to_rotation(qx: float, qy: float, qz: float, qw: float) -> np.ndarray:
    """Rotation matrix of a quaternion (normalized first)."""
    q = np.array([qw, qx, qy, qz], dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise IngestionError("zero-norm quaternion in trajectory")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _nearest_rotation(r: np.ndarray) -> np.ndarray:
    """Project a near-rotation onto SO(3), rejecting matrices too far off."""
    err = np.max(np.abs(r @ r.T - np.eye(3)))
    if err > POSE_ORTHO_TOL:
        raise IngestionError(f"pose rotation off orthonormal by {err:.2e}")
    u, _, vt = np.linalg.svd(r)
    fixed = u @ np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt))]) @ vt
    return fixed


def _invert_camera_to_world(r_cw: np.ndarray, t_cw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r = r_cw.T
    return r, -r @ np.asarray(t_cw, dtype=np.float64)


def _read_depth_png(path, depth_scale: float) -> np.ndarray:
    try:
        with Image.open(path) as img:
            raw = np.asarray(img)
    except (OSError, SyntaxError) as err:
        raise IngestionError(f"cannot read depth image {path}: {err}") from err
    return raw.astype(np.float64) * depth_scale


def load_tum_sequence(root, intrinsics: tuple[float, float, float, float],
                      depth_scale: float = TUM_DEPTH_SCALE,
                      max_depth: float = DEFAULT_MAX_DEPTH,
                      association_window: float = POSE_ASSOCIATION_WINDOW,
                      ) -> Sequence:
    """Load a TUM-style directory: depth index plus quaternion trajectory."""
    depth_index = os.path.join(root, "depth.txt")
    trajectory = os.path.join(root, "groundtruth.txt")
    for required in (depth_index, trajectory):
        if not os.path.isfile(required):
            raise IngestionError(f"missing {required}")

    poses: list[tuple[float, np.ndarray, np.ndarray]] = []
    with open(trajectory) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise IngestionError(f"bad trajectory line: {line!r}")
            ts, tx, ty, tz, qx, qy, qz, qw = map(float, parts)
            r_cw = quaternion_to_rotation(qx, qy, qz, qw)
            poses.append((ts, r_cw, np.array([tx, ty, tz])))
    if not poses:
        raise EmptySequenceError(f"no poses in {trajectory}")
    poses.sort(key=lambda item: item[0])
    pose_times = np.array([p[0] for p in poses])

    fx, fy, cx, cy = intrinsics
    frames: list[Frame] = []
    with open(depth_index) as fh:
        entries = []
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise IngestionError(f"bad depth index line: {line!r}")
            entries.append((float(parts[0]), parts[1]))
    entries.sort(key=lambda item: item[0])

    for idx, (ts, rel_path) in enumerate(entries):
        slot = int(np.searchsorted(pose_times, ts))
        best, best_dt = None, math.inf
        for k in (slot - 1, slot):
            if 0 <= k < len(poses):
                dt = abs(pose_times[k] - ts)
                if dt < best_dt:
                    best, best_dt = poses[k], dt
        if best is None or best_dt > association_window:
            continue
        depth = _read_depth_png(os.path.join(root, rel_path), depth_scale)
        r, t = _invert_camera_to_world(_nearest_rotation(best[1]), best[2])
        cam = CameraParams(fx, fy, cx, cy, r, t,
                           width=depth.shape[1], height=depth.shape[0])
        frames.append(Frame(len(frames), ts, DepthImage(depth, max_depth, cam)))

    if not frames:
        raise EmptySequenceError(f"no depth frame within {association_window}s of a pose")
    return Sequence(frames, depth_scale, max_depth)


_FRAME_DEPTH_RE = re.compile(r"^frame-(\d+)\.depth\.png$")


def load_7scenes_sequence(root, intrinsics: tuple[float, float, float, float],
                          depth_scale: float = SEVEN_SCENES_DEPTH_SCALE,
                          max_depth: float = DEFAULT_MAX_DEPTH) -> Sequence:
    """Load a 7-Scenes-style directory of frame-NNNNNN.depth.png / .pose.txt."""
    if not os.path.isdir(root):
        raise IngestionError(f"missing directory {root}")
    numbered = []
    for name in os.listdir(root):
        m = _FRAME_DEPTH_RE.match(name)
        if m:
            numbered.append((int(m.group(1)), name))
    numbered.sort()
    if not numbered:
        raise EmptySequenceError(f"no depth frames in {root}")

    fx, fy, cx, cy = intrinsics
    frames: list[Frame] = []
    for number, name in numbered:
        pose_path = os.path.join(root, name.replace(".depth.png", ".pose.txt"))
        if not os.path.isfile(pose_path):
            raise IngestionError(f"missing pose file {pose_path}")
        mat = np.loadtxt(pose_path)
        if mat.shape != (4, 4):
            raise IngestionError(f"pose file {pose_path} is not a 4x4 matrix")
        depth = _read_depth_png(os.path.join(root, name), depth_scale)
        r, t = _invert_camera_to_world(_nearest_rotation(mat[:3, :3]), mat[:3, 3])
        cam = CameraParams(fx, fy, cx, cy, r, t,
                           width=depth.shape[1], height=depth.shape[0])
        frames.append(Frame(len(frames), float(number), DepthImage(depth, max_depth, cam)))
    return Sequence(frames, depth_scale, max_depth)


def render_sequence(scene: SyntheticScene, n_frames: int,
                    resolution: tuple[int, int],
                    intrinsics: tuple[float, float, float, float],
                    max_depth: float = 5.0) -> Sequence:
    """Render an orbit into an in-memory sequence."""
    frames = []
    for i in range(n_frames):
        image, _ = render_synthetic(scene, i, resolution, intrinsics, max_depth)
        frames.append(Frame(i, float(i), image))
    return Sequence(frames, depth_scale=1.0, max_depth=max_depth)


def sample_pairs(sequence: Sequence, offset: int, stride: int = 1,
                 sequence_id: str = "") -> list[PairSpec]:
    """All (i, i+offset) pairs with i a multiple of the stride."""
    if offset < 1:
        raise ValueError(f"offset must be positive, got {offset}")
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    n = len(sequence)
    return [PairSpec(sequence_id, i, offset)
            for i in range(0, n - offset, stride)]


def normalize_depth(img: DepthImage) -> np.ndarray:
    """Depth scaled by max_depth into [0, 1], zero where invalid."""
    return img.normalized()
