"""Deterministic synthetic depth scenes.

A scene is a handful of spheres and axis-aligned boxes over a ground plane,
plus an orbit trajectory: the camera circles the scene center at a fixed
radius, advancing a fixed azimuth per frame with small seeded jitter, always
looking at the target point.  Rendering casts one ray per pixel and stores
the camera-frame z-depth of the nearest hit, so consecutive frames form an
exactly consistent multi-view depth sequence.  Everything is a pure function
of (seed, frame), which the reproducibility tests rely on.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .geometry import CameraParams, DepthImage

SCENE_VERSION = 1

# Hits closer than this are ignored so a ray never "hits" its own origin.
NEAR_CLIP = 1e-6


@dataclass
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.radius = float(self.radius)


@dataclass
class Box:
    """Axis-aligned box given by its low and high corners."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        self.low = np.asarray(self.low, dtype=np.float64).reshape(3)
        self.high = np.asarray(self.high, dtype=np.float64).reshape(3)


@dataclass
class OrbitTrajectory:
    radius: float = 3.0
    height: float = 1.6
    target: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.7, 0.0]))
    azimuth_step_deg: float = 1.5
    azimuth_jitter_deg: float = 0.2
    radius_jitter_m: float = 0.02

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=np.float64).reshape(3)


@dataclass
class SyntheticScene:
    seed: int
    spheres: list[Sphere]
    boxes: list[Box]
    ground_extent: float = 8.0
    max_range: float = 12.0
    trajectory: OrbitTrajectory = field(default_factory=OrbitTrajectory)

    @staticmethod
    def generate(seed: int) -> "SyntheticScene":
        """Draw a random desk-scale arrangement, a pure function of the seed."""
        rng = np.random.default_rng(seed)
        spheres = []
        for _ in range(int(rng.integers(2, 4))):
            center = np.array([rng.uniform(-1.2, 1.2),
                               rng.uniform(0.35, 1.4),
                               rng.uniform(-1.2, 1.2)])
            spheres.append(Sphere(center, rng.uniform(0.25, 0.55)))
        boxes = []
        for _ in range(int(rng.integers(2, 4))):
            cx, cz = rng.uniform(-1.3, 1.3, size=2)
            hx, hz = rng.uniform(0.15, 0.5, size=2)
            height = rng.uniform(0.3, 1.1)
            boxes.append(Box([cx - hx, 0.0, cz - hz], [cx + hx, height, cz + hz]))
        return SyntheticScene(seed=seed, spheres=spheres, boxes=boxes)

    def camera_pose(self, frame: int) -> tuple[np.ndarray, np.ndarray]:
        """Orbit position and world-to-camera rotation for a frame index."""
        traj = self.trajectory
        rng = np.random.default_rng([self.seed, frame])
        azimuth = math.radians(frame * traj.azimuth_step_deg
                               + rng.uniform(-traj.azimuth_jitter_deg,
                                             traj.azimuth_jitter_deg))
        radius = traj.radius + rng.uniform(-traj.radius_jitter_m,
                                           traj.radius_jitter_m)
        center = traj.target + np.array([radius * math.cos(azimuth),
                                         traj.height - traj.target[1],
                                         radius * math.sin(azimuth)])
        forward = traj.target - center
        forward = forward / np.linalg.norm(forward)
        right = np.cross(np.array([0.0, 1.0, 0.0]), forward)
        right = right / np.linalg.norm(right)
        y_axis = np.cross(forward, right)
        rotation = np.stack([right, y_axis, forward])
        return center, rotation

    def camera(self, frame: int, resolution: tuple[int, int],
               intrinsics: tuple[float, float, float, float]) -> CameraParams:
        center, rotation = self.camera_pose(frame)
        fx, fy, cx, cy = intrinsics
        return CameraParams(fx, fy, cx, cy, rotation, -rotation @ center,
                            width=resolution[1], height=resolution[0])


def _intersect_spheres(scene, origin, dirs, best):
    for sphere in scene.spheres:
        oc = origin - sphere.center
        a = np.sum(dirs * dirs, axis=-1)
        b = 2.0 * np.sum(dirs * oc, axis=-1)
        c = float(np.dot(oc, oc) - sphere.radius ** 2)
        disc = b * b - 4.0 * a * c
        hit = disc >= 0.0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t_near = (-b - sq) / (2.0 * a)
        t_far = (-b + sq) / (2.0 * a)
        t = np.where(t_near > NEAR_CLIP, t_near, t_far)
        t = np.where(hit & (t > NEAR_CLIP), t, np.inf)
        best = np.minimum(best, t)
    return best


def _intersect_boxes(scene, origin, dirs, best):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        for box in scene.boxes:
            t1 = (box.low - origin) * inv
            t2 = (box.high - origin) * inv
            # fmin/fmax ignore the NaNs produced by 0 * inf on border rays.
            t_near = np.fmax.reduce(np.fmin(t1, t2), axis=-1)
            t_far = np.fmin.reduce(np.fmax(t1, t2), axis=-1)
            hit = (t_far >= t_near) & (t_far > NEAR_CLIP)
            t = np.where(t_near > NEAR_CLIP, t_near, t_far)
            t = np.where(hit & (t > NEAR_CLIP), t, np.inf)
            best = np.minimum(best, t)
    return best


def _intersect_ground(scene, origin, dirs, best):
    if scene.ground_extent <= 0.0:
        return best
    dy = dirs[..., 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(np.abs(dy) > 1e-12, -origin[1] / dy, np.inf)
    px = origin[0] + t * dirs[..., 0]
    pz = origin[2] + t * dirs[..., 2]
    inside = px * px + pz * pz <= scene.ground_extent ** 2
    t = np.where((t > NEAR_CLIP) & inside, t, np.inf)
    return np.minimum(best, t)


def cast_rays(scene: SyntheticScene, origin: np.ndarray,
              dirs: np.ndarray) -> np.ndarray:
    """Distance along each ray to the nearest surface (inf for a miss).

    ``dirs`` has shape (..., 3) and need not be normalized; the returned
    parameter t satisfies hit = origin + t * dir.
    """
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    best = np.full(dirs.shape[:-1], np.inf)
    best = _intersect_spheres(scene, origin, dirs, best)
    best = _intersect_boxes(scene, origin, dirs, best)
    best = _intersect_ground(scene, origin, dirs, best)
    return best


def render_synthetic(scene: SyntheticScene, frame: int,
                     resolution: tuple[int, int],
                     intrinsics: tuple[float, float, float, float],
                     max_depth: float = 5.0) -> tuple[DepthImage, CameraParams]:
    """Ray-cast one frame of the orbit into a z-depth image.

    Ray directions have unit z in the camera frame, so the ray parameter of
    the nearest hit is directly the camera-frame depth.  Rays that miss or
    hit beyond ``scene.max_range`` give invalid (zero) pixels.
    """
    h, w = resolution
    fx, fy, cx, cy = intrinsics
    cam = scene.camera(frame, resolution, intrinsics)
    center = cam.center()
    jj, ii = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    dirs_cam = np.stack([(jj - cx) / fx, (ii - cy) / fy, np.ones((h, w))],
                        axis=-1)
    dirs_world = dirs_cam @ cam.rotation  # R^T applied to each row vector
    t = cast_rays(scene, center, dirs_world)
    depth = np.where(np.isfinite(t) & (t <= scene.max_range), t, 0.0)
    return DepthImage(depth, max_depth, cam), cam


def save_scene(path, scene: SyntheticScene) -> None:
    """Write a scene description as reviewable JSON."""
    doc = {
        "scene_version": SCENE_VERSION,
        "seed": scene.seed,
        "ground_extent": scene.ground_extent,
        "max_range": scene.max_range,
        "spheres": [{"center": s.center.tolist(), "radius": s.radius}
                    for s in scene.spheres],
        "boxes": [{"low": b.low.tolist(), "high": b.high.tolist()}
                  for b in scene.boxes],
        "trajectory": {
            "radius": scene.trajectory.radius,
            "height": scene.trajectory.height,
            "target": scene.trajectory.target.tolist(),
            "azimuth_step_deg": scene.trajectory.azimuth_step_deg,
            "azimuth_jitter_deg": scene.trajectory.azimuth_jitter_deg,
            "radius_jitter_m": scene.trajectory.radius_jitter_m,
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scene(path) -> SyntheticScene:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read scene file {path}: {err}") from err
    if doc.get("scene_version") != SCENE_VERSION:
        raise ConfigError(f"unsupported scene version {doc.get('scene_version')}")
    traj = doc.get("trajectory", {})
    return SyntheticScene(
        seed=int(doc["seed"]),
        spheres=[Sphere(s["center"], s["radius"]) for s in doc.get("spheres", [])],
        boxes=[Box(b["low"], b["high"]) for b in doc.get("boxes", [])],
        ground_extent=float(doc.get("ground_extent", 0.0)),
        max_range=float(doc.get("max_range", 12.0)),
        trajectory=OrbitTrajectory(
            radius=float(traj.get("radius", 3.0)),
            height=float(traj.get("height", 1.6)),
            target=np.asarray(traj.get("target", [0.0, 0.7, 0.0])),
            azimuth_step_deg=float(traj.get("azimuth_step_deg", 1.5)),
            azimuth_jitter_deg=float(traj.get("azimuth_jitter_deg", 0.2)),
            radius_jitter_m=float(traj.get("radius_jitter_m", 0.02)),
        ),
    )
