"""Reference repository construction, descriptor matching and match accuracy.

Evaluation builds a repository of 3D-located keypoints from reference images,
matches each test image's keypoints against it by exact nearest descriptor
distance, and scores a match as correct when the two world points are within
a 3D distance threshold.  Matching has a plain linear-scan mode and a
vectorized mode that must agree with it exactly, ties always resolving to the
lowest repository index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import featnet
from .errors import ShapeError
from .featnet import Keypoint3D
from .geometry import DepthImage, unproject

REPO_TOP_K = 50
_UNIT_NORM_TOL = 1e-6

MMA_THRESHOLDS_M = (0.1, 0.25, 0.5)


@dataclass(eq=False)
class KeypointRepository:
    """Flat, immutable store of 3D-located reference keypoints."""

    entries: list[Keypoint3D] = field(default_factory=list)

    def __post_init__(self):
        dim = None
        for entry in self.entries:
            if entry.world is None or not np.all(np.isfinite(entry.world)):
                raise ValueError("repository entries need finite world "
                                 "coordinates")
            norm = np.linalg.norm(entry.descriptor)
            if abs(norm - 1.0) > _UNIT_NORM_TOL:
                raise ValueError(f"repository descriptor norm {norm} is not 1")
            if dim is None:
                dim = entry.descriptor.shape[0]
            elif entry.descriptor.shape[0] != dim:
                raise ShapeError("repository descriptors have mixed widths")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def descriptor_dim(self) -> int:
        return self.entries[0].descriptor.shape[0] if self.entries else 0

    @property
    def image_ids(self) -> list[str]:
        return sorted({entry.image_id for entry in self.entries})

    def descriptor_matrix(self) -> np.ndarray:
        return np.stack([entry.descriptor for entry in self.entries])


def lift_keypoint(kp: Keypoint3D, image: DepthImage) -> Keypoint3D | None:
    """Attach the keypoint's world point, or None when its depth is missing.

    Depth is read at the pixel containing (x, y) and unprojected with the
    image's full-resolution camera.
    """
    col = min(max(int(kp.x), 0), image.width - 1)
    row = min(max(int(kp.y), 0), image.height - 1)
    depth = image.depth[row, col]
    if depth <= 0.0:
        return None
    world = unproject((kp.x, kp.y), float(depth), image.camera)
    return Keypoint3D(kp.x, kp.y, kp.score, kp.descriptor, world=world,
                      image_id=kp.image_id)


def build_repository(reference_images, top_k: int = REPO_TOP_K) -> KeypointRepository:
    """Collect the top keypoints of each reference image with world points.

    ``reference_images`` yields (DepthImage, keypoints) pairs.  Keypoints over
    invalid depth are dropped before the per-image top-k cut, so an image
    always contributes its k best locatable points (fewer if it has fewer).
    """
    entries: list[Keypoint3D] = []
    for image, keypoints in reference_images:
        lifted = [lift_keypoint(kp, image) for kp in keypoints]
        usable = [kp for kp in lifted if kp is not None]
        usable.sort(key=lambda kp: (-kp.score, kp.y, kp.x))
        entries.extend(usable[:top_k])
    return KeypointRepository(entries)


def _query_matrix(queries: list[Keypoint3D]) -> np.ndarray:
    return np.stack([kp.descriptor for kp in queries])


def match_keypoints(queries: list[Keypoint3D], repo: KeypointRepository,
                    mode: str = "fast") -> list[tuple[int, int, float]]:
    """Exact nearest repository entry per query, as (query, repo, distance).

    ``mode`` picks the implementation: "reference" is a transparent linear
    scan, "fast" a vectorized scan computing identical distances in the same
    order.  Both break ties toward the lowest repository index.
    """
    if len(repo) == 0:
        raise ValueError("cannot match against an empty repository")
    if not queries:
        return []
    # Both modes square, sum and root with the same elementary operations so
    # their distances agree bit for bit, not merely to rounding.
    if mode == "reference":
        out = []
        for qi, kp in enumerate(queries):
            best = None
            best_ri = -1
            for ri, entry in enumerate(repo.entries):
                diff = kp.descriptor - entry.descriptor
                d = float(np.sqrt(np.sum(diff * diff)))
                if best is None or d < best:
                    best = d
                    best_ri = ri
            out.append((qi, best_ri, best))
        return out
    if mode == "fast":
        mat = repo.descriptor_matrix()
        out = []
        for qi, kp in enumerate(queries):
            diff = mat - kp.descriptor
            dists = np.sqrt(np.sum(diff * diff, axis=1))
            ri = int(np.argmin(dists))
            out.append((qi, ri, float(dists[ri])))
        return out
    raise ValueError(f"unknown matching mode: {mode}")


def match_worlds(queries: list[Keypoint3D], repo: KeypointRepository,
                 mode: str = "fast") -> list[tuple[np.ndarray, np.ndarray]]:
    """World-point pairs (query, matched reference) for queries that have one."""
    pairs = []
    for qi, ri, _ in match_keypoints(queries, repo, mode):
        if queries[qi].world is not None:
            pairs.append((queries[qi].world, repo.entries[ri].world))
    return pairs


def mean_matching_accuracy(per_image_matches, threshold_m: float) -> float:
    """Mean over images of the correct-match fraction, as a percentage.

    Each element of ``per_image_matches`` lists one image's matched world
    pairs (query world, reference world); a pair is correct when the two are
    within ``threshold_m`` meters.  Images with no matches are excluded.
    """
    fractions = []
    for matches in per_image_matches:
        if not matches:
            continue
        correct = sum(1 for q, r in matches
                      if np.linalg.norm(np.asarray(q) - np.asarray(r))
                      <= threshold_m)
        fractions.append(correct / len(matches))
    if not fractions:
        raise ValueError("no image contributed any match")
    return 100.0 * float(np.mean(fractions))


def save_repository(path, repo: KeypointRepository) -> None:
    """Persist the repository in the keypoint text schema (world mandatory)."""
    featnet.save_keypoints(path, repo.entries)


def load_repository(path) -> KeypointRepository:
    entries = featnet.load_keypoints(path)
    for entry in entries:
        if entry.world is None:
            raise ValueError(f"repository file {path} has an entry without "
                             "world coordinates")
    return KeypointRepository(entries)
