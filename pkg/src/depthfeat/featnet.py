"""Dense feature extraction, detection scores and keypoints.

The extractor is a 7-layer CNN over a single-channel normalized depth image:
three stages of [3x3 conv, relu, 3x3 stride-2 conv, relu] at 16, 32 and 64
channels, then a final 3x3 conv to the descriptor width.  The three strided
convs give exactly 8x spatial downsampling, so a feature cell covers an 8x8
pixel block.  Descriptors are the L2-normalized feature fibers.

Soft detection scores combine a per-channel 3x3 window softmax (alpha) with a
per-cell channel ratio-to-max (beta): gamma = max over channels of
alpha * beta, and S = gamma / sum(gamma).  Window softmax uses replicated
borders (clamped indices), which is what makes a constant feature map score
uniformly, and subtracts the window max before exponentiation for stability.

Hard detection takes strict 3x3 local maxima of S (in-bounds neighbors only)
and lifts cell (i, j) to full-resolution pixel (x, y) = (8j+4, 8i+4).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, InputTooSmallError, ShapeError
from .geometry import DepthImage

MIN_IMAGE_SIZE = 16
DOWNSAMPLE = 8
DEFAULT_SCALES = (0.5, 1.0, 2.0)
DEDUP_RADIUS_PX = 4.0
# Skip an upscaled pass when the resampled image would exceed this pixel count.
DEFAULT_MAX_SCALE_PIXELS = 1 << 22

KEYPOINT_FORMAT_VERSION = 1

_SCORE_EPS = 1e-12
_BETA_EPS = 1e-12


@dataclass(eq=False)
class FeatureMap:
    tensor: ad.Tensor
    image_id: str = ""
    scale: float = 1.0


@dataclass(eq=False)
class DescriptorMap:
    tensor: ad.Tensor


@dataclass(eq=False)
class ScoreMap:
    tensor: ad.Tensor


@dataclass(eq=False)
class Keypoint3D:
    """A detected keypoint at full image resolution."""

    x: float
    y: float
    score: float
    descriptor: np.ndarray
    world: np.ndarray | None = None
    image_id: str = ""

    def __post_init__(self):
        self.descriptor = np.asarray(self.descriptor, dtype=np.float64)
        if self.score <= 0:
            raise ValueError(f"keypoint score must be positive, got {self.score}")
        if self.world is not None:
            self.world = np.asarray(self.world, dtype=np.float64).reshape(3)


class FeatureExtractor:
    """The 7-conv dense feature network with He-initialized parameters."""

    def __init__(self, feature_dim: int = 64,
                 stage_channels: tuple[int, int, int] = (16, 32, 64),
                 seed: int = 0, in_channels: int = 1):
        self.feature_dim = feature_dim
        self.stage_channels = tuple(stage_channels)
        self.in_channels = in_channels
        rng = np.random.default_rng(seed)
        self.params: dict[str, ad.Parameter] = {}
        # (name, c_in, c_out, stride); strided convs do the 8x downsampling.
        self.layout: list[tuple[str, int, int, int]] = []
        c_prev = in_channels
        for idx, c in enumerate(self.stage_channels, start=1):
            self.layout.append((f"stage{idx}a", c_prev, c, 1))
            self.layout.append((f"stage{idx}b", c, c, 2))
            c_prev = c
        self.layout.append(("head", c_prev, feature_dim, 1))
        for name, c_in, c_out, _ in self.layout:
            fan_in = 3 * 3 * c_in
            kernel = rng.normal(0.0, math.sqrt(2.0 / fan_in),
                                size=(3, 3, c_in, c_out))
            self.params[f"phi.{name}.kernel"] = ad.Parameter(kernel,
                                                             f"phi.{name}.kernel")
            self.params[f"phi.{name}.bias"] = ad.Parameter(np.zeros(c_out),
                                                           f"phi.{name}.bias")

    def parameters(self) -> dict[str, ad.Parameter]:
        return dict(self.params)

    def forward(self, image: np.ndarray) -> ad.Tensor:
        """Dense features of a normalized single-channel raster."""
        image = np.asarray(image, dtype=np.float64)
        if image.ndim == 2:
            image = image[:, :, None]
        if image.ndim != 3 or image.shape[2] != self.in_channels:
            raise ShapeError(f"expected H x W x {self.in_channels} input, "
                             f"got {image.shape}")
        if image.shape[0] < MIN_IMAGE_SIZE or image.shape[1] < MIN_IMAGE_SIZE:
            raise InputTooSmallError(
                f"input {image.shape[0]}x{image.shape[1]} is below "
                f"{MIN_IMAGE_SIZE}x{MIN_IMAGE_SIZE}")
        x = ad.constant(image)
        last = len(self.layout) - 1
        for pos, (name, _, _, stride) in enumerate(self.layout):
            x = ad.conv2d(x, self.params[f"phi.{name}.kernel"], stride, "same")
            x = ad.add_channel_bias(x, self.params[f"phi.{name}.bias"])
            if pos != last:
                x = ad.relu(x)
        return x


def extract_features(image: DepthImage, model: FeatureExtractor,
                     image_id: str = "", scale: float = 1.0) -> FeatureMap:
    """Run the extractor on the image's normalized view."""
    return FeatureMap(model.forward(image.normalized()), image_id, scale)


def descriptor_map(features: FeatureMap) -> DescriptorMap:
    return DescriptorMap(ad.l2_normalize(features.tensor))


def _window_max(values: np.ndarray) -> np.ndarray:
    """Per-channel 3x3 window maximum with replicated borders (plain data)."""
    out = values.copy()
    h, w = values.shape[:2]
    for di in (-1, 0, 1):
        rows = np.clip(np.arange(h) + di, 0, h - 1)
        for dj in (-1, 0, 1):
            cols = np.clip(np.arange(w) + dj, 0, w - 1)
            out = np.maximum(out, values[np.ix_(rows, cols)])
    return out


def soft_scores(features: FeatureMap) -> ScoreMap:
    """Differentiable detection scores; nonnegative, summing to one."""
    f = features.tensor
    h, w, c = f.shape
    window_peak = ad.constant(_window_max(f.data))
    center = ad.exp(ad.sub(f, window_peak))
    den = None
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            term = ad.exp(ad.sub(ad.neighbor(f, di, dj), window_peak))
            den = term if den is None else ad.add(den, term)
    alpha = ad.div(center, den)
    channel_peak = ad.max_last(f, keepdims=True)
    beta = ad.mul(f, ad.broadcast_last(ad.guarded_reciprocal(channel_peak,
                                                             _BETA_EPS), c))
    gamma = ad.max_last(ad.mul(alpha, beta), keepdims=False)
    total = ad.sum_all(gamma)
    if total.data < _SCORE_EPS:
        # Fully degenerate map (identically zero features): fall back to a
        # uniform distribution so the sum-to-one contract still holds.
        return ScoreMap(ad.constant(np.full((h, w), 1.0 / (h * w))))
    return ScoreMap(ad.div(gamma, total))


def detect_hard(features: FeatureMap, scores: ScoreMap,
                top_k: int) -> list[Keypoint3D]:
    """Strict 3x3 score maxima as keypoints, highest score first.

    Borders compare against in-bounds neighbors only.  Returns fewer than
    ``top_k`` when the map has fewer strict maxima.
    """
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    s = scores.tensor.data
    h, w = s.shape
    descriptors = ad.l2_normalize(features.tensor).data
    found: list[Keypoint3D] = []
    for i in range(h):
        for j in range(w):
            value = s[i, j]
            strict = True
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    if di == 0 and dj == 0:
                        continue
                    ni, nj = i + di, j + dj
                    if 0 <= ni < h and 0 <= nj < w and s[ni, nj] >= value:
                        strict = False
                        break
                if not strict:
                    break
            if strict:
                found.append(Keypoint3D(
                    x=float(DOWNSAMPLE * j + DOWNSAMPLE // 2),
                    y=float(DOWNSAMPLE * i + DOWNSAMPLE // 2),
                    score=float(value),
                    descriptor=descriptors[i, j].copy(),
                    image_id=features.image_id,
                ))
    found.sort(key=lambda kp: (-kp.score, kp.y, kp.x))
    return found[:top_k]


def bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample a 2D raster with bilinear interpolation at pixel centers."""
    h, w = arr.shape
    r = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    c = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (r - r0)[:, None]
    fc = (c - c0)[None, :]
    top = arr[r0][:, c0] * (1 - fc) + arr[r0][:, c1] * fc
    bottom = arr[r1][:, c0] * (1 - fc) + arr[r1][:, c1] * fc
    return top * (1 - fr) + bottom * fr


def extract_multiscale(image: DepthImage, model: FeatureExtractor,
                       scales=DEFAULT_SCALES, top_k: int = 50,
                       max_scale_pixels: int = DEFAULT_MAX_SCALE_PIXELS,
                       image_id: str = "") -> list[Keypoint3D]:
    """Detect keypoints across resampled copies of the image and merge them.

    Positions come back in original-image pixels.  Detections within 4 px of
    a higher-scoring one are dropped, then the global top_k is kept.  Scales
    that would make the image smaller than the network minimum or larger than
    ``max_scale_pixels`` are skipped.
    """
    if not scales:
        raise ConfigError("scale list is empty")
    normalized = image.normalized()
    h, w = normalized.shape
    merged: list[Keypoint3D] = []
    seen_scales = set()
    for scale in scales:
        if scale in seen_scales:
            continue
        seen_scales.add(scale)
        sh, sw = int(round(h * scale)), int(round(w * scale))
        if sh < MIN_IMAGE_SIZE or sw < MIN_IMAGE_SIZE:
            continue
        if sh * sw > max_scale_pixels:
            continue
        raster = normalized if scale == 1.0 else bilinear_resize(normalized, sh, sw)
        fmap = FeatureMap(model.forward(raster), image_id, scale)
        kps = detect_hard(fmap, soft_scores(fmap), top_k)
        for kp in kps:
            merged.append(Keypoint3D(kp.x / scale, kp.y / scale, kp.score,
                                     kp.descriptor, image_id=image_id))
    merged.sort(key=lambda kp: (-kp.score, kp.y, kp.x))
    kept: list[Keypoint3D] = []
    for kp in merged:
        duplicate = any(math.hypot(kp.x - other.x, kp.y - other.y) <= DEDUP_RADIUS_PX
                        for other in kept)
        if not duplicate:
            kept.append(kp)
        if len(kept) == top_k:
            break
    return kept


def _format_float(v: float) -> str:
    return repr(float(v))


def save_keypoints(path, keypoints: list[Keypoint3D]) -> None:
    """Write keypoints as versioned delimited text.

    One record per line: image_id, x, y, score, world xyz (nan when the
    keypoint has not been lifted to 3D), then the descriptor values.
    """
    lines = [f"# depthfeat-keypoints {KEYPOINT_FORMAT_VERSION}",
             "# image_id x y score wx wy wz d..."]
    for kp in keypoints:
        if not kp.image_id or any(ch.isspace() for ch in kp.image_id):
            raise ValueError(f"bad image id for export: {kp.image_id!r}")
        world = kp.world if kp.world is not None else [math.nan] * 3
        fields = [kp.image_id,
                  _format_float(kp.x), _format_float(kp.y),
                  _format_float(kp.score),
                  *(_format_float(v) for v in world),
                  *(_format_float(v) for v in kp.descriptor)]
        lines.append(" ".join(fields))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_keypoints(path) -> list[Keypoint3D]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# depthfeat-keypoints "):
        raise ValueError(f"{path} is not a keypoint export")
    version = int(lines[0].rsplit(" ", 1)[1])
    if version != KEYPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported keypoint format version {version}")
    out: list[Keypoint3D] = []
    for line in lines[1:]:
        if not line or line.startswith("#"):
            continue
        fields = line.split(" ")
        image_id = fields[0]
        x, y, score = (float(v) for v in fields[1:4])
        world_vals = [float(v) for v in fields[4:7]]
        world = None if any(math.isnan(v) for v in world_vals) else world_vals
        descriptor = np.array([float(v) for v in fields[7:]])
        out.append(Keypoint3D(x, y, score, descriptor, world, image_id))
    return out
