"""Cross-view depth synthesis used as an auxiliary training signal.

Given features of view 1 and the relative camera motion, this module predicts
the normalized coarse depth of view 2.  The pipeline warps the view-1 features
and normalized depth into view 2 through the cell mapping grid, assembles a
17-channel grid of transformation parameters, encodes it per cell with a small
residual MLP (the transform encoder), and decodes a depth raster with a
convolutional network that sees the warped features, their global average,
and the transform code.  A sigmoid head keeps predictions inside [0, 1].

The target view's depth values enter only through the mapping grid; the
networks themselves never receive them, so the prediction cannot shortcut by
copying its own supervision signal.
"""

from __future__ import annotations

import math

import numpy as np
from PIL import Image

from . import autodiff as ad
from .errors import ShapeError, SkipPair
from .featnet import FeatureMap
from .geometry import (DepthImage, GridPositions, MappingGrid,
                       compute_mapping_grid, relative_pose)

TRANSFORM_CHANNELS = 17
CODE_WIDTH = 96


def _tensor_of(x) -> ad.Tensor:
    return x.tensor if hasattr(x, "tensor") else x


def build_transform_grid(warped_depth, positions: GridPositions,
                         mapping: MappingGrid,
                         rel_pose: tuple[np.ndarray, np.ndarray],
                         source_shape: tuple[int, int] | None = None) -> ad.Tensor:
    """Assemble the h x w x 17 grid of per-cell transformation parameters.

    Channel layout: [warped normalized depth (1)] then [normalized target cell
    position (2)] then [normalized mapping coordinates (2), zeroed where the
    mapping is invalid] then [flattened rotation (9) and translation (3),
    identical across cells].  Positions and mapping coordinates are cell
    centers divided by the grid extents, so both land in (0, 1) and coincide
    when the mapping is the identity.  ``source_shape`` sets the extent used
    for mapping coordinates; it defaults to the grid's own shape.
    """
    if isinstance(warped_depth, np.ndarray):
        warped_depth = ad.constant(warped_depth)
    h, w = mapping.valid.shape
    if warped_depth.shape[:2] != (h, w) or positions.coords.shape[:2] != (h, w):
        raise ShapeError(f"grid shapes disagree: depth {warped_depth.shape}, "
                         f"positions {positions.coords.shape[:2]}, "
                         f"mapping {(h, w)}")
    if warped_depth.ndim == 2:
        warped_depth = ad.expand_last(warped_depth)
    elif warped_depth.ndim != 3 or warped_depth.shape[2] != 1:
        raise ShapeError(f"warped depth must be h x w or h x w x 1, "
                         f"got {warped_depth.shape}")

    extent = source_shape if source_shape is not None else (h, w)
    mapped = (mapping.coords + 0.5) / np.array(extent, dtype=np.float64)
    mapped = np.where(mapping.valid[:, :, None], mapped, 0.0)

    rotation, translation = rel_pose
    pose = np.concatenate([np.asarray(rotation, dtype=np.float64).reshape(9),
                           np.asarray(translation, dtype=np.float64).reshape(3)])
    pose_plane = np.broadcast_to(pose, (h, w, 12)).copy()

    return ad.concat_last([warped_depth,
                           ad.constant(positions.normalized()),
                           ad.constant(mapped),
                           ad.constant(pose_plane)])


# Residual branches start at a quarter of the He scale so stacked blocks
# keep activations near the scale of their input instead of compounding it;
# unlike a zero init, every weight still gets a gradient on the first step.
RESIDUAL_INIT_SCALE = 0.25


def _he_affine(rng, d_in: int, d_out: int, prefix: str,
               params: dict[str, ad.Parameter], scale: float = 1.0) -> None:
    weight = rng.normal(0.0, scale * math.sqrt(2.0 / d_in),
                        size=(d_in, d_out))
    params[f"{prefix}.weight"] = ad.Parameter(weight, f"{prefix}.weight")
    params[f"{prefix}.bias"] = ad.Parameter(np.zeros(d_out), f"{prefix}.bias")


def _he_conv(rng, k: int, c_in: int, c_out: int, prefix: str,
             params: dict[str, ad.Parameter], scale: float = 1.0) -> None:
    fan_in = k * k * c_in
    kernel = rng.normal(0.0, scale * math.sqrt(2.0 / fan_in),
                        size=(k, k, c_in, c_out))
    params[f"{prefix}.kernel"] = ad.Parameter(kernel, f"{prefix}.kernel")
    params[f"{prefix}.bias"] = ad.Parameter(np.zeros(c_out), f"{prefix}.bias")


def _output_affine(rng, d_in: int, prefix: str,
                   params: dict[str, ad.Parameter]) -> None:
    """Deliberately small final-layer init (std 1/d_in).

    The prediction passes through a sigmoid; starting its pre-activation
    well inside the linear regime keeps the gradient alive no matter how
    wide the trunk's activations are.
    """
    weight = rng.normal(0.0, 1.0 / d_in, size=(d_in, 1))
    params[f"{prefix}.weight"] = ad.Parameter(weight, f"{prefix}.weight")
    params[f"{prefix}.bias"] = ad.Parameter(np.zeros(1), f"{prefix}.bias")


class TransformEncoder:
    """Per-cell residual MLP lifting the 17 raw channels to a 96-wide code.

    One affine+relu projection, then two residual blocks of
    [affine, relu, affine] + skip, relu.  Every cell is mapped by the same
    weights, so the encoding is equivariant to any spatial shuffling.
    """

    def __init__(self, code_width: int = CODE_WIDTH, seed: int = 0):
        self.code_width = code_width
        rng = np.random.default_rng(seed)
        self.params: dict[str, ad.Parameter] = {}
        _he_affine(rng, TRANSFORM_CHANNELS, code_width, "gte.input", self.params)
        for block in (1, 2):
            _he_affine(rng, code_width, code_width, f"gte.block{block}a",
                       self.params)
            _he_affine(rng, code_width, code_width, f"gte.block{block}b",
                       self.params, scale=RESIDUAL_INIT_SCALE)

    def parameters(self) -> dict[str, ad.Parameter]:
        return dict(self.params)

    def _affine(self, x: ad.Tensor, name: str) -> ad.Tensor:
        return ad.linear(x, self.params[f"{name}.weight"],
                         self.params[f"{name}.bias"])

    def forward(self, grid: ad.Tensor) -> ad.Tensor:
        if grid.shape[-1] != TRANSFORM_CHANNELS:
            raise ShapeError(f"expected {TRANSFORM_CHANNELS} input channels, "
                             f"got {grid.shape[-1]}")
        x = ad.relu(self._affine(grid, "gte.input"))
        for block in (1, 2):
            y = ad.relu(self._affine(x, f"gte.block{block}a"))
            y = self._affine(y, f"gte.block{block}b")
            x = ad.relu(ad.add(x, y))
        return x


class SynthesisNetwork:
    """Decodes warped features plus the transform code into depth in (0, 1).

    Global average pooling of the warped features is broadcast back and
    concatenated (2f channels), squeezed by two 1x1 maps back to f channels
    (relu after the first), concatenated with the transform code, refined by
    three channel-preserving residual blocks of [3x3 conv, relu, 3x3 conv]
    + skip, relu, and collapsed to one channel by a 1x1 head with a sigmoid.
    """

    def __init__(self, feature_dim: int, code_width: int = CODE_WIDTH,
                 seed: int = 0):
        self.feature_dim = feature_dim
        self.code_width = code_width
        self.body_width = feature_dim + code_width
        rng = np.random.default_rng(seed)
        self.params: dict[str, ad.Parameter] = {}
        _he_affine(rng, 2 * feature_dim, feature_dim, "dsn.squeeze1",
                   self.params)
        _he_affine(rng, feature_dim, feature_dim, "dsn.squeeze2", self.params)
        for block in (1, 2, 3):
            _he_conv(rng, 3, self.body_width, self.body_width,
                     f"dsn.block{block}a", self.params)
            _he_conv(rng, 3, self.body_width, self.body_width,
                     f"dsn.block{block}b", self.params,
                     scale=RESIDUAL_INIT_SCALE)
        _output_affine(rng, self.body_width, "dsn.head", self.params)

    def parameters(self) -> dict[str, ad.Parameter]:
        return dict(self.params)

    def _affine(self, x: ad.Tensor, name: str) -> ad.Tensor:
        return ad.linear(x, self.params[f"{name}.weight"],
                         self.params[f"{name}.bias"])

    def _conv(self, x: ad.Tensor, name: str) -> ad.Tensor:
        out = ad.conv2d(x, self.params[f"{name}.kernel"], 1, "same")
        return ad.add_channel_bias(out, self.params[f"{name}.bias"])

    def forward(self, warped_features: ad.Tensor, code: ad.Tensor) -> ad.Tensor:
        if warped_features.ndim != 3 or warped_features.shape[2] != self.feature_dim:
            raise ShapeError(f"expected h x w x {self.feature_dim} features, "
                             f"got {warped_features.shape}")
        if code.shape != warped_features.shape[:2] + (self.code_width,):
            raise ShapeError(f"code shape {code.shape} does not match "
                             f"features {warped_features.shape[:2]}")
        h, w, _ = warped_features.shape
        pooled = ad.tile_spatial(ad.global_average_pool(warped_features), h, w)
        x = ad.concat_last([warped_features, pooled])
        x = ad.relu(self._affine(x, "dsn.squeeze1"))
        x = self._affine(x, "dsn.squeeze2")
        x = ad.concat_last([x, code])
        for block in (1, 2, 3):
            y = ad.relu(self._conv(x, f"dsn.block{block}a"))
            y = self._conv(y, f"dsn.block{block}b")
            x = ad.relu(ad.add(x, y))
        out = ad.sigmoid(self._affine(x, "dsn.head"))
        return ad.sum_last(out, keepdims=False)


def synthesize_from_mapping(features, depth_normalized: np.ndarray,
                            mapping: MappingGrid,
                            rel_pose: tuple[np.ndarray, np.ndarray],
                            encoder: TransformEncoder,
                            network: SynthesisNetwork) -> ad.Tensor:
    """Predict the target view's normalized depth from a fixed mapping grid.

    The target view contributes nothing here beyond ``mapping``; cells the
    mapping marks invalid feed zero features and depth into the networks.
    """
    tensor = _tensor_of(features)
    if not np.any(mapping.valid):
        raise SkipPair("mapping grid has no valid cell")
    h, w = mapping.valid.shape
    depth_plane = ad.constant(np.asarray(depth_normalized,
                                         dtype=np.float64)[:, :, None])
    warped_depth = ad.bilinear_sample(depth_plane, mapping.coords, mapping.valid)
    warped_features = ad.bilinear_sample(tensor, mapping.coords, mapping.valid)
    positions = GridPositions.for_shape(h, w)
    grid = build_transform_grid(warped_depth, positions, mapping, rel_pose,
                                source_shape=tensor.shape[:2])
    return network.forward(warped_features, encoder.forward(grid))


def synthesize_view(features, source_coarse: DepthImage,
                    target_coarse: DepthImage, encoder: TransformEncoder,
                    network: SynthesisNetwork) -> tuple[ad.Tensor, MappingGrid]:
    """Full synthesis of the target coarse depth from source-view features.

    ``features`` is the source view's dense feature map at coarse resolution;
    both coarse images carry their feature-scale cameras.  Returns the
    prediction and the mapping grid, whose validity mask is the supervision
    mask for the synthesis loss.  Raises a skip-pair signal when no target
    cell sees the source frustum.
    """
    tensor = _tensor_of(features)
    if tensor.shape[:2] != source_coarse.depth.shape:
        raise ShapeError(f"features {tensor.shape[:2]} do not match the "
                         f"source grid {source_coarse.depth.shape}")
    mapping = compute_mapping_grid(target_coarse, target_coarse.camera,
                                   source_coarse.camera, tensor.shape[:2])
    pose = relative_pose(source_coarse.camera, target_coarse.camera)
    synth = synthesize_from_mapping(tensor, source_coarse.normalized(),
                                    mapping, pose, encoder, network)
    return synth, mapping


def to_grayscale(values: np.ndarray) -> np.ndarray:
    """Quantize a [0, 1] raster to 8-bit grayscale."""
    arr = np.asarray(values, dtype=np.float64)
    return np.round(255.0 * np.clip(arr, 0.0, 1.0)).astype(np.uint8)


def save_grayscale(path, values: np.ndarray) -> None:
    """Write a [0, 1] raster as an 8-bit grayscale image file."""
    Image.fromarray(to_grayscale(values), mode="L").save(path)
