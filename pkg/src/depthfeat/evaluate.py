"""Evaluation pipelines: repository matching, localization, synthesis report.

The frame sequence is split into reference and test images by index modulus.
Reference images populate a keypoint repository; test images are matched
against it for mean matching accuracy and localized with robust
perspective-n-point for pose accuracy.  A seeded random-assignment baseline
is reported alongside so headline numbers carry their own control.
"""

import math
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .data import Frame, Sequence
from .errors import (ConfigError, EmptySequenceError, InsufficientPointsError,
                     LocalizationFailure, SkipPair)
from . import autodiff as ad
from .featnet import (Keypoint3D, descriptor_map, extract_features,
                      extract_multiscale)
from .geometry import coarsen
from .matching import (MMA_THRESHOLDS_M, build_repository, lift_keypoint,
                       match_keypoints, mean_matching_accuracy,
                       KeypointRepository)
from .pnp import (LOCALIZATION_THRESHOLDS, localization_accuracy, pose_error,
                  ransac_pnp)
from .synthesis import save_grayscale, synthesize_view
from .train import ModelBundle, build_bundle, build_sequence, grid_factor

REPORT_VERSION = 1

# Stride between per-image robust-pose seeds, so image seeds never collide
# across run seeds.
_SEED_STRIDE = 1000003


def restore_bundle(cfg: RunConfig, checkpoint_path) -> ModelBundle:
    """Rebuild the configured models and load trained state into them."""
    bundle = build_bundle(cfg)
    state = ad.load_checkpoint(checkpoint_path)
    expected = set(bundle.params)
    found = set(state)
    if expected != found:
        missing = sorted(expected - found)
        extra = sorted(found - expected)
        raise ConfigError(f"checkpoint does not match the configured model "
                          f"(missing {missing}, unexpected {extra})")
    for name, entry in state.items():
        p = bundle.params[name]
        if entry["value"].shape != p.data.shape:
            raise ConfigError(f"checkpoint value {name} has shape "
                              f"{entry['value'].shape}, expected "
                              f"{p.data.shape}")
        p.data = entry["value"]
        p.m = entry["moment1"]
        p.v = entry["moment2"]
        p.steps = int(entry["steps"])
    return bundle


def split_frames(sequence: Sequence, cfg: RunConfig
                 ) -> tuple[list[Frame], list[Frame]]:
    """(reference frames, test frames) by index modulus.

    In self-match mode the test split is the reference split itself, which
    gives the sanity ceiling: every query should find its own twin.
    """
    ev = cfg.eval
    reference = [f for i, f in enumerate(sequence.frames)
                 if i % ev.reference_modulus == ev.reference_phase]
    if ev.self_match:
        test = list(reference)
    else:
        test = [f for i, f in enumerate(sequence.frames)
                if i % ev.reference_modulus != ev.reference_phase]
    return reference, test


def frame_id(frame: Frame) -> str:
    return f"{frame.index:06d}"


def detect_frame(frame: Frame, cfg: RunConfig, bundle: ModelBundle
                 ) -> list[Keypoint3D]:
    return extract_multiscale(frame.image, bundle.extractor,
                              scales=cfg.model.scales,
                              top_k=cfg.model.top_k,
                              image_id=frame_id(frame))


def build_reference_repository(frames: list[Frame], cfg: RunConfig,
                               bundle: ModelBundle) -> KeypointRepository:
    reference = [(f.image, detect_frame(f, cfg, bundle)) for f in frames]
    return build_repository(reference, top_k=cfg.model.top_k)


def mma_table(per_image_matches, thresholds=MMA_THRESHOLDS_M) -> dict:
    """{formatted threshold: percentage} over per-image world pairs."""
    return {f"{t:.2f}": mean_matching_accuracy(per_image_matches, t)
            for t in thresholds}


def evaluate_matching(cfg: RunConfig, bundle: ModelBundle,
                      sequence: Sequence | None = None) -> dict:
    """Matching, baseline and localization metrics as a key/value tree."""
    if sequence is None:
        sequence = build_sequence(cfg.dataset)
    reference, test = split_frames(sequence, cfg)
    if not reference:
        raise EmptySequenceError("reference split is empty")
    if not test:
        raise EmptySequenceError("test split is empty")
    repo = build_reference_repository(reference, cfg, bundle)

    baseline_rng = np.random.default_rng(cfg.seed)
    matched: list[list] = []
    random_assigned: list[list] = []
    pose_errors: list[tuple[float, float] | None] = []
    per_image: dict[str, dict] = {}

    for frame in test:
        kps = detect_frame(frame, cfg, bundle)
        lifted = [lift_keypoint(kp, frame.image) for kp in kps]
        queries = [kp for kp in lifted if kp is not None]

        pairs = []
        randoms = []
        if queries:
            matches = match_keypoints(queries, repo)
            pairs = [(queries[qi].world, repo.entries[ri].world)
                     for qi, ri, _ in matches]
            draw = baseline_rng.integers(len(repo.entries), size=len(queries))
            randoms = [(queries[qi].world, repo.entries[int(draw[qi])].world)
                       for qi in range(len(queries))]
        matched.append(pairs)
        random_assigned.append(randoms)

        error = localize_frame(frame, kps, repo, cfg)
        pose_errors.append(error)
        per_image[frame_id(frame)] = {
            "keypoints": len(kps),
            "located_queries": len(queries),
            "position_m": None if error is None else error[0],
            "orientation_deg": None if error is None else error[1],
        }

    report = {
        "report_version": REPORT_VERSION,
        "counts": {
            "reference_images": len(reference),
            "test_images": len(test),
            "repository_size": len(repo.entries),
        },
        "mma": mma_table(matched),
        "mma_random_baseline": mma_table(random_assigned),
        "localization": localization_table(pose_errors),
        "per_image": per_image,
    }
    return report


def localize_frame(frame: Frame, keypoints: list[Keypoint3D],
                   repo: KeypointRepository, cfg: RunConfig
                   ) -> tuple[float, float] | None:
    """Pose error of one test frame, or None when localization fails."""
    if not keypoints:
        return None
    matches = match_keypoints(keypoints, repo)
    correspondences = [(repo.entries[ri].world,
                        (keypoints[qi].x, keypoints[qi].y))
                       for qi, ri, _ in matches]
    cam = frame.image.camera
    try:
        estimate = ransac_pnp(correspondences, cam,
                              iterations=cfg.eval.ransac_iterations,
                              reproj_threshold_px=cfg.eval.reproj_threshold_px,
                              seed=cfg.seed * _SEED_STRIDE + frame.index)
    except (InsufficientPointsError, LocalizationFailure):
        return None
    return pose_error(estimate, cam)


def localization_table(pose_errors,
                       thresholds=LOCALIZATION_THRESHOLDS) -> dict:
    values = localization_accuracy(pose_errors, thresholds)
    return {f"{p:.1f}m_{a:.1f}deg": v
            for (p, a), v in zip(thresholds, values)}


@dataclass
class SynthesisArtifacts:
    """Raster planes and error metrics for one synthesized pair."""

    source: np.ndarray
    target: np.ndarray
    predicted: np.ndarray
    mask: np.ndarray
    masked_mae: float
    constant_baseline_mae: float


def synthesize_pair(cfg: RunConfig, bundle: ModelBundle, position: int,
                    sequence: Sequence | None = None) -> SynthesisArtifacts:
    """Predict the second view's coarse depth from the first view's features.

    ``position`` indexes the first frame; its partner sits ``offset`` frames
    later.  The constant-mean predictor (best-effort single value over the
    supervision mask) is the honesty baseline a trained network must beat.
    """
    if sequence is None:
        sequence = build_sequence(cfg.dataset)
    offset = cfg.training.offset
    if position < 0 or position + offset >= len(sequence):
        raise ConfigError(f"pair ({position}, +{offset}) is outside the "
                          f"{len(sequence)}-frame sequence")
    factor = grid_factor(cfg)
    img1 = sequence.frames[position].image
    img2 = sequence.frames[position + offset].image
    desc1 = descriptor_map(extract_features(img1, bundle.extractor))
    coarse1 = coarsen(img1, factor)
    coarse2 = coarsen(img2, factor)
    synth, mapping = synthesize_view(desc1.tensor, coarse1, coarse2,
                                     bundle.encoder, bundle.network)
    target = coarse2.normalized()
    mask = mapping.valid
    if not mask.any():
        raise SkipPair("no supervised cells in the selected pair")
    residual = np.abs(synth.data - target)[mask]
    constant = float(np.mean(target[mask]))
    baseline = np.abs(constant - target[mask])
    return SynthesisArtifacts(coarse1.normalized(), target, synth.data,
                              mask, float(np.mean(residual)),
                              float(np.mean(baseline)))


def synthesis_report(art: SynthesisArtifacts, position: int,
                     offset: int) -> dict:
    return {
        "report_version": REPORT_VERSION,
        "pair": {"first_frame": position, "offset": offset},
        "masked_mae": art.masked_mae,
        "constant_baseline_mae": art.constant_baseline_mae,
        "supervised_cells": int(art.mask.sum()),
        "grid_shape": list(art.target.shape),
    }


def save_synthesis_images(out_dir, art: SynthesisArtifacts) -> list[str]:
    """Write the four grayscale planes; returns the file names."""
    import os
    names = []
    planes = [("source_depth.png", art.source),
              ("target_depth.png", art.target),
              ("synthesized_depth.png", art.predicted),
              ("error_map.png", np.abs(art.predicted - art.target) * art.mask)]
    for name, plane in planes:
        save_grayscale(os.path.join(out_dir, name), plane)
        names.append(name)
    return names
