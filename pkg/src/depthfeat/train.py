"""The training loop: paired-view sampling, joint objective, Adam updates.

One step samples a frame pair at the configured offset, runs the extractor on
both views, supervises descriptors and scores with the contrastive matching
objective, optionally adds the depth-synthesis objective in both directions,
and applies one Adam update.  Everything is driven by a single seeded random
stream so a config plus a seed reproduces the run exactly, log line for log
line and checkpoint byte for byte.
"""

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import DatasetConfig, RunConfig, validate_config
from .data import (Sequence, load_7scenes_sequence, load_tum_sequence,
                   render_sequence, sample_pairs)
from .errors import EmptySequenceError, SkipPair, TrainingAborted
from .featnet import FeatureExtractor, descriptor_map, extract_features, soft_scores
from .geometry import DepthImage, coarsen, correspondences_from_coarse
from .losses import CorrespondenceBatch, contrastive_matching_loss, total_loss, view_synthesis_loss
from .scenes import SyntheticScene
from .synthesis import SynthesisNetwork, TransformEncoder, synthesize_view


def build_sequence(ds: DatasetConfig) -> Sequence:
    """Materialize the configured frame source as an in-memory sequence."""
    if ds.kind == "synthetic":
        scene = SyntheticScene.generate(ds.scene_seed)
        return render_sequence(scene, ds.n_frames, (ds.height, ds.width),
                               ds.intrinsics(), ds.max_depth)
    if ds.kind == "tum":
        return load_tum_sequence(ds.path, ds.intrinsics(),
                                 max_depth=ds.max_depth)
    return load_7scenes_sequence(ds.path, ds.intrinsics(),
                                 max_depth=ds.max_depth)


@dataclass
class ModelBundle:
    """The three trainable components and their pooled parameters."""

    extractor: FeatureExtractor
    encoder: TransformEncoder
    network: SynthesisNetwork
    params: dict[str, ad.Parameter] = field(init=False)

    def __post_init__(self):
        self.params = {**self.extractor.parameters(),
                       **self.encoder.parameters(),
                       **self.network.parameters()}


def build_bundle(cfg: RunConfig) -> ModelBundle:
    """Fresh seeded models; component seeds are derived from the run seed."""
    extractor = FeatureExtractor(cfg.model.feature_dim,
                                 cfg.model.stage_channels, seed=cfg.seed)
    encoder = TransformEncoder(seed=cfg.seed + 1)
    network = SynthesisNetwork(cfg.model.feature_dim, seed=cfg.seed + 2)
    return ModelBundle(extractor, encoder, network)


@dataclass
class StepRecord:
    """Outcome of one training step, as logged."""

    step: int
    skipped: bool
    reason: str = ""
    l_cm: float = math.nan
    l_v: float = math.nan
    total: float = math.nan

    def format(self) -> str:
        if self.skipped:
            return f"step={self.step} skipped reason={self.reason}"
        return (f"step={self.step} l_cm={self.l_cm!r} l_v={self.l_v!r} "
                f"total={self.total!r}")


def grid_factor(cfg: RunConfig) -> int:
    """Full-resolution pixels per feature cell (one halving per stage)."""
    return 2 ** len(cfg.model.stage_channels)


class Trainer:
    """Stateful loop over sampled pairs with skip accounting.

    A pair can be unusable (no shared surface, no eligible negatives, empty
    synthesis support).  Such steps are logged and skipped; a long enough
    run of consecutive skips aborts with a diagnosis instead of spinning.
    """

    def __init__(self, cfg: RunConfig, sequence: Sequence | None = None):
        validate_config(cfg)
        self.cfg = cfg
        self.sequence = build_sequence(cfg.dataset) if sequence is None else sequence
        self.pairs = sample_pairs(self.sequence, cfg.training.offset)
        if cfg.training.steps > 0 and not self.pairs:
            raise EmptySequenceError(
                f"no frame pairs at offset {cfg.training.offset} in a "
                f"sequence of {len(self.sequence)} frames")
        self.bundle = build_bundle(cfg)
        self.rng = np.random.default_rng(cfg.seed)
        self.records: list[StepRecord] = []
        self.consecutive_skips = 0
        self.skip_reasons: Counter[str] = Counter()
        self.factor = grid_factor(cfg)
        self._coarse_cache: dict[int, DepthImage] = {}
        self._gt_cache: dict[tuple[int, int], list] = {}

    @property
    def params(self) -> dict[str, ad.Parameter]:
        return self.bundle.params

    def _coarse(self, position: int) -> DepthImage:
        if position not in self._coarse_cache:
            image = self.sequence.frames[position].image
            self._coarse_cache[position] = coarsen(image, self.factor)
        return self._coarse_cache[position]

    def _synthesis_term(self, feats, coarse_src, coarse_tgt) -> ad.Tensor:
        synth, mapping = synthesize_view(feats, coarse_src, coarse_tgt,
                                         self.bundle.encoder,
                                         self.bundle.network)
        return view_synthesis_loss(synth, coarse_tgt.normalized(),
                                   mapping.valid)

    def step_losses(self, position1: int, position2: int
                    ) -> tuple[ad.Tensor, ad.Tensor | None, ad.Tensor]:
        """(matching loss, synthesis loss or None, total) for one pair."""
        cfg = self.cfg
        img1 = self.sequence.frames[position1].image
        img2 = self.sequence.frames[position2].image
        feat1 = extract_features(img1, self.bundle.extractor)
        feat2 = extract_features(img2, self.bundle.extractor)
        coarse1 = self._coarse(position1)
        coarse2 = self._coarse(position2)

        key = (position1, position2)
        if key not in self._gt_cache:
            self._gt_cache[key] = correspondences_from_coarse(
                coarse1, coarse2, cfg.loss.occlusion_eps)
        gt = self._gt_cache[key]
        if not gt:
            raise SkipPair("no ground-truth correspondences")
        desc1 = descriptor_map(feat1)
        desc2 = descriptor_map(feat2)
        batch = CorrespondenceBatch(desc1, desc2,
                                    soft_scores(feat1), soft_scores(feat2),
                                    gt, tau=cfg.loss.tau,
                                    margin=cfg.loss.margin)
        l_cm = contrastive_matching_loss(batch, self.rng,
                                         cfg.loss.max_pairs)

        if not cfg.training.use_vsm:
            return l_cm, None, l_cm

        # The synthesis branch consumes the unit-norm descriptor fibers, so
        # its input scale stays fixed while raw feature magnitudes drift.
        directions = [(desc1.tensor, coarse1, coarse2)]
        if cfg.training.symmetric_vsm:
            directions.append((desc2.tensor, coarse2, coarse1))
        terms = []
        for feats, src, tgt in directions:
            try:
                terms.append(self._synthesis_term(feats, src, tgt))
            except SkipPair:
                continue
        if not terms:
            raise SkipPair("view synthesis had no supervised cells")
        l_v = terms[0]
        if len(terms) == 2:
            l_v = ad.scale(ad.add(terms[0], terms[1]), 0.5)
        return l_cm, l_v, total_loss(l_cm, l_v, cfg.loss.alpha)

    def _abort_threshold(self) -> int:
        return max(1, self.cfg.training.steps // 2)

    def run_step(self, step: int) -> StepRecord:
        """Sample a pair, backpropagate, and record the outcome.

        ``step`` is 1-based.  Gradient accumulation windows are aligned to
        step numbers; the Adam update fires on the last step of each window
        provided at least one pair in the window contributed a gradient.
        """
        cfg = self.cfg
        window = cfg.optimizer.accumulation
        if (step - 1) % window == 0:
            ad.zero_gradients(self.params.values())
            self._window_contributions = 0

        pair = self.pairs[int(self.rng.integers(len(self.pairs)))]
        try:
            l_cm, l_v, total = self.step_losses(pair.index,
                                                pair.index + pair.offset)
        except SkipPair as exc:
            record = StepRecord(step, True, str(exc))
            self.consecutive_skips += 1
            self.skip_reasons[str(exc)] += 1
            if self.consecutive_skips > self._abort_threshold():
                raise TrainingAborted(
                    f"{self.consecutive_skips} consecutive pairs skipped; "
                    f"reasons: {dict(self.skip_reasons)}; check the frame "
                    f"overlap (offset {cfg.training.offset}) and "
                    f"loss.occlusion_eps ({cfg.loss.occlusion_eps})"
                ) from exc
        else:
            contribution = total if window == 1 else ad.scale(total, 1.0 / window)
            contribution.backward()
            self._window_contributions += 1
            self.consecutive_skips = 0
            record = StepRecord(step, False, "", float(l_cm.data),
                                float(l_v.data) if l_v is not None else math.nan,
                                float(total.data))

        last_of_window = step % window == 0 or step == cfg.training.steps
        if last_of_window and self._window_contributions > 0:
            ad.adam_step(self.params.values(), cfg.optimizer.learning_rate,
                         cfg.optimizer.beta1, cfg.optimizer.beta2,
                         cfg.optimizer.epsilon)
        self.records.append(record)
        return record


def run_training(cfg: RunConfig, checkpoint_path, log_path=None,
                 progress=None) -> list[StepRecord]:
    """Train per the config; write the checkpoint and optional loss log.

    With zero configured steps the written checkpoint holds the untouched
    initialization.  ``progress`` (if given) receives each log line.
    """
    trainer = Trainer(cfg)
    every = cfg.training.checkpoint_every
    log_lines: list[str] = []

    def emit(line: str) -> None:
        log_lines.append(line)
        if progress is not None:
            progress(line)

    try:
        for step in range(1, cfg.training.steps + 1):
            record = trainer.run_step(step)
            emit(record.format())
            if every > 0 and step % every == 0:
                ad.save_checkpoint(checkpoint_path, trainer.params)
    finally:
        if log_path is not None:
            with open(log_path, "w") as fh:
                for line in log_lines:
                    fh.write(line + "\n")
    ad.save_checkpoint(checkpoint_path, trainer.params)
    return trainer.records
