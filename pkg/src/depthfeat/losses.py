"""Training losses.

The matching loss compares descriptor fibers at corresponding cells of two
views.  For a correspondence (c1, c2), p is the positive descriptor distance
and n is the distance to the hardest negative: the closest descriptor among
all cells of the other grid lying outside an exclusion ball of radius tau
(in cells) around the true partner.  The per-pair contrastive term is
0.5 * p^2 + 0.5 * max(0, margin - n)^2, evaluated in both directions, and
pairs are combined as an average weighted by the product of the two detection
scores, with the weights inside the differentiation graph so the scores
themselves learn.  The view synthesis loss is a masked mean absolute error
against the coarse target depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import NoNegativeError, ShapeError, SkipPair

DEFAULT_TAU = 4.0
DEFAULT_MARGIN = 1.5
DEFAULT_ALPHA = 10.0
MAX_PAIRS_PER_STEP = 512

Cell = tuple[int, int]


def _tensor_of(x) -> ad.Tensor:
    if hasattr(x, "tensor"):
        return x.tensor
    if isinstance(x, ad.Tensor):
        return x
    return ad.constant(x)


@dataclass(eq=False)
class CorrespondenceBatch:
    """Everything the matching loss needs for one image pair."""

    d1: ad.Tensor
    d2: ad.Tensor
    s1: ad.Tensor
    s2: ad.Tensor
    pairs: list[tuple[Cell, Cell]]
    tau: float = DEFAULT_TAU
    margin: float = DEFAULT_MARGIN

    def __post_init__(self):
        self.d1 = _tensor_of(self.d1)
        self.d2 = _tensor_of(self.d2)
        self.s1 = _tensor_of(self.s1)
        self.s2 = _tensor_of(self.s2)
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if self.margin <= 0:
            raise ValueError(f"margin must be > 0, got {self.margin}")
        h1, w1 = self.d1.shape[:2]
        h2, w2 = self.d2.shape[:2]
        for (i1, j1), (i2, j2) in self.pairs:
            if not (0 <= i1 < h1 and 0 <= j1 < w1 and 0 <= i2 < h2 and 0 <= j2 < w2):
                raise ShapeError(f"correspondence (({i1},{j1}),({i2},{j2})) "
                                 f"out of bounds for grids {h1}x{w1}, {h2}x{w2}")


def positive_distance(d1, d2, c1: Cell, c2: Cell) -> ad.Tensor:
    """L2 distance between the two corresponding descriptor fibers."""
    d1, d2 = _tensor_of(d1), _tensor_of(d2)
    a = ad.gather_cells(d1, [c1[0]], [c1[1]])
    b = ad.gather_cells(d2, [c2[0]], [c2[1]])
    return ad.sum_all(ad.sqrt(ad.sum_last(ad.square(ad.sub(a, b)),
                                          keepdims=False)))


def _farthest_cell_distance(cell: Cell, shape: tuple[int, int]) -> float:
    h, w = shape
    return max(math.hypot(i - cell[0], j - cell[1])
               for i in (0, h - 1) for j in (0, w - 1))


def hardest_negative(d1, d2, c1: Cell, c2: Cell,
                     tau: float = DEFAULT_TAU) -> tuple[ad.Tensor, Cell]:
    """Closest grid-2 descriptor to D1[c1] outside the tau-ball around c2.

    Ties go to the first cell in row-major order.  The returned distance is
    differentiable through the selected fiber.
    """
    d1, d2 = _tensor_of(d1), _tensor_of(d2)
    h, w = d2.shape[:2]
    anchor = d1.data[c1[0], c1[1]]
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    eligible = (rows - c2[0]) ** 2 + (cols - c2[1]) ** 2 > tau * tau
    if not np.any(eligible):
        raise NoNegativeError(f"no cell outside radius {tau} of {c2} in a "
                              f"{h}x{w} grid")
    dist = np.sqrt(np.sum((d2.data - anchor) ** 2, axis=-1))
    dist[~eligible] = np.inf
    flat = int(np.argmin(dist))
    k = (flat // w, flat % w)
    a = ad.gather_cells(d1, [c1[0]], [c1[1]])
    b = ad.gather_cells(d2, [k[0]], [k[1]])
    out = ad.sum_all(ad.sqrt(ad.sum_last(ad.square(ad.sub(a, b)),
                                         keepdims=False)))
    return out, k


def contrastive(p: ad.Tensor, n: ad.Tensor, margin: float = DEFAULT_MARGIN) -> ad.Tensor:
    """0.5 p^2 + 0.5 max(0, margin - n)^2, elementwise over matching shapes."""
    hinge = ad.relu(ad.sub(ad.constant(margin), n))
    return ad.add(ad.scale(ad.square(p), 0.5), ad.scale(ad.square(hinge), 0.5))


def _eligible_both_ways(pair, shape1, shape2, tau) -> bool:
    (c1, c2) = pair
    return (_farthest_cell_distance(c2, shape2) > tau
            and _farthest_cell_distance(c1, shape1) > tau)


def _hardest_negatives_bulk(anchors: np.ndarray, grid: np.ndarray,
                            centers: list[Cell], tau: float) -> np.ndarray:
    """Row-major-first argmin cells outside each center's tau-ball."""
    h, w, f = grid.shape
    flat = grid.reshape(-1, f)
    # Squared distances via the expansion; selection only, no gradients here.
    d2 = (np.sum(anchors ** 2, axis=1)[:, None] + np.sum(flat ** 2, axis=1)[None, :]
          - 2.0 * anchors @ flat.T)
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    out = np.zeros((len(centers), 2), dtype=np.int64)
    for idx, center in enumerate(centers):
        ineligible = ((rows - center[0]) ** 2 + (cols - center[1]) ** 2
                      <= tau * tau).reshape(-1)
        scores = d2[idx].copy()
        scores[ineligible] = np.inf
        k = int(np.argmin(scores))
        out[idx] = (k // w, k % w)
    return out


def _row_norms(x: ad.Tensor) -> ad.Tensor:
    return ad.sqrt(ad.sum_last(ad.square(x), keepdims=False))


def contrastive_matching_loss(batch: CorrespondenceBatch,
                              rng: np.random.Generator | None = None,
                              max_pairs: int = MAX_PAIRS_PER_STEP) -> ad.Tensor:
    """Score-weighted average of two-directional contrastive terms.

    Pairs without an eligible negative in either direction are dropped before
    anything else; if more than ``max_pairs`` remain, a seeded uniform sample
    keeps the step tractable.  Raises a skip-pair signal when nothing usable
    is left (including the degenerate case of all-zero score weights).
    """
    shape1 = batch.d1.shape[:2]
    shape2 = batch.d2.shape[:2]
    pairs = [p for p in batch.pairs
             if _eligible_both_ways(p, shape1, shape2, batch.tau)]
    if not pairs:
        raise SkipPair("no correspondences with eligible negatives")
    if len(pairs) > max_pairs:
        if rng is None:
            rng = np.random.default_rng(0)
        chosen = np.sort(rng.choice(len(pairs), size=max_pairs, replace=False))
        pairs = [pairs[i] for i in chosen]

    r1 = np.array([c1[0] for c1, _ in pairs])
    q1 = np.array([c1[1] for c1, _ in pairs])
    r2 = np.array([c2[0] for _, c2 in pairs])
    q2 = np.array([c2[1] for _, c2 in pairs])

    neg2 = _hardest_negatives_bulk(batch.d1.data[r1, q1], batch.d2.data,
                                   [c2 for _, c2 in pairs], batch.tau)
    neg1 = _hardest_negatives_bulk(batch.d2.data[r2, q2], batch.d1.data,
                                   [c1 for c1, _ in pairs], batch.tau)

    a1 = ad.gather_cells(batch.d1, r1, q1)
    a2 = ad.gather_cells(batch.d2, r2, q2)
    n2 = ad.gather_cells(batch.d2, neg2[:, 0], neg2[:, 1])
    n1 = ad.gather_cells(batch.d1, neg1[:, 0], neg1[:, 1])

    p = _row_norms(ad.sub(a1, a2))
    n_fwd = _row_norms(ad.sub(a1, n2))
    n_bwd = _row_norms(ad.sub(a2, n1))
    per_pair = ad.add(contrastive(p, n_fwd, batch.margin),
                      contrastive(p, n_bwd, batch.margin))

    weights = ad.mul(ad.gather_cells(batch.s1, r1, q1),
                     ad.gather_cells(batch.s2, r2, q2))
    total_weight = ad.sum_all(weights)
    if total_weight.data <= 0.0:
        raise SkipPair("correspondence score weights sum to zero")
    return ad.div(ad.sum_all(ad.mul(weights, per_pair)), total_weight)


def view_synthesis_loss(synth: ad.Tensor, target: np.ndarray,
                        frustum_mask: np.ndarray) -> ad.Tensor:
    """Mean absolute synthesis error over the valid-frustum cells."""
    synth = _tensor_of(synth)
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(frustum_mask, dtype=bool)
    if synth.shape != target.shape or synth.shape != mask.shape:
        raise ShapeError(f"shape mismatch: synth {synth.shape}, "
                         f"target {target.shape}, mask {mask.shape}")
    rows, cols = np.nonzero(mask)
    if len(rows) == 0:
        raise SkipPair("empty frustum mask")
    residual = ad.absolute(ad.sub(synth, ad.constant(target)))
    return ad.mean_all(ad.gather_cells(residual, rows, cols))


def total_loss(l_cm: ad.Tensor, l_v: ad.Tensor, alpha: float = DEFAULT_ALPHA) -> ad.Tensor:
    """Matching loss plus alpha-weighted synthesis loss."""
    return ad.add(l_cm, ad.scale(l_v, alpha))
