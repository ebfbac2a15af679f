"""Tests for the contrastive matching and view synthesis losses."""

import math

import numpy as np
import pytest

from depthfeat import autodiff as ad
from depthfeat import losses
from depthfeat.errors import NoNegativeError, ShapeError, SkipPair

from helpers import central_difference_entries, relative_error, sample_indices

FD_STEP = 1e-4
GRAD_TOL = 1e-3


def hardest_negative_reference(grid1, grid2, c1, c2, tau):
    """Exhaustive per-cell scan, strict improvement keeps row-major firsts."""
    anchor = grid1[c1[0], c1[1]]
    best = None
    best_cell = None
    h, w = grid2.shape[:2]
    for i in range(h):
        for j in range(w):
            if math.hypot(i - c2[0], j - c2[1]) <= tau:
                continue
            d = float(np.linalg.norm(grid2[i, j] - anchor))
            if best is None or d < best:
                best = d
                best_cell = (i, j)
    return best, best_cell


def contrastive_reference(p, n, margin):
    return 0.5 * p * p + 0.5 * max(0.0, margin - n) ** 2


def matching_loss_reference(d1, d2, s1, s2, pairs, tau, margin):
    """Plain-numpy weighted average over both contrastive directions."""
    num = 0.0
    den = 0.0
    for c1, c2 in pairs:
        n_fwd, _ = hardest_negative_reference(d1, d2, c1, c2, tau)
        n_bwd, _ = hardest_negative_reference(d2, d1, c2, c1, tau)
        if n_fwd is None or n_bwd is None:
            continue
        p = float(np.linalg.norm(d1[c1[0], c1[1]] - d2[c2[0], c2[1]]))
        lc = (contrastive_reference(p, n_fwd, margin)
              + contrastive_reference(p, n_bwd, margin))
        weight = s1[c1[0], c1[1]] * s2[c2[0], c2[1]]
        num += weight * lc
        den += weight
    if den == 0.0:
        return None
    return num / den


def random_batch(rng, h1=6, w1=6, h2=6, w2=6, f=4, n_pairs=5, tau=2.0,
                 margin=1.5, uniform_scores=False):
    d1 = rng.normal(size=(h1, w1, f))
    d2 = rng.normal(size=(h2, w2, f))
    if uniform_scores:
        s1 = np.full((h1, w1), 1.0 / (h1 * w1))
        s2 = np.full((h2, w2), 1.0 / (h2 * w2))
    else:
        s1 = rng.uniform(0.1, 1.0, size=(h1, w1))
        s2 = rng.uniform(0.1, 1.0, size=(h2, w2))
        s1 /= s1.sum()
        s2 /= s2.sum()
    pairs = []
    for _ in range(n_pairs):
        pairs.append(((int(rng.integers(h1)), int(rng.integers(w1))),
                      (int(rng.integers(h2)), int(rng.integers(w2)))))
    batch = losses.CorrespondenceBatch(
        d1=ad.Tensor(d1, requires_grad=True),
        d2=ad.Tensor(d2, requires_grad=True),
        s1=ad.Tensor(s1, requires_grad=True),
        s2=ad.Tensor(s2, requires_grad=True),
        pairs=pairs, tau=tau, margin=margin)
    return batch, (d1, d2, s1, s2, pairs)


class TestBatchValidation:
    def test_out_of_bounds_pair_rejected(self):
        d = ad.Tensor(np.zeros((4, 4, 2)))
        s = ad.Tensor(np.full((4, 4), 1 / 16))
        with pytest.raises(ShapeError):
            losses.CorrespondenceBatch(d1=d, d2=d, s1=s, s2=s,
                                       pairs=[((0, 0), (4, 0))])

    def test_negative_tau_rejected(self):
        d = ad.Tensor(np.zeros((4, 4, 2)))
        s = ad.Tensor(np.full((4, 4), 1 / 16))
        with pytest.raises(ValueError):
            losses.CorrespondenceBatch(d1=d, d2=d, s1=s, s2=s,
                                       pairs=[((0, 0), (0, 0))], tau=-1.0)

    def test_nonpositive_margin_rejected(self):
        d = ad.Tensor(np.zeros((4, 4, 2)))
        s = ad.Tensor(np.full((4, 4), 1 / 16))
        with pytest.raises(ValueError):
            losses.CorrespondenceBatch(d1=d, d2=d, s1=s, s2=s,
                                       pairs=[((0, 0), (0, 0))], margin=0.0)


class TestPositiveDistance:
    def test_identical_fibers_give_zero(self):
        data = np.random.default_rng(0).normal(size=(3, 3, 5))
        d = ad.Tensor(data)
        out = losses.positive_distance(d, d, (1, 2), (1, 2))
        assert out.data == pytest.approx(0.0, abs=1e-12)

    def test_known_distance(self):
        d1 = np.zeros((2, 2, 3))
        d2 = np.zeros((2, 2, 3))
        d1[0, 0] = [1.0, 0.0, 0.0]
        d2[1, 1] = [0.0, 1.0, 0.0]
        out = losses.positive_distance(ad.Tensor(d1), ad.Tensor(d2),
                                       (0, 0), (1, 1))
        assert out.data == pytest.approx(math.sqrt(2.0), rel=1e-12)

    def test_matches_numpy_norm(self):
        rng = np.random.default_rng(7)
        d1 = rng.normal(size=(4, 5, 6))
        d2 = rng.normal(size=(3, 4, 6))
        out = losses.positive_distance(ad.Tensor(d1), ad.Tensor(d2),
                                       (2, 4), (0, 1))
        expected = np.linalg.norm(d1[2, 4] - d2[0, 1])
        assert out.data == pytest.approx(expected, rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        base1 = rng.normal(size=(3, 3, 4))
        base2 = rng.normal(size=(3, 3, 4))

        t1 = ad.Tensor(base1, requires_grad=True)
        t2 = ad.Tensor(base2, requires_grad=True)
        out = losses.positive_distance(t1, t2, (1, 1), (2, 0))
        out.backward()

        def fn(x):
            return float(losses.positive_distance(
                ad.Tensor(x), ad.Tensor(base2), (1, 1), (2, 0)).data)

        idx = sample_indices(base1.shape, 8, rng)
        numeric = central_difference_entries(fn, base1, idx, FD_STEP)
        analytic = np.array([t1.grad[i] for i in idx])
        assert relative_error(analytic, numeric) < GRAD_TOL


class TestHardestNegative:
    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            h2 = int(rng.integers(3, 10))
            w2 = int(rng.integers(3, 10))
            f = int(rng.integers(2, 6))
            tau = float(rng.uniform(0.0, 4.0))
            d1 = rng.normal(size=(4, 4, f))
            d2 = rng.normal(size=(h2, w2, f))
            c1 = (int(rng.integers(4)), int(rng.integers(4)))
            c2 = (int(rng.integers(h2)), int(rng.integers(w2)))
            expected, expected_cell = hardest_negative_reference(
                d1, d2, c1, c2, tau)
            if expected is None:
                with pytest.raises(NoNegativeError):
                    losses.hardest_negative(ad.Tensor(d1), ad.Tensor(d2),
                                            c1, c2, tau)
                continue
            out, cell = losses.hardest_negative(ad.Tensor(d1), ad.Tensor(d2),
                                                c1, c2, tau)
            assert cell == expected_cell
            assert out.data == pytest.approx(expected, rel=1e-12)

    def test_tie_breaks_to_first_row_major_cell(self):
        d1 = np.zeros((1, 1, 2))
        d2 = np.ones((4, 4, 2))
        out, cell = losses.hardest_negative(ad.Tensor(d1), ad.Tensor(d2),
                                            (0, 0), (0, 0), tau=1.5)
        # All eligible cells are equidistant; first in row-major order wins.
        assert cell == (0, 2)
        assert out.data == pytest.approx(math.sqrt(2.0), rel=1e-12)

    def test_exclusion_radius_respected(self):
        rng = np.random.default_rng(3)
        d1 = ad.Tensor(rng.normal(size=(5, 5, 3)))
        d2 = ad.Tensor(rng.normal(size=(5, 5, 3)))
        for tau in (0.0, 1.0, 2.5):
            _, cell = losses.hardest_negative(d1, d2, (2, 2), (2, 2), tau)
            assert math.hypot(cell[0] - 2, cell[1] - 2) > tau

    def test_small_grid_large_radius_has_no_negative(self):
        d = ad.Tensor(np.random.default_rng(0).normal(size=(3, 3, 2)))
        with pytest.raises(NoNegativeError):
            losses.hardest_negative(d, d, (1, 1), (1, 1), tau=4.0)

    def test_gradient_flows_through_selected_fiber_only(self):
        rng = np.random.default_rng(31)
        base1 = rng.normal(size=(4, 4, 3))
        base2 = rng.normal(size=(4, 4, 3))
        t1 = ad.Tensor(base1, requires_grad=True)
        t2 = ad.Tensor(base2, requires_grad=True)
        out, cell = losses.hardest_negative(t1, t2, (0, 0), (0, 0), tau=2.0)
        out.backward()
        touched = np.nonzero(np.any(t2.grad != 0.0, axis=-1))
        assert list(zip(*touched)) == [cell]

        def fn(x):
            val, _ = losses.hardest_negative(ad.Tensor(base1), ad.Tensor(x),
                                             (0, 0), (0, 0), tau=2.0)
            return float(val.data)

        idx = [(cell[0], cell[1], k) for k in range(3)]
        numeric = central_difference_entries(fn, base2, idx, FD_STEP)
        analytic = np.array([t2.grad[i] for i in idx])
        assert relative_error(analytic, numeric) < GRAD_TOL


class TestContrastive:
    def test_zero_when_positive_tight_and_negative_far(self):
        out = losses.contrastive(ad.constant(0.0), ad.constant(1.5), 1.5)
        assert out.data == pytest.approx(0.0, abs=1e-12)

    def test_close_negative_is_penalized(self):
        out = losses.contrastive(ad.constant(1.0), ad.constant(0.0), 1.5)
        assert out.data == pytest.approx(1.625, rel=1e-12)

    def test_mixed_case_value(self):
        out = losses.contrastive(ad.constant(0.4), ad.constant(1.0), 1.5)
        assert out.data == pytest.approx(0.205, rel=1e-12)

    def test_nonnegative_everywhere(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            p = float(rng.uniform(0, 3))
            n = float(rng.uniform(0, 3))
            m = float(rng.uniform(0.1, 3))
            out = losses.contrastive(ad.constant(p), ad.constant(n), m)
            assert out.data >= 0.0
            if out.data == 0.0:
                assert p == 0.0 and n >= m

    def test_no_gradient_from_far_negatives(self):
        n = ad.Tensor(np.array(2.5), requires_grad=True)
        out = losses.contrastive(ad.constant(0.7), n, 1.5)
        out.backward()
        assert n.grad == 0.0

    def test_elementwise_over_vectors(self):
        p = ad.constant(np.array([0.0, 1.0, 0.4]))
        n = ad.constant(np.array([1.5, 0.0, 1.0]))
        out = losses.contrastive(p, n, 1.5)
        assert np.allclose(out.data, [0.0, 1.625, 0.205], atol=1e-12)


class TestContrastiveMatchingLoss:
    def test_matches_reference_reimplementation(self):
        rng = np.random.default_rng(41)
        for _ in range(20):
            batch, (d1, d2, s1, s2, pairs) = random_batch(
                rng, h1=int(rng.integers(5, 9)), w1=int(rng.integers(5, 9)),
                h2=int(rng.integers(5, 9)), w2=int(rng.integers(5, 9)),
                n_pairs=int(rng.integers(1, 9)))
            out = losses.contrastive_matching_loss(batch)
            expected = matching_loss_reference(d1, d2, s1, s2, pairs,
                                               batch.tau, batch.margin)
            assert abs(out.data - expected) <= 1e-9

    def test_uniform_scores_give_plain_mean(self):
        rng = np.random.default_rng(43)
        batch, (d1, d2, _, _, pairs) = random_batch(rng, n_pairs=6,
                                                    uniform_scores=True)
        out = losses.contrastive_matching_loss(batch)
        terms = []
        for c1, c2 in pairs:
            n_fwd, _ = hardest_negative_reference(d1, d2, c1, c2, batch.tau)
            n_bwd, _ = hardest_negative_reference(d2, d1, c2, c1, batch.tau)
            p = float(np.linalg.norm(d1[c1[0], c1[1]] - d2[c2[0], c2[1]]))
            terms.append(contrastive_reference(p, n_fwd, batch.margin)
                         + contrastive_reference(p, n_bwd, batch.margin))
        assert out.data == pytest.approx(np.mean(terms), rel=1e-12)

    def test_invariant_to_uniform_score_scaling(self):
        rng = np.random.default_rng(47)
        batch, (d1, d2, s1, s2, pairs) = random_batch(rng, n_pairs=7)
        base = losses.contrastive_matching_loss(batch).data
        scaled = losses.CorrespondenceBatch(
            d1=ad.Tensor(d1), d2=ad.Tensor(d2),
            s1=ad.Tensor(s1 * 3.7), s2=ad.Tensor(s2 * 3.7),
            pairs=pairs, tau=batch.tau, margin=batch.margin)
        out = losses.contrastive_matching_loss(scaled).data
        assert abs(out - base) <= 1e-9

    def test_pairs_without_negatives_are_dropped(self):
        rng = np.random.default_rng(53)
        d_small = rng.normal(size=(3, 3, 4))
        d_big = rng.normal(size=(12, 12, 4))
        s_small = np.full((3, 3), 1 / 9)
        s_big = np.full((12, 12), 1 / 144)
        # tau = 4 leaves no eligible cell in a 3x3 grid, so every pair dies.
        batch = losses.CorrespondenceBatch(
            d1=ad.Tensor(d_small), d2=ad.Tensor(d_big),
            s1=ad.Tensor(s_small), s2=ad.Tensor(s_big),
            pairs=[((0, 0), (5, 5)), ((2, 2), (8, 3))], tau=4.0)
        with pytest.raises(SkipPair):
            losses.contrastive_matching_loss(batch)

    def test_empty_pair_list_skips(self):
        d = ad.Tensor(np.zeros((6, 6, 4)))
        s = ad.Tensor(np.full((6, 6), 1 / 36))
        batch = losses.CorrespondenceBatch(d1=d, d2=d, s1=s, s2=s, pairs=[])
        with pytest.raises(SkipPair):
            losses.contrastive_matching_loss(batch)

    def test_zero_score_weights_skip(self):
        rng = np.random.default_rng(59)
        d = ad.Tensor(rng.normal(size=(6, 6, 4)))
        s = ad.Tensor(np.zeros((6, 6)))
        batch = losses.CorrespondenceBatch(d1=d, d2=d, s1=s, s2=s,
                                           pairs=[((0, 0), (0, 0))], tau=2.0)
        with pytest.raises(SkipPair):
            losses.contrastive_matching_loss(batch)

    def test_subsampling_is_seeded_and_deterministic(self):
        rng = np.random.default_rng(61)
        batch, _ = random_batch(rng, h1=8, w1=8, h2=8, w2=8, n_pairs=40)
        a = losses.contrastive_matching_loss(
            batch, rng=np.random.default_rng(5), max_pairs=10).data
        b = losses.contrastive_matching_loss(
            batch, rng=np.random.default_rng(5), max_pairs=10).data
        c = losses.contrastive_matching_loss(
            batch, rng=np.random.default_rng(6), max_pairs=10).data
        assert a == b
        # A different sample of pairs almost surely changes the average.
        assert a != c

    def test_subsample_matches_manual_selection(self):
        rng = np.random.default_rng(67)
        batch, (d1, d2, s1, s2, pairs) = random_batch(
            rng, h1=8, w1=8, h2=8, w2=8, n_pairs=30)
        out = losses.contrastive_matching_loss(
            batch, rng=np.random.default_rng(9), max_pairs=12).data
        chosen = np.sort(np.random.default_rng(9).choice(30, size=12,
                                                         replace=False))
        subset = [pairs[i] for i in chosen]
        expected = matching_loss_reference(d1, d2, s1, s2, subset,
                                           batch.tau, batch.margin)
        assert abs(out - expected) <= 1e-9

    def test_no_subsampling_below_limit(self):
        rng = np.random.default_rng(71)
        batch, _ = random_batch(rng, n_pairs=5)
        a = losses.contrastive_matching_loss(batch).data
        b = losses.contrastive_matching_loss(
            batch, rng=np.random.default_rng(123)).data
        assert a == b

    def test_gradient_reaches_scores_and_descriptors(self):
        rng = np.random.default_rng(73)
        batch, _ = random_batch(rng, n_pairs=6)
        out = losses.contrastive_matching_loss(batch)
        out.backward()
        assert batch.s1.grad is not None and np.any(batch.s1.grad != 0.0)
        assert batch.s2.grad is not None and np.any(batch.s2.grad != 0.0)
        assert batch.d1.grad is not None and np.any(batch.d1.grad != 0.0)
        assert batch.d2.grad is not None and np.any(batch.d2.grad != 0.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(79)
        batch, (d1, d2, s1, s2, pairs) = random_batch(rng, n_pairs=5)
        out = losses.contrastive_matching_loss(batch)
        out.backward()

        def loss_of_d1(x):
            b = losses.CorrespondenceBatch(
                d1=ad.Tensor(x), d2=ad.Tensor(d2), s1=ad.Tensor(s1),
                s2=ad.Tensor(s2), pairs=pairs, tau=batch.tau,
                margin=batch.margin)
            return float(losses.contrastive_matching_loss(b).data)

        def loss_of_s1(x):
            b = losses.CorrespondenceBatch(
                d1=ad.Tensor(d1), d2=ad.Tensor(d2), s1=ad.Tensor(x),
                s2=ad.Tensor(s2), pairs=pairs, tau=batch.tau,
                margin=batch.margin)
            return float(losses.contrastive_matching_loss(b).data)

        idx_d = sample_indices(d1.shape, 10, rng)
        numeric_d = central_difference_entries(loss_of_d1, d1, idx_d, FD_STEP)
        analytic_d = np.array([batch.d1.grad[i] for i in idx_d])
        assert relative_error(analytic_d, numeric_d) < GRAD_TOL

        idx_s = sample_indices(s1.shape, 10, rng)
        numeric_s = central_difference_entries(loss_of_s1, s1, idx_s, FD_STEP)
        analytic_s = np.array([batch.s1.grad[i] for i in idx_s])
        assert relative_error(analytic_s, numeric_s) < GRAD_TOL


class TestViewSynthesisLoss:
    def test_perfect_prediction_gives_zero(self):
        target = np.random.default_rng(0).uniform(size=(5, 5))
        mask = np.ones((5, 5), dtype=bool)
        out = losses.view_synthesis_loss(ad.Tensor(target.copy()), target,
                                         mask)
        assert out.data == pytest.approx(0.0, abs=1e-12)

    def test_constant_offset_gives_offset(self):
        target = np.random.default_rng(1).uniform(size=(4, 6))
        mask = np.ones((4, 6), dtype=bool)
        out = losses.view_synthesis_loss(ad.Tensor(target + 0.1), target,
                                         mask)
        assert out.data == pytest.approx(0.1, rel=1e-9)

    def test_masked_mean_matches_numpy(self):
        rng = np.random.default_rng(2)
        synth = rng.uniform(size=(7, 7))
        target = rng.uniform(size=(7, 7))
        mask = rng.uniform(size=(7, 7)) > 0.4
        out = losses.view_synthesis_loss(ad.Tensor(synth), target, mask)
        expected = np.mean(np.abs(synth - target)[mask])
        assert out.data == pytest.approx(expected, rel=1e-12)

    def test_cells_outside_mask_are_ignored(self):
        rng = np.random.default_rng(3)
        synth = rng.uniform(size=(5, 5))
        target = synth.copy()
        mask = np.zeros((5, 5), dtype=bool)
        mask[2, 2] = True
        synth_wild = synth.copy()
        synth_wild[0, 0] = 99.0
        out = losses.view_synthesis_loss(ad.Tensor(synth_wild), target, mask)
        assert out.data == pytest.approx(0.0, abs=1e-12)

    def test_empty_mask_skips(self):
        with pytest.raises(SkipPair):
            losses.view_synthesis_loss(ad.Tensor(np.zeros((4, 4))),
                                       np.zeros((4, 4)),
                                       np.zeros((4, 4), dtype=bool))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            losses.view_synthesis_loss(ad.Tensor(np.zeros((4, 4))),
                                       np.zeros((4, 5)),
                                       np.ones((4, 4), dtype=bool))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        base = rng.uniform(0.2, 0.8, size=(6, 6))
        target = rng.uniform(size=(6, 6))
        mask = rng.uniform(size=(6, 6)) > 0.3
        t = ad.Tensor(base, requires_grad=True)
        out = losses.view_synthesis_loss(t, target, mask)
        out.backward()

        def fn(x):
            return float(losses.view_synthesis_loss(ad.Tensor(x), target,
                                                    mask).data)

        idx = sample_indices(base.shape, 10, rng)
        numeric = central_difference_entries(fn, base, idx, FD_STEP)
        analytic = np.array([t.grad[i] for i in idx])
        assert relative_error(analytic, numeric) < GRAD_TOL

    def test_gradient_is_zero_outside_mask(self):
        rng = np.random.default_rng(6)
        base = rng.uniform(size=(5, 5))
        mask = np.zeros((5, 5), dtype=bool)
        mask[1, 3] = True
        mask[4, 0] = True
        t = ad.Tensor(base, requires_grad=True)
        out = losses.view_synthesis_loss(t, rng.uniform(size=(5, 5)), mask)
        out.backward()
        assert np.all((t.grad != 0.0) == mask)


class TestTotalLoss:
    def test_weighted_combinations(self):
        cases = [(1.0, 0.0, 10.0, 1.0),
                 (0.0, 0.2, 10.0, 2.0),
                 (0.3, 0.05, 10.0, 0.8)]
        for l_cm, l_v, alpha, expected in cases:
            out = losses.total_loss(ad.constant(l_cm), ad.constant(l_v),
                                    alpha)
            assert out.data == pytest.approx(expected, rel=1e-12)

    def test_zero_alpha_ignores_synthesis_term(self):
        out = losses.total_loss(ad.constant(0.7), ad.constant(123.0), 0.0)
        assert out.data == pytest.approx(0.7, rel=1e-12)

    def test_gradient_scales_with_alpha(self):
        l_cm = ad.Tensor(np.array(0.5), requires_grad=True)
        l_v = ad.Tensor(np.array(0.2), requires_grad=True)
        out = losses.total_loss(l_cm, l_v, 10.0)
        out.backward()
        assert l_cm.grad == pytest.approx(1.0)
        assert l_v.grad == pytest.approx(10.0)
