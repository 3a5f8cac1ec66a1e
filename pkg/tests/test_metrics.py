import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from docbin.data import PairedSample
from docbin.metrics import (
    DegenerateGroundTruthError,
    MetricReport,
    bin_average,
    count_nonuniform_blocks,
    drd,
    drd_weights,
    error_heatmap,
    evaluate_pair,
    f_measure,
    normalize_minmax,
    pseudo_f_measure,
    psnr,
    skeletonize,
)


# -- brute-force DRD oracle: plain loops, no vectorization ---------------


def oracle_weights():
    w = [[0.0] * 5 for _ in range(5)]
    total = 0.0
    for i in range(5):
        for j in range(5):
            if (i, j) != (2, 2):
                w[i][j] = 1.0 / math.sqrt((i - 2) ** 2 + (j - 2) ** 2)
                total += w[i][j]
    return [[v / total for v in row] for row in w]


def oracle_nubn(gt):
    h, w = len(gt), len(gt[0])
    count = 0
    for br in range(0, h, 8):
        for bc in range(0, w, 8):
            values = {gt[r][c] for r in range(br, min(br + 8, h)) for c in range(bc, min(bc + 8, w))}
            count += len(values) == 2
    return count


def oracle_drd(pred, gt):
    pred, gt = pred.tolist(), gt.tolist()
    h, w = len(gt), len(gt[0])
    weights = oracle_weights()
    total = 0.0
    for r in range(h):
        for c in range(w):
            if pred[r][c] == gt[r][c]:
                continue
            for i in range(-2, 3):
                for j in range(-2, 3):
                    rr = min(max(r + i, 0), h - 1)
                    cc = min(max(c + j, 0), w - 1)
                    if gt[rr][cc] != pred[r][c]:
                        total += weights[i + 2][j + 2]
    return total / oracle_nubn(gt)


def oracle_drd_numerator(pred, gt):
    return oracle_drd(pred, gt) * oracle_nubn(gt.tolist())


# -- F-measure / PSNR -----------------------------------------------------


class TestFMeasure:
    def test_perfect(self):
        gt = np.zeros((5, 5), np.uint8)
        gt[1, 1:4] = 1
        assert f_measure(gt, gt) == 100.0

    def test_complement(self):
        gt = np.eye(4, dtype=np.uint8)
        assert f_measure(1 - gt, gt) == 0.0

    def test_half_half(self):
        gt = np.zeros((4, 4), np.uint8)
        gt[0, :4] = 1
        pred = np.zeros_like(gt)
        pred[0, :2] = 1
        pred[3, :2] = 1
        assert f_measure(pred, gt) == pytest.approx(50.0)

    def test_empty_conventions(self):
        empty = np.zeros((3, 3), np.uint8)
        ink = empty.copy()
        ink[1, 1] = 1
        assert f_measure(empty, empty) == 100.0
        assert f_measure(ink, empty) == 0.0
        assert f_measure(empty, ink) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            f_measure(np.zeros((2, 2), np.uint8), np.zeros((2, 3), np.uint8))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_symmetric_in_arguments(self, seed):
        # 2TP / (|pred| + |gt|) does not care which mask is which
        rng = np.random.default_rng(seed)
        a, b = rng.integers(0, 2, (2, 9, 9)).astype(np.uint8)
        assert f_measure(a, b) == pytest.approx(f_measure(b, a), abs=1e-12)


class TestPSNR:
    def test_identical(self):
        assert psnr(np.eye(3, dtype=np.uint8), np.eye(3, dtype=np.uint8)) == math.inf

    def test_quarter_flipped(self):
        gt = np.zeros((4, 4), np.uint8)
        pred = gt.copy()
        pred[0] = 1
        assert psnr(pred, gt) == pytest.approx(6.0206, abs=1e-4)

    def test_hundredth_flipped(self):
        gt = np.zeros((10, 10), np.uint8)
        pred = gt.copy()
        pred[3, 7] = 1
        assert psnr(pred, gt) == pytest.approx(20.0, abs=1e-12)


# -- DRD ------------------------------------------------------------------


class TestDRD:
    def test_weights(self):
        ours, ref = drd_weights(), np.array(oracle_weights())
        np.testing.assert_allclose(ours, ref, atol=1e-15)
        assert ours[2, 2] == 0 and ours.sum() == pytest.approx(1.0, abs=1e-15)

    def test_identical(self):
        gt = np.zeros((8, 8), np.uint8)
        gt[2, 2] = 1
        assert drd(gt, gt) == 0.0

    def test_single_flip_example(self):
        gt = np.zeros((16, 16), np.uint8)
        gt[1, 1] = 1  # only block (0, 0) is non-uniform
        pred = gt.copy()
        pred[12, 12] = 1
        assert count_nonuniform_blocks(gt) == 1
        assert drd(pred, gt) == pytest.approx(1.0, abs=1e-15)

    def test_degenerate_gt(self):
        gt = np.zeros((8, 8), np.uint8)
        pred = gt.copy()
        pred[0, 0] = 1
        with pytest.raises(DegenerateGroundTruthError):
            drd(pred, gt)

    def test_nubn_counts_partial_blocks(self):
        gt = np.zeros((10, 10), np.uint8)
        gt[9, 9] = 1
        assert count_nonuniform_blocks(gt) == 1 == oracle_nubn(gt.tolist())

    @pytest.mark.parametrize("seed", range(20))
    def test_random_16x16(self, seed):
        rng = np.random.default_rng(seed)
        gt = (rng.random((16, 16)) < 0.3).astype(np.uint8)
        pred = np.where(rng.random((16, 16)) < 0.2, 1 - gt, gt).astype(np.uint8)
        assert abs(drd(pred, gt) - oracle_drd(pred, gt)) < 1e-12

    @pytest.mark.parametrize("hw", [(5, 13), (11, 7), (17, 9)])
    def test_ragged_sizes(self, hw):
        rng = np.random.default_rng(sum(hw))
        gt = (rng.random(hw) < 0.4).astype(np.uint8)
        pred = np.where(rng.random(hw) < 0.3, 1 - gt, gt).astype(np.uint8)
        assert abs(drd(pred, gt) - oracle_drd(pred, gt)) < 1e-12

    def test_exhaustive_3x3_neighbourhoods(self):
        rng = np.random.default_rng(7)
        for bits in itertools.product((0, 1), repeat=9):
            gt = np.zeros((8, 8), np.uint8)
            gt[3:6, 3:6] = np.array(bits, np.uint8).reshape(3, 3)
            for pred in (gt.copy(), np.where(rng.random((8, 8)) < 0.25, 1 - gt, gt).astype(np.uint8)):
                pred[4, 4] = 1 - gt[4, 4]
                if not any(bits):
                    with pytest.raises(DegenerateGroundTruthError):
                        drd(pred, gt)
                    continue
                assert abs(drd(pred, gt) - oracle_drd(pred, gt)) < 1e-12

    def test_asymmetric_in_arguments(self):
        gt = np.zeros((8, 8), np.uint8)
        gt[2:6, 2:6] = 1
        pred = np.zeros_like(gt)
        pred[3, 3] = 1
        # swapping the roles changes which mask defines neighbourhoods and blocks
        assert drd(pred, gt) != pytest.approx(drd(gt, pred))


# -- pseudo F-measure -----------------------------------------------------


def _bar():
    gt = np.zeros((12, 14), np.uint8)
    gt[4:8, 2:12] = 1  # 4 rows thick, 10 columns long
    skel = np.zeros_like(gt)
    skel[5, 2:12] = 1
    return gt, skel


class TestPseudoFMeasure:
    def test_perfect(self):
        gt, skel = _bar()
        assert pseudo_f_measure(gt, gt, skel) == 100.0
        assert pseudo_f_measure(gt, gt) == 100.0

    def test_thin_prediction_forgiven(self):
        gt, skel = _bar()
        pred = np.zeros_like(gt)
        pred[4:6, 2:12] = 1  # half the ink, whole skeleton
        assert pseudo_f_measure(pred, gt, skel) == pytest.approx(100.0)
        assert f_measure(pred, gt) == pytest.approx(100 * 2 * 0.5 / 1.5)

    def test_half_skeleton(self):
        gt, skel = _bar()
        pred = np.zeros_like(gt)
        pred[4:8, 2:7] = 1
        assert pseudo_f_measure(pred, gt, skel) == pytest.approx(100 * 2 * 0.5 / 1.5)
        assert pseudo_f_measure(pred, gt, skel) == pytest.approx(66.67, abs=0.01)

    def test_skeleton_must_lie_in_gt(self):
        gt, skel = _bar()
        skel[0, 0] = 1
        with pytest.raises(ValueError, match="subset"):
            pseudo_f_measure(gt, gt, skel)

    def test_default_skeleton_is_thin_subset(self):
        gt, _ = _bar()
        skel = skeletonize(gt)
        assert skel.sum() > 0 and not (skel & (1 - gt)).any()
        # at most one skeleton pixel per column of a horizontal bar interior
        assert skel[:, 4:10].sum(axis=0).max() == 1

    def test_asymmetric_in_arguments(self):
        gt, skel = _bar()
        pred = np.zeros_like(gt)
        pred[4:6, 2:12] = 1
        assert pseudo_f_measure(pred, gt) != pytest.approx(pseudo_f_measure(gt, pred))


# -- properties -----------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_flip_monotonicity(seed):
    rng = np.random.default_rng(seed)
    gt = (rng.random((16, 16)) < 0.3).astype(np.uint8)
    gt[0, 0], gt[0, 1] = 1, 0  # guarantees a non-uniform block
    pred = np.where(rng.random((16, 16)) < 0.15, 1 - gt, gt).astype(np.uint8)
    correct = np.argwhere(pred == gt)
    r, c = correct[rng.integers(len(correct))]
    worse = pred.copy()
    worse[r, c] = 1 - worse[r, c]
    assert f_measure(worse, gt) <= f_measure(pred, gt) + 1e-12
    assert oracle_drd_numerator(worse, gt) >= oracle_drd_numerator(pred, gt) - 1e-12
    assert drd(worse, gt) >= drd(pred, gt) - 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_perfect_prediction_scores(seed):
    gt = (np.random.default_rng(seed).random((16, 16)) < 0.4).astype(np.uint8)
    gt[0, 0], gt[0, 1] = 1, 0
    scores = evaluate_pair(gt, gt)
    assert (scores.psnr, scores.fm, scores.pfm, scores.drd) == (math.inf, 100.0, 100.0, 0.0)


# -- error heatmap --------------------------------------------------------


class _Stub:
    """Callable model predicting the ground truth, optionally wrong on column 0."""

    def __init__(self, masks, err_left=False):
        self.masks, self.err_left, self.calls = masks, err_left, 0

    def __call__(self, x):
        out = torch.from_numpy(self.masks[self.calls:self.calls + x.shape[0]]).float()[:, None].clone()
        self.calls += x.shape[0]
        if self.err_left:
            out[..., 0] = 1 - out[..., 0]
        return out


def _heat_samples(n=2, size=64):
    rng = np.random.default_rng(0)
    return [PairedSample(rng.random((size, size, 1)).astype(np.float32),
                         (rng.random((size, size)) < 0.2).astype(np.uint8), f"s{i}")
            for i in range(n)]


def _patch_masks(samples, p):
    return np.stack([s.mask[r:r + p, c:c + p] for s in samples
                     for r in range(0, s.mask.shape[0], p) for c in range(0, s.mask.shape[1], p)])


class TestHeatmap:
    def test_perfect_model(self):
        samples = _heat_samples()
        grid = error_heatmap(_Stub(_patch_masks(samples, 32)), samples, 32)
        assert grid.shape == (16, 16) and np.all(grid == 0)

    def test_left_column_error(self):
        samples = _heat_samples()
        grid = error_heatmap(_Stub(_patch_masks(samples, 32), err_left=True), samples, 32)
        assert grid.shape == (16, 16)
        assert grid.min() >= 0 and grid.max() <= 1
        assert np.all(np.argmax(grid, axis=1) == 0)
        assert np.all(grid[:, 1:] == 0)

    def test_bin_average_and_normalize(self):
        grid = np.arange(64, dtype=float).reshape(8, 8)
        pooled = bin_average(grid, 4)
        assert pooled[0, 0] == np.mean([0, 1, 8, 9])
        np.testing.assert_array_equal(normalize_minmax(np.full((3, 3), 2.0)), np.zeros((3, 3)))
        out = normalize_minmax(pooled)
        assert out.min() == 0 and out.max() == 1


# -- reports --------------------------------------------------------------


def test_report_layout():
    gt = np.zeros((16, 16), np.uint8)
    gt[2:5, 2:10] = 1
    pred = gt.copy()
    pred[10, 10] = 1
    report = MetricReport([evaluate_pair(gt, gt, "a"), evaluate_pair(pred, gt, "b")], "demo")
    agg = report.aggregate
    assert agg["fm"] == pytest.approx((100 + f_measure(pred, gt)) / 2)
    assert agg["psnr"] == math.inf
    text = report.to_text()
    assert text.count("\nimage ") == 2 and "[aggregate]" in text and "psnr=inf" in text
    rows = report.to_csv().strip().splitlines()
    assert rows[0] == "source_id,fm,pfm,psnr,drd"
    assert len(rows) == 4 and rows[-1].startswith("__aggregate__")
    assert all(len(r.split(",")) == 5 for r in rows)
