import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from docbin.data import PairedSample
from docbin.ffc import NumericError
from docbin.imagecore import make_grid
from docbin.inference import (
    binarize_document,
    nearest_center_owner,
    plan_stitch,
    predict_document,
    sweep_patch_sizes,
    sweep_table,
)
from docbin.network import ModelConfig, build_model


def brute_force_owner(h, w, grid, patch):
    """Per-pixel scan over every patch: nearest center, lowest index on ties."""
    owner = np.full((h, w), -1)
    for r in range(h):
        for c in range(w):
            best = None
            for idx, (r0, c0) in enumerate(grid.origins):
                if not (r0 <= r < r0 + patch and c0 <= c < c0 + patch):
                    continue
                d = (r - (r0 + patch / 2)) ** 2 + (c - (c0 + patch / 2)) ** 2
                if best is None or d < best[0]:
                    best = (d, idx)
            owner[r, c] = best[1]
    return owner


class ConstantModel:
    def __init__(self, value):
        self.value = value

    def __call__(self, x):
        return torch.full((x.shape[0], 1, *x.shape[-2:]), self.value)


class LeftEdgeModel:
    """Predicts ink only within 16 px of each patch's left border."""

    def __call__(self, x):
        out = torch.zeros(x.shape[0], 1, *x.shape[-2:])
        out[..., :16] = 1.0
        return out


class ThresholdModel:
    """Pixelwise: dark input means ink. Position independent."""

    def __call__(self, x):
        return (x.mean(dim=1, keepdim=True) < 0.5).float()


class TestOwnerMap:
    def test_single_patch(self):
        plan = plan_stitch(512, 512, 512, 256)
        assert len(plan.grid) == 1 and np.all(plan.owner_map == 0)
        assert (plan.pad_bottom, plan.pad_right) == (0, 0)

    def test_two_columns_tie_goes_left(self):
        plan = plan_stitch(512, 768, 512, 256)
        assert plan.grid.col_origins == (0, 256)
        owner = plan.owner_map
        # centers at 256 and 512; column 384 is equidistant
        assert np.all(owner[:, :385] == 0) and np.all(owner[:, 385:] == 1)

    def test_small_image_padded(self):
        plan = plan_stitch(300, 200, 256, 128)
        assert (plan.pad_bottom, plan.pad_right) == (0, 56)
        plan = plan_stitch(100, 100, 256, 128)
        assert (plan.pad_top, plan.pad_left, plan.pad_bottom, plan.pad_right) == (0, 0, 156, 156)

    def test_no_padding_when_large_enough(self):
        for h, w in [(512, 768), (1024, 1024), (768, 1280)]:
            plan = plan_stitch(h, w, 512, 256)
            assert (plan.pad_bottom, plan.pad_right) == (0, 0)

    def test_overlap_must_be_smaller_than_patch(self):
        with pytest.raises(ValueError, match="overlap"):
            plan_stitch(600, 600, 256, 256)
        with pytest.raises(ValueError, match="divisible"):
            plan_stitch(600, 600, 250, 100)

    def test_oracle_on_random_geometries(self):
        rng = np.random.default_rng(0)
        for _ in range(60):
            patch = int(rng.choice([8, 16, 24, 32]))
            overlap = int(rng.integers(0, patch))
            h, w = (int(v) for v in rng.integers(4, 90, 2))
            plan = plan_stitch(h, w, patch, overlap)
            hp, wp = plan.grid.image_height, plan.grid.image_width
            np.testing.assert_array_equal(plan.owner_map, brute_force_owner(hp, wp, plan.grid, patch))

    @settings(max_examples=100, deadline=None)
    @given(st.data())
    def test_interior_preferred_over_border(self, data):
        patch = data.draw(st.sampled_from([8, 16, 32]))
        overlap = data.draw(st.integers(0, patch - 1))
        dim = data.draw(st.integers(patch, 120))
        grid = make_grid(dim, patch, patch, patch - overlap)
        owners = nearest_center_owner(dim, grid.row_origins, patch)
        origins = np.array(grid.row_origins)
        coords = np.arange(dim)
        chosen = np.abs(2 * coords - (2 * origins[owners] + patch))
        for o in origins:
            covers = (coords >= o) & (coords < o + patch)
            other = np.abs(2 * coords - (2 * o + patch))
            assert np.all(chosen[covers] <= other[covers])


class TestBinarize:
    def test_constant_model(self):
        image = np.random.default_rng(0).random((200, 300, 3)).astype(np.float32)
        for patch, overlap in [(64, 32), (128, 0), (256, 128)]:
            mask = binarize_document(ConstantModel(0.9), image, patch, overlap)
            assert mask.shape == (200, 300) and np.all(mask == 1)
            assert np.all(binarize_document(ConstantModel(0.1), image, patch, overlap) == 0)

    def test_threshold_boundary_is_ink(self):
        mask = binarize_document(ConstantModel(0.5), np.zeros((64, 64, 1), np.float32), 64, 0)
        assert np.all(mask == 1)

    def test_no_overlap_equals_plain_tiling(self):
        image = np.random.default_rng(1).random((128, 192, 1)).astype(np.float32)
        out = predict_document(LeftEdgeModel(), image, 64, 0)
        expected = np.zeros((128, 192))
        for c in range(0, 192, 64):
            expected[:, c:c + 16] = 1
        np.testing.assert_array_equal(out, expected)

    def test_overlap_hides_patch_borders(self):
        image = np.zeros((128, 256, 1), np.float32)
        out = predict_document(LeftEdgeModel(), image, 64, 32)
        # only the first patch's left edge lies in its owned region
        assert out[:, :16].min() == 1 and out[:, 16:].max() == 0

    def test_pointwise_model_ignores_tiling(self):
        image = np.random.default_rng(2).random((100, 140, 3)).astype(np.float32)
        expected = (image.mean(axis=2) < 0.5).astype(np.uint8)
        for patch, overlap in [(32, 0), (32, 16), (64, 8), (256, 128)]:
            np.testing.assert_array_equal(binarize_document(ThresholdModel(), image, patch, overlap), expected)

    def test_order_and_batch_invariance(self):
        model = build_model(ModelConfig(), seed=0)
        image = np.random.default_rng(3).random((150, 170, 3)).astype(np.float32)
        ref_mask, ref_prob = binarize_document(model, image, 64, 32, batch_size=4,
                                               return_probabilities=True)
        n = len(plan_stitch(150, 170, 64, 32).grid)
        order = list(np.random.default_rng(4).permutation(n))
        for batch_size, perm in [(1, None), (3, order), (n, order[::-1])]:
            mask, prob = binarize_document(model, image, 64, 32, batch_size=batch_size,
                                           order=perm, return_probabilities=True)
            np.testing.assert_array_equal(mask, ref_mask)
            np.testing.assert_allclose(prob, ref_prob, atol=1e-6)

    def test_odd_sizes_and_channels(self):
        model = build_model(ModelConfig(), seed=0)
        for shape in [(61, 77, 3), (61, 77, 1), (129, 33, 3)]:
            image = np.random.default_rng(5).random(shape).astype(np.float32)
            assert binarize_document(model, image, 64, 32).shape == shape[:2]

    def test_numeric_error_names_patch(self):
        class NanModel:
            def __call__(self, x):
                raise NumericError("non-finite activations in layer 'head'")

        with pytest.raises(NumericError, match=r"origins \[\(0, 0\)"):
            predict_document(NanModel(), np.zeros((64, 64, 1), np.float32), 64, 0)


class TestSweep:
    def _dataset(self):
        rng = np.random.default_rng(0)
        samples = []
        for i in range(2):
            mask = (rng.random((96, 96)) < 0.2).astype(np.uint8)
            image = np.where(mask[..., None], 0.2, 0.8).astype(np.float32)
            samples.append(PairedSample(image, mask, f"s{i}"))
        return samples

    def test_report_shape(self):
        reports = sweep_patch_sizes(ThresholdModel(), self._dataset(), [32, 64])
        assert list(reports) == [32, 64]
        assert reports[32].label == "patch=32 overlap=16"
        assert all(len(r.per_image) == 2 for r in reports.values())
        assert reports[64].aggregate["fm"] == 100.0
        rows = sweep_table(reports).strip().splitlines()
        assert rows[0] == "patch_size,fm,pfm,psnr,drd" and len(rows) == 3
        assert all(len(row.split(",")) == 5 for row in rows)

    def test_half_mode_overlap(self):
        reports = sweep_patch_sizes(ThresholdModel(), self._dataset()[:1], [256], "half")
        assert reports[256].label == "patch=256 overlap=128"
        reports = sweep_patch_sizes(ThresholdModel(), self._dataset()[:1], [256], "none")
        assert reports[256].label == "patch=256 overlap=0"

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            sweep_patch_sizes(ThresholdModel(), self._dataset(), [30])
        with pytest.raises(ValueError):
            sweep_patch_sizes(ThresholdModel(), self._dataset(), [32], "quarter")
