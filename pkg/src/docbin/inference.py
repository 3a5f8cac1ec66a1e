"""Whole-document binarization by overlapping sliding windows.

Each pixel takes its prediction from the covering patch whose center is
nearest (squared Euclidean distance; ties go to the lowest row-major patch
index), so only the innermost part of every patch reaches the output.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ffc import NumericError
from .imagecore import PatchGrid, make_grid, reflect_pad, to_gray, validate_image
from .metrics import MetricReport, evaluate_pair
from .network import predict_patches


@dataclass(frozen=True)
class StitchPlan:
    grid: PatchGrid
    pad_top: int
    pad_left: int
    pad_bottom: int
    pad_right: int
    row_owner: np.ndarray  # per padded row: index into grid.row_origins
    col_owner: np.ndarray  # per padded column: index into grid.col_origins

    @property
    def owner_map(self) -> np.ndarray:
        """Patch index owning each pixel of the padded image."""
        n_cols = len(self.grid.col_origins)
        return self.row_owner[:, None] * n_cols + self.col_owner[None, :]

    def owned_region(self, index: int) -> tuple[slice, slice] | None:
        """Rectangle (padded-image coordinates) owned by patch ``index``, if any."""
        n_cols = len(self.grid.col_origins)
        ri, ci = divmod(index, n_cols)
        rows = np.flatnonzero(self.row_owner == ri)
        cols = np.flatnonzero(self.col_owner == ci)
        if rows.size == 0 or cols.size == 0:
            return None
        return slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1)


def nearest_center_owner(dim: int, origins, patch_size: int) -> np.ndarray:
    """For each coordinate along one axis, the covering origin whose patch
    center is nearest, lowest index first on ties.
    """
    coords = np.arange(dim)[None, :]
    origins = np.asarray(origins)[:, None]
    # doubled coordinates keep half-pixel centers integral
    dist = np.abs(2 * coords - (2 * origins + patch_size)).astype(np.float64)
    covered = (coords >= origins) & (coords < origins + patch_size)
    dist[~covered] = np.inf
    return np.argmin(dist, axis=0)


def plan_stitch(image_h: int, image_w: int, patch_size: int = 512, overlap: int = 256) -> StitchPlan:
    """Grid, padding and pixel ownership for one document.

    Images smaller than a patch are reflect-padded at the bottom/right; larger
    ones are covered with a flush final origin and need no padding.
    """
    if patch_size % 8:
        raise ValueError(f"patch_size {patch_size} must be divisible by 8")
    if not 0 <= overlap < patch_size:
        raise ValueError(f"overlap must satisfy 0 <= overlap < patch_size, got {overlap}")
    pad_bottom = max(0, patch_size - image_h)
    pad_right = max(0, patch_size - image_w)
    grid = make_grid(image_h + pad_bottom, image_w + pad_right, patch_size, patch_size - overlap)
    return StitchPlan(
        grid=grid,
        pad_top=0,
        pad_left=0,
        pad_bottom=pad_bottom,
        pad_right=pad_right,
        row_owner=nearest_center_owner(grid.image_height, grid.row_origins, patch_size),
        col_owner=nearest_center_owner(grid.image_width, grid.col_origins, patch_size),
    )


def _match_channels(model, image: np.ndarray) -> np.ndarray:
    cfg = getattr(model, "cfg", None)
    want = getattr(cfg, "in_channels", image.shape[2])
    if want == image.shape[2]:
        return image
    if want == 3:
        return np.repeat(image, 3, axis=2)
    return to_gray(image)[:, :, None]


def predict_document(model, image: np.ndarray, patch_size: int = 512, overlap: int = 256,
                     batch_size: int = 4, order=None) -> np.ndarray:
    """Stitched probability map ``(H, W)`` for a whole image.

    ``order`` permutes the patch processing sequence; the result does not
    depend on it or on ``batch_size``.
    """
    image = _match_channels(model, validate_image(image))
    h, w = image.shape[:2]
    plan = plan_stitch(h, w, patch_size, overlap)
    padded, _ = reflect_pad(image, plan.grid.image_height, plan.grid.image_width)
    grid = plan.grid
    out = np.zeros((grid.image_height, grid.image_width), dtype=np.float32)
    indices = [i for i in (range(len(grid)) if order is None else order)
               if plan.owned_region(i) is not None]
    for start in range(0, len(indices), batch_size):
        batch = indices[start:start + batch_size]
        patches = np.stack([padded[grid.slices(i)] for i in batch])
        try:
            probs = predict_patches(model, patches)
        except NumericError as exc:
            origins = [grid.origins[i] for i in batch]
            raise NumericError(f"{exc} (patches at origins {origins})") from exc
        for i, prob in zip(batch, probs):
            rows, cols = plan.owned_region(i)
            r0, c0 = grid.origins[i]
            out[rows, cols] = prob[rows.start - r0:rows.stop - r0, cols.start - c0:cols.stop - c0]
    return out[:h, :w]


def binarize_document(model, image: np.ndarray, patch_size: int = 512, overlap: int = 256,
                      threshold: float = 0.5, batch_size: int = 4, order=None,
                      return_probabilities: bool = False):
    """Binary ink mask for ``image``; probabilities ``>= threshold`` count as ink."""
    prob = predict_document(model, image, patch_size, overlap, batch_size, order)
    mask = (prob >= threshold).astype(np.uint8)
    if return_probabilities:
        return mask, prob
    return mask


def sweep_patch_sizes(model, dataset, sizes, overlap_mode: str = "half",
                      threshold: float = 0.5) -> dict[int, MetricReport]:
    """Evaluate the model at several inference patch sizes.

    ``overlap_mode="half"`` uses an overlap of ``size // 2``; ``"none"``
    tiles without overlap.
    """
    if overlap_mode not in ("half", "none"):
        raise ValueError(f"overlap_mode must be 'half' or 'none', got {overlap_mode!r}")
    reports = {}
    for size in sizes:
        if size % 8:
            raise ValueError(f"patch size {size} must be divisible by 8")
        overlap = size // 2 if overlap_mode == "half" else 0
        report = MetricReport(label=f"patch={size} overlap={overlap}")
        for sample in dataset:
            pred = binarize_document(model, sample.image, size, overlap, threshold)
            report.per_image.append(evaluate_pair(pred, sample.mask, sample.source_id))
        reports[size] = report
    return reports


def sweep_table(reports: dict[int, MetricReport]) -> str:
    """Plot-ready CSV with one row per patch size."""
    lines = ["patch_size,fm,pfm,psnr,drd"]
    for size, report in reports.items():
        agg = report.aggregate
        lines.append(f"{size},{agg['fm']:.4f},{agg['pfm']:.4f},{agg['psnr']:.4f},{agg['drd']:.4f}")
    return "\n".join(lines) + "\n"
