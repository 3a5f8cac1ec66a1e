"""DIBCO-style evaluation: F-measure, pseudo F-measure, PSNR and DRD.

All functions take binary masks with ink encoded as 1.  ``pred`` is always
the first argument and ``gt`` the second; pseudo F-measure and DRD are not
symmetric in them.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage
from skimage.morphology import thin

from .imagecore import validate_mask


class DegenerateGroundTruthError(ValueError):
    """DRD is undefined: the ground truth has no non-uniform 8x8 block."""


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred, gt = validate_mask(pred), validate_mask(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    return pred.astype(bool), gt.astype(bool)


def _f_score(precision_num: int, precision_den: int, recall_num: int, recall_den: int,
             gt_empty: bool, pred_empty: bool) -> float:
    if gt_empty and pred_empty:
        return 100.0
    if precision_den == 0 or recall_den == 0:
        return 0.0
    p = precision_num / precision_den
    r = recall_num / recall_den
    if p + r == 0:
        return 0.0
    return 100.0 * 2.0 * p * r / (p + r)


def f_measure(pred, gt) -> float:
    """F-measure in percent with ink as the positive class."""
    pred, gt = _pair(pred, gt)
    tp = int(np.count_nonzero(pred & gt))
    return _f_score(tp, int(pred.sum()), tp, int(gt.sum()),
                    gt_empty=not gt.any(), pred_empty=not pred.any())


def psnr(pred, gt) -> float:
    """PSNR in dB for masks of dynamic range 1; ``inf`` when they are identical."""
    pred, gt = _pair(pred, gt)
    mse = np.count_nonzero(pred != gt) / pred.size
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def drd_weights(size: int = 5) -> np.ndarray:
    """Normalized reciprocal-distance weight matrix with a zero center."""
    half = size // 2
    dr, dc = np.mgrid[-half:half + 1, -half:half + 1]
    dist = np.hypot(dr, dc)
    w = np.zeros_like(dist)
    w[dist > 0] = 1.0 / dist[dist > 0]
    return w / w.sum()


def count_nonuniform_blocks(gt, block: int = 8) -> int:
    """Number of ``block`` x ``block`` tiles of ``gt`` holding both ink and background.

    Partial tiles at the right/bottom edges are counted like full ones.
    """
    gt = np.asarray(gt).astype(bool)
    h, w = gt.shape
    hb, wb = -(-h // block), -(-w // block)
    padded_ink = np.zeros((hb * block, wb * block), dtype=np.int64)
    padded_n = np.zeros_like(padded_ink)
    padded_ink[:h, :w] = gt
    padded_n[:h, :w] = 1
    ink = padded_ink.reshape(hb, block, wb, block).sum(axis=(1, 3))
    n = padded_n.reshape(hb, block, wb, block).sum(axis=(1, 3))
    return int(np.count_nonzero((ink > 0) & (ink < n)))


def drd(pred, gt) -> float:
    """Distance Reciprocal Distortion.

    Each flipped pixel costs the weighted fraction of its 5x5 ground-truth
    neighbourhood that disagrees with its predicted value; the total is
    divided by the count of non-uniform 8x8 ground-truth blocks.  The ground
    truth is edge-replicated beyond its border.
    """
    pred, gt = _pair(pred, gt)
    flipped = pred != gt
    if not flipped.any():
        return 0.0
    nubn = count_nonuniform_blocks(gt)
    if nubn == 0:
        raise DegenerateGroundTruthError(
            "ground truth has no non-uniform 8x8 block; DRD is undefined with errors present"
        )
    ink_weight = ndimage.correlate(gt.astype(np.float64), drd_weights(), mode="nearest")
    # weights sum to 1: predicted ink disagrees with the background share
    per_pixel = np.where(pred, 1.0 - ink_weight, ink_weight)
    return float(per_pixel[flipped].sum() / nubn)


def skeletonize(gt) -> np.ndarray:
    """Connectivity-preserving morphological thinning of the ink region."""
    return thin(np.asarray(gt).astype(bool)).astype(np.uint8)


def pseudo_f_measure(pred, gt, gt_skeleton=None) -> float:
    """Pseudo F-measure in percent: plain precision with recall measured on
    the ground-truth skeleton.

    ``gt_skeleton`` defaults to :func:`skeletonize` of ``gt``.
    """
    pred, gt = _pair(pred, gt)
    if gt_skeleton is None:
        skel = skeletonize(gt).astype(bool)
    else:
        skel = validate_mask(gt_skeleton).astype(bool)
        if skel.shape != gt.shape:
            raise ValueError("skeleton and ground truth differ in shape")
        if (skel & ~gt).any():
            raise ValueError("skeleton is not a subset of the ground-truth ink")
    tp = int(np.count_nonzero(pred & gt))
    skel_hits = int(np.count_nonzero(pred & skel))
    return _f_score(tp, int(pred.sum()), skel_hits, int(skel.sum()),
                    gt_empty=not gt.any(), pred_empty=not pred.any())


def bin_average(grid: np.ndarray, bins: int = 16) -> np.ndarray:
    """Average-pool a 2-D array into ``bins`` x ``bins`` cells of near-equal size."""
    rows = np.array_split(np.arange(grid.shape[0]), bins)
    cols = np.array_split(np.arange(grid.shape[1]), bins)
    out = np.empty((bins, bins))
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            out[i, j] = grid[np.ix_(r, c)].mean()
    return out


def normalize_minmax(grid: np.ndarray) -> np.ndarray:
    lo, hi = grid.min(), grid.max()
    if hi == lo:
        return np.zeros_like(grid, dtype=np.float64)
    return (grid - lo) / (hi - lo)


def error_heatmap(model, samples, patch_size: int, bins: int = 16) -> np.ndarray:
    """Where inside a patch the model errs, on average.

    Every sample is cut on the non-overlapping patch lattice, each patch is
    predicted independently, and the per-location mean absolute error is
    pooled into ``bins`` x ``bins`` cells and min-max normalized.  A constant
    grid normalizes to all zeros.
    """
    from .imagecore import make_grid, reflect_pad
    from .network import predict_patches

    total = np.zeros((patch_size, patch_size))
    count = 0
    for sample in samples:
        image, _ = reflect_pad(sample.image, patch_size, patch_size)
        mask, _ = reflect_pad(sample.mask, patch_size, patch_size)
        grid = make_grid(image.shape[0], image.shape[1], patch_size, patch_size)
        patches = np.stack([image[grid.slices(i)] for i in range(len(grid))])
        probs = predict_patches(model, patches)
        for i in range(len(grid)):
            total += np.abs(probs[i] - mask[grid.slices(i)])
            count += 1
    if count == 0:
        raise ValueError("no samples to evaluate")
    return normalize_minmax(bin_average(total / count, bins))


# -- reports -------------------------------------------------------------


@dataclass(frozen=True)
class ImageScores:
    source_id: str
    fm: float
    pfm: float
    psnr: float
    drd: float


def evaluate_pair(pred, gt, source_id: str = "") -> ImageScores:
    return ImageScores(
        source_id=source_id,
        fm=f_measure(pred, gt),
        pfm=pseudo_f_measure(pred, gt),
        psnr=psnr(pred, gt),
        drd=drd(pred, gt),
    )


METRIC_NAMES = ("fm", "pfm", "psnr", "drd")


def _fmt(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"


@dataclass
class MetricReport:
    per_image: list[ImageScores] = field(default_factory=list)
    label: str = ""

    @property
    def aggregate(self) -> dict[str, float]:
        if not self.per_image:
            return {name: math.nan for name in METRIC_NAMES}
        n = len(self.per_image)
        return {
            name: math.fsum(getattr(s, name) for s in self.per_image) / n
            for name in METRIC_NAMES
        }

    def to_text(self) -> str:
        lines = [f"# report {self.label}".rstrip()]
        for s in self.per_image:
            fields = " ".join(f"{k}={_fmt(getattr(s, k))}" for k in METRIC_NAMES)
            lines.append(f"image {s.source_id} {fields}")
        agg = self.aggregate
        lines.append("[aggregate]")
        lines.append(f"count={len(self.per_image)}")
        for k in METRIC_NAMES:
            lines.append(f"{k}={_fmt(agg[k])}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["source_id", *METRIC_NAMES])
        for s in self.per_image:
            writer.writerow([s.source_id, *(_fmt(getattr(s, k)) for k in METRIC_NAMES)])
        agg = self.aggregate
        writer.writerow(["__aggregate__", *(_fmt(agg[k]) for k in METRIC_NAMES)])
        return buf.getvalue()

    def rows(self) -> list[dict]:
        return [asdict(s) for s in self.per_image]
