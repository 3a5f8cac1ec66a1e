"""Dataset ingestion, training-patch extraction, augmentation and a synthetic
degraded-document generator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import ImageDraw
from scipy import ndimage
from skimage.color import hsv2rgb, rgb2hsv
from skimage.transform import resize

from .imagecore import (
    SUPPORTED_SUFFIXES,
    load_image,
    load_mask,
    make_grid,
    reflect_pad,
    save_image,
    save_mask,
)

TRAIN_PATCH = 384
TRAIN_STRIDE = 192
MANIFEST_NAME = "manifest.tsv"


class PairingError(ValueError):
    """Raised when images and ground-truth files cannot be matched one-to-one."""


class SampleValidationError(ValueError):
    """Raised when an image and its ground truth are not spatially congruent."""


@dataclass(frozen=True)
class PairedSample:
    image: np.ndarray  # (H, W, C) float32 in [0, 1]
    mask: np.ndarray  # (H, W) uint8, 1 = ink
    source_id: str = ""

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise SampleValidationError(
                f"{self.source_id}: image {self.image.shape[:2]} vs mask {self.mask.shape}"
            )


# -- ingestion -----------------------------------------------------------


def _image_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in SUPPORTED_SUFFIXES)


def pair_files(image_dir, gt_dir, gt_suffix: str = "_gt") -> list[tuple[str, Path, Path]]:
    """Match ``<stem>.<ext>`` in ``image_dir`` with ``<stem><gt_suffix>.<ext>`` in ``gt_dir``."""
    image_dir, gt_dir = Path(image_dir), Path(gt_dir)
    for d in (image_dir, gt_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"{d}: not a directory")
    gt_files = _image_files(gt_dir)
    suffixed = [p for p in gt_files if gt_suffix and p.stem.endswith(gt_suffix)]
    # with any suffixed file present, unsuffixed ones are not ground truth
    gt_files = suffixed or gt_files
    gts: dict[str, list[Path]] = {}
    for p in gt_files:
        stem = p.stem[: -len(gt_suffix)] if p in suffixed else p.stem
        gts.setdefault(stem, []).append(p)
    gt_set = set(gt_files)
    pairs, orphans, ambiguous = [], [], []
    for img in _image_files(image_dir):
        if img in gt_set:
            continue
        matches = gts.get(img.stem, [])
        if not matches:
            orphans.append(img.stem)
        elif len(matches) > 1:
            ambiguous.append(img.stem)
        else:
            pairs.append((img.stem, img, matches[0]))
    if orphans or ambiguous:
        raise PairingError(f"unmatched images: {orphans}; ambiguous ground truth: {ambiguous}")
    return pairs


def _load_pair(source_id: str, image_path: Path, gt_path: Path) -> PairedSample:
    image = load_image(image_path)
    mask = load_mask(gt_path)
    if image.shape[:2] != mask.shape:
        raise SampleValidationError(
            f"{image_path} is {image.shape[0]}x{image.shape[1]} but "
            f"{gt_path} is {mask.shape[0]}x{mask.shape[1]}"
        )
    return PairedSample(image, mask, source_id)


def ingest_dataset(image_dir, gt_dir, gt_suffix: str = "_gt") -> list[PairedSample]:
    """Load DIBCO-style paired folders, ordered by image stem."""
    return [_load_pair(*triple) for triple in pair_files(image_dir, gt_dir, gt_suffix)]


def read_manifest(path) -> list[tuple[str, Path, Path]]:
    """Parse ``image<TAB>gt`` lines; relative paths resolve against the manifest's folder."""
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise PairingError(f"{path}:{lineno}: expected 'image<TAB>gt', got {line!r}")
        img, gt = (Path(p) if Path(p).is_absolute() else path.parent / p for p in parts)
        entries.append((img.stem, img, gt))
    return entries


def ingest_manifest(path) -> list[PairedSample]:
    return [_load_pair(*triple) for triple in read_manifest(path)]


def write_manifest(pairs, path) -> None:
    lines = [f"{img}\t{gt}" for img, gt in pairs]
    Path(path).write_text("\n".join(lines) + "\n")


# -- patches and augmentation -------------------------------------------


def extract_training_patches(sample: PairedSample, patch_size: int = TRAIN_PATCH,
                             stride: int = TRAIN_STRIDE) -> list[PairedSample]:
    """Cut a sample into overlapping square patches on the training grid.

    Samples smaller than the patch are reflect-padded (bottom/right) first.
    """
    image, _ = reflect_pad(sample.image, patch_size, patch_size)
    mask, _ = reflect_pad(sample.mask, patch_size, patch_size)
    grid = make_grid(image.shape[0], image.shape[1], patch_size, stride)
    patches = []
    for i, (r, c) in enumerate(grid):
        rows, cols = grid.slices(i)
        patches.append(PairedSample(image[rows, cols], mask[rows, cols],
                                    f"{sample.source_id}@{r},{c}"))
    return patches


@dataclass(frozen=True)
class AugmentConfig:
    rotation_degrees: float = 10.0
    resize_crop_scale: tuple[float, float] = (0.75, 1.333)
    jitter_factor: float = 0.5
    out_size: int = 256
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.resize_crop_scale
        if not 0 < lo <= hi:
            raise ValueError(f"resize_crop_scale must satisfy 0 < lo <= hi, got {self.resize_crop_scale}")
        if self.out_size % 8:
            raise ValueError("out_size must be divisible by 8")
        if self.rotation_degrees < 0 or self.jitter_factor < 0:
            raise ValueError("rotation_degrees and jitter_factor must be >= 0")


def color_jitter(image: np.ndarray, factor: float, rng: np.random.Generator) -> np.ndarray:
    """Brightness, contrast, saturation and hue perturbations, in that order.

    Brightness/contrast/saturation multiply by a factor drawn from
    ``[1 - factor, 1 + factor]``; hue rotates by up to ``factor / 2`` of the
    colour circle.  Saturation and hue are skipped for grayscale images.
    """
    if factor == 0:
        return image
    out = image.astype(np.float32)
    lo, hi = max(0.0, 1.0 - factor), 1.0 + factor

    out = np.clip(out * rng.uniform(lo, hi), 0, 1)
    mean = out.mean()
    out = np.clip((out - mean) * rng.uniform(lo, hi) + mean, 0, 1)
    if out.shape[2] == 3:
        gray = out.mean(axis=2, keepdims=True)
        out = np.clip((out - gray) * rng.uniform(lo, hi) + gray, 0, 1)
        shift = rng.uniform(-factor / 2, factor / 2)
        hsv = rgb2hsv(out)
        hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
        out = np.clip(hsv2rgb(hsv), 0, 1)
    return out.astype(np.float32)


def augment(patch: PairedSample, cfg: AugmentConfig, rng: np.random.Generator) -> PairedSample:
    """Random rotation, resize-and-crop to ``cfg.out_size``, then colour jitter.

    Geometric steps move image and mask together (bilinear / nearest);
    jitter only touches the image, so the mask stays strictly binary.
    """
    image, mask = patch.image, patch.mask
    angle = rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees)
    if angle != 0:
        image = ndimage.rotate(image, angle, axes=(1, 0), reshape=False, order=1, mode="reflect")
        mask = ndimage.rotate(mask, angle, axes=(1, 0), reshape=False, order=0,
                              mode="constant", cval=0)

    lo, hi = cfg.resize_crop_scale
    scale = math.exp(rng.uniform(math.log(lo), math.log(hi)))
    h, w = mask.shape
    new_h = max(cfg.out_size, int(round(h * scale)))
    new_w = max(cfg.out_size, int(round(w * scale)))
    if (new_h, new_w) != (h, w):
        image = resize(image, (new_h, new_w), order=1, mode="reflect", anti_aliasing=False,
                       preserve_range=True)
        mask = resize(mask, (new_h, new_w), order=0, mode="edge", anti_aliasing=False,
                      preserve_range=True)
    top = int(rng.integers(0, new_h - cfg.out_size + 1))
    left = int(rng.integers(0, new_w - cfg.out_size + 1))
    crop = np.s_[top:top + cfg.out_size, left:left + cfg.out_size]
    image = np.clip(image[crop], 0, 1).astype(np.float32)
    mask = (mask[crop] > 0).astype(np.uint8)

    image = color_jitter(image, cfg.jitter_factor, rng)
    return PairedSample(image, mask, patch.source_id)


# -- synthetic corpus ----------------------------------------------------


def _glyph(draw: ImageDraw.ImageDraw, rng: np.random.Generator, x: float, y: float,
           w: float, h: float, stroke: int) -> None:
    """A pseudo-character made of 1-3 connected polyline or arc strokes."""
    for _ in range(int(rng.integers(1, 4))):
        if rng.random() < 0.35:
            box = [x + rng.uniform(0, w * 0.3), y + rng.uniform(0, h * 0.3),
                   x + w * rng.uniform(0.6, 1.0), y + h * rng.uniform(0.6, 1.0)]
            start = rng.uniform(0, 360)
            draw.arc(box, start, start + rng.uniform(120, 300), fill=255, width=stroke)
        else:
            n = int(rng.integers(2, 5))
            pts = [(x + rng.uniform(0, w), y + rng.uniform(0, h)) for _ in range(n)]
            draw.line(pts, fill=255, width=stroke, joint="curve")


def render_strokes(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Lines of pseudo-text as a binary ink mask (1 = ink)."""
    canvas = PILImage.new("L", (width, height), 0)
    draw = ImageDraw.Draw(canvas)
    x_height = rng.uniform(10, 18)
    spacing = x_height * rng.uniform(1.8, 2.8)
    stroke = int(rng.integers(2, 4))
    margin = rng.uniform(12, 40)
    y = margin
    while y + x_height < height - margin:
        x = margin + rng.uniform(0, 30)
        line_end = width - margin - rng.uniform(0, width * 0.3)
        while x < line_end:
            for _ in range(int(rng.integers(2, 8))):
                gw = x_height * rng.uniform(0.6, 1.1)
                if x + gw > line_end:
                    break
                _glyph(draw, rng, x, y + rng.uniform(-1.5, 1.5), gw, x_height, stroke)
                x += gw + rng.uniform(0.5, 3)
            x += x_height * rng.uniform(0.8, 1.6)
        y += spacing
    return (np.asarray(canvas) > 127).astype(np.uint8)


def _smooth_field(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    field = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return field / (field.std() + 1e-12)


def degrade(mask: np.ndarray, bleed: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Render a degraded RGB page for ``mask``, with ``bleed`` showing through.

    The ground truth is never modified here: every degradation acts on the
    rendered image only.
    """
    h, w = mask.shape
    paper = np.array([rng.uniform(0.82, 0.95), rng.uniform(0.76, 0.9), rng.uniform(0.62, 0.82)])
    texture = 1.0 + 0.03 * _smooth_field(rng, (h, w), 12) + 0.015 * rng.standard_normal((h, w))
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    gy, gx = rng.uniform(-0.25, 0.25, size=2)
    illumination = 1.0 + gy * (yy - 0.5) + gx * (xx - 0.5) - rng.uniform(0, 0.2) * ((yy - 0.5) ** 2 + (xx - 0.5) ** 2)
    image = paper[None, None, :] * (texture * illumination)[:, :, None]

    ink_level = rng.uniform(0.05, 0.35)
    ink = np.array([ink_level + rng.uniform(0, 0.1), ink_level + rng.uniform(0, 0.05), ink_level])

    # bleed-through: mirrored strokes from the reverse side, faded and blurred
    opacity = rng.uniform(0.15, 0.45)
    bleed_alpha = opacity * ndimage.gaussian_filter(bleed[:, ::-1].astype(np.float64), rng.uniform(0.6, 1.6))
    image = image * (1 - bleed_alpha[:, :, None]) + ink[None, None, :] * bleed_alpha[:, :, None]

    for _ in range(int(rng.integers(0, 4))):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(20, h / 3), rng.uniform(20, w / 3)
        blob = np.exp(-(((np.arange(h)[:, None] - cy) / ry) ** 2 + ((np.arange(w)[None, :] - cx) / rx) ** 2))
        strength = rng.uniform(0.1, 0.3)
        stain = np.array([0.75, 0.6, 0.4])
        image = image * (1 - strength * blob[:, :, None] * (1 - stain[None, None, :]))

    # per-word fading is approximated by a smooth multiplicative field on the ink
    fade = np.clip(1 + 0.15 * _smooth_field(rng, (h, w), 20), 0.6, 1.2)
    ink_alpha = np.clip(mask * fade, 0, 1)[:, :, None]
    image = image * (1 - ink_alpha) + ink[None, None, :] * ink_alpha

    sigma = rng.uniform(0.0, 1.5)
    if sigma > 0.05:
        image = ndimage.gaussian_filter(image, (sigma, sigma, 0))
    contrast = rng.uniform(0.6, 1.0)
    mean = image.mean()
    image = (image - mean) * contrast + mean
    salt = rng.random((h, w)) < rng.uniform(0, 0.004)
    image[salt] = rng.uniform(0.85, 1.0)
    return np.clip(image, 0, 1).astype(np.float32)


def _stroke_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index, 0])


def synth_sample(seed: int, index: int, degradation_seed: int | None = None,
                 size: tuple[int, int] | None = None) -> PairedSample:
    """One synthetic page.  Strokes depend only on ``(seed, index)``;
    degradations on ``(degradation_seed or seed, index)``.

    Ink coverage is kept within 2-25% by re-drawing the layout.
    """
    rng = _stroke_rng(seed, index)
    if size is None:
        size = (int(rng.integers(448, 641)), int(rng.integers(448, 641)))
    h, w = size
    for _ in range(50):
        mask = render_strokes(rng, h, w)
        if 0.02 <= mask.mean() <= 0.25:
            break
    else:
        raise RuntimeError(f"could not render strokes with 2-25% coverage for sample {index}")
    # the reverse side is the next page's strokes
    bleed_rng = _stroke_rng(seed, index + 1_000_003)
    bleed = render_strokes(bleed_rng, h, w)
    deg_seed = seed if degradation_seed is None else degradation_seed
    image = degrade(mask, bleed, np.random.default_rng([deg_seed, index, 1]))
    image = (np.round(image * 255) / 255).astype(np.float32)  # what the PNG will hold
    return PairedSample(image, mask, f"{index:04d}")


def synth_corpus(n: int, seed: int, out_dir=None, start: int = 0,
                 size: tuple[int, int] | None = None) -> list[PairedSample]:
    """Generate ``n`` synthetic pages, optionally writing PNG pairs and a manifest.

    Files are ``<id>.png`` and ``<id>_gt.png`` plus ``manifest.tsv``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    samples = [synth_sample(seed, start + i, size=size) for i in range(n)]
    if out_dir is not None:
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"{out}: cannot create output directory ({exc})") from exc
        pairs = []
        for s in samples:
            save_image(s.image, out / f"{s.source_id}.png")
            save_mask(s.mask, out / f"{s.source_id}_gt.png")
            pairs.append((f"{s.source_id}.png", f"{s.source_id}_gt.png"))
        write_manifest(pairs, out / MANIFEST_NAME)
    return samples
