"""Image and mask rasters, file I/O and patch-grid geometry.

Images are ``float32`` arrays of shape ``(H, W, C)`` with ``C`` in ``{1, 3}``
and values in ``[0, 1]``.  Masks are ``uint8`` arrays of shape ``(H, W)``
holding ``1`` for ink and ``0`` for background.  On disk, masks follow the
DIBCO convention: black (0) ink on white (255) background.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import imageio.v3 as iio
import numpy as np
from PIL import Image as PILImage

SUPPORTED_SUFFIXES = {".png", ".tif", ".tiff", ".bmp", ".jpg", ".jpeg"}


class ImageFormatError(ValueError):
    """Raised for files whose format or bit depth is not supported."""


class MaskValidationError(ValueError):
    """Raised when a raster cannot be interpreted as a two-valued mask."""


def validate_image(image: np.ndarray) -> np.ndarray:
    """Check the image invariants and return the array as ``float32``."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ValueError(f"image must be HxWx1 or HxWx3, got shape {image.shape}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError(f"image must be non-empty, got shape {image.shape}")
    if not np.all(np.isfinite(image)) or image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("image values must be finite and within [0, 1]")
    return image.astype(np.float32, copy=False)


def validate_mask(mask: np.ndarray) -> np.ndarray:
    """Check the mask invariants and return the array as ``uint8``."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be two-dimensional, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise MaskValidationError("mask values must be 0 (background) or 1 (ink)")
    return mask.astype(np.uint8, copy=False)


def _read_raw(path: Path) -> np.ndarray:
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise ImageFormatError(f"{path}: unsupported format {path.suffix!r}")
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    try:
        raw = iio.imread(path)
    except Exception as exc:  # imageio raises a zoo of plugin-specific errors
        raise OSError(f"{path}: cannot decode image ({exc})") from exc
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    elif raw.dtype == bool:
        raw, scale = raw.astype(np.uint8), 1.0
    else:
        raise ImageFormatError(f"{path}: unsupported sample type {raw.dtype}")
    data = raw.astype(np.float32) / np.float32(scale)
    if data.ndim == 2:
        data = data[:, :, None]
    elif data.ndim == 3 and data.shape[2] in (2, 4):
        data = data[:, :, :-1]  # drop alpha
    if data.ndim != 3 or data.shape[2] not in (1, 3):
        raise ImageFormatError(f"{path}: unsupported raster shape {raw.shape}")
    return data


def load_image(path) -> np.ndarray:
    """Read an 8- or 16-bit PNG/TIFF/BMP/JPEG file as an ``(H, W, C)`` image.

    8-bit samples are divided by 255 and 16-bit samples by 65535; grayscale
    files keep a single channel.
    """
    return validate_image(_read_raw(Path(path)))


def to_gray(image: np.ndarray) -> np.ndarray:
    """Luma (ITU-R BT.601) of an image, shape ``(H, W)``."""
    if image.shape[2] == 1:
        return image[:, :, 0]
    weights = np.array([0.299, 0.587, 0.114], dtype=np.float32)
    return image @ weights


def load_mask(path, ink_is_dark: bool = True, tolerant: bool = False) -> np.ndarray:
    """Read a ground-truth or prediction raster as a binary mask.

    In strict mode the grayscale raster must hold at most two distinct values;
    ``tolerant=True`` snaps any value to the nearest pole instead.
    """
    gray = to_gray(_read_raw(Path(path)))
    if not tolerant:
        n_values = np.unique(gray).size
        if n_values > 2:
            raise MaskValidationError(
                f"{path}: mask has {n_values} distinct values, expected at most 2"
            )
    dark = gray < 0.5
    return (dark if ink_is_dark else ~dark).astype(np.uint8)


def save_mask(mask: np.ndarray, path) -> None:
    """Write a mask as an 8-bit grayscale PNG with ink=0 and background=255."""
    mask = validate_mask(mask)
    encoded = np.where(mask == 1, 0, 255).astype(np.uint8)
    try:
        PILImage.fromarray(encoded, mode="L").save(Path(path), format="PNG")
    except OSError as exc:
        raise OSError(f"{path}: cannot write mask ({exc})") from exc


def save_image(image: np.ndarray, path) -> None:
    """Write an image as an 8-bit PNG (rounded to the nearest level)."""
    image = validate_image(image)
    encoded = np.round(image * 255.0).astype(np.uint8)
    if encoded.shape[2] == 1:
        encoded = encoded[:, :, 0]
    PILImage.fromarray(encoded).save(Path(path), format="PNG")


def axis_origins(dim: int, patch_size: int, stride: int) -> list[int]:
    """Patch origins along one axis, with a flush final origin when needed."""
    if patch_size < 1 or dim < 1:
        raise ValueError("patch_size and dim must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if stride > patch_size:
        raise ValueError(
            f"stride {stride} > patch_size {patch_size} would leave coverage gaps"
        )
    if dim <= patch_size:
        return [0]
    last = dim - patch_size
    origins = list(range(0, last + 1, stride))
    if origins[-1] != last:
        origins.append(last)
    return origins


@dataclass(frozen=True)
class PatchGrid:
    """Row-major lattice of square patches covering an image."""

    image_height: int
    image_width: int
    patch_size: int
    stride: int
    row_origins: tuple[int, ...]
    col_origins: tuple[int, ...]

    @property
    def origins(self) -> list[tuple[int, int]]:
        return [(r, c) for r in self.row_origins for c in self.col_origins]

    def __len__(self) -> int:
        return len(self.row_origins) * len(self.col_origins)

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(self.origins)

    def slices(self, index: int) -> tuple[slice, slice]:
        r, c = self.origins[index]
        return slice(r, r + self.patch_size), slice(c, c + self.patch_size)


def make_grid(image_h: int, image_w: int, patch_size: int, stride: int) -> PatchGrid:
    """Build the patch grid for an image of ``image_h`` x ``image_w`` pixels.

    Origins step by ``stride``; when ``dim - patch_size`` is not a multiple
    of the stride an extra origin flush with the far edge is appended.
    Dimensions smaller than the patch must be padded by the caller.
    """
    if image_h < patch_size or image_w < patch_size:
        raise ValueError(
            f"image {image_h}x{image_w} is smaller than patch {patch_size}; pad first"
        )
    return PatchGrid(
        image_height=image_h,
        image_width=image_w,
        patch_size=patch_size,
        stride=stride,
        row_origins=tuple(axis_origins(image_h, patch_size, stride)),
        col_origins=tuple(axis_origins(image_w, patch_size, stride)),
    )


def reflect_pad(array: np.ndarray, min_h: int, min_w: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad the bottom/right edges so the array is at least ``min_h`` x ``min_w``.

    Returns the padded array and the ``(bottom, right)`` pad amounts.
    """
    pad_b = max(0, min_h - array.shape[0])
    pad_r = max(0, min_w - array.shape[1])
    if pad_b == 0 and pad_r == 0:
        return array, (0, 0)
    widths = [(0, pad_b), (0, pad_r)] + [(0, 0)] * (array.ndim - 2)
    # numpy's reflect needs at least two samples along an axis
    mode = "reflect" if min(array.shape[:2]) > 1 else "edge"
    return np.pad(array, widths, mode=mode), (pad_b, pad_r)
