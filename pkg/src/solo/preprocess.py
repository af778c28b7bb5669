"""Patch-aligned image resizing and raw-pixel patch extraction.

Images are held as ``(height, width, 3)`` uint8 arrays. Dimensions are
reported as ``(width, height)`` pairs, so ``ImageDims.l1`` is the width
and ``ImageDims.l2`` the height; a patch grid has ``width // P`` columns
and ``height // P`` rows.
"""
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_positive_int, check_uint8_image
from .errors import AlignmentError, InvalidInputError

DEFAULT_PATCH_SIZE = 32
DEFAULT_MAX_RESOLUTION = 1024


@dataclass(frozen=True)
class ImageDims:
    l1: int
    l2: int

    def __post_init__(self):
        check_positive_int(self.l1, "l1")
        check_positive_int(self.l2, "l2")

    @property
    def width(self):
        return self.l1

    @property
    def height(self):
        return self.l2

    def __iter__(self):
        return iter((self.l1, self.l2))


@dataclass(frozen=True)
class PreprocessConfig:
    patch_size: int = DEFAULT_PATCH_SIZE
    max_resolution: int = DEFAULT_MAX_RESOLUTION

    def __post_init__(self):
        check_positive_int(self.patch_size, "patch_size")
        check_positive_int(self.max_resolution, "max_resolution")
        if self.max_resolution % self.patch_size:
            raise InvalidInputError(
                f"max_resolution {self.max_resolution} is not a multiple of "
                f"patch_size {self.patch_size}"
            )


@dataclass(frozen=True, eq=False)
class RawImage:
    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", check_uint8_image(self.pixels))

    @property
    def dims(self):
        h, w = self.pixels.shape[:2]
        return ImageDims(w, h)

    def __eq__(self, other):
        if not isinstance(other, RawImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class PatchGrid:
    """``rows * cols`` patches of shape ``(P, P, 3)``, stored row-major."""

    rows: int
    cols: int
    patches: np.ndarray = field(repr=False)

    def __post_init__(self):
        check_positive_int(self.rows, "rows")
        check_positive_int(self.cols, "cols")
        p = np.asarray(self.patches)
        if p.ndim != 4 or p.shape[0] != self.rows * self.cols or p.shape[3] != 3 or p.shape[1] != p.shape[2]:
            raise InvalidInputError(
                f"patches of shape {p.shape} do not form a {self.rows}x{self.cols} grid"
            )
        object.__setattr__(self, "patches", np.ascontiguousarray(p, dtype=np.uint8))

    @property
    def patch_size(self):
        return self.patches.shape[1]

    def __len__(self):
        return self.rows * self.cols

    def patch(self, row, col):
        return self.patches[row * self.cols + col]

    def __eq__(self, other):
        if not isinstance(other, PatchGrid):
            return NotImplemented
        return (self.rows, self.cols) == (other.rows, other.cols) and np.array_equal(
            self.patches, other.patches
        )


def _as_dims(dims):
    if isinstance(dims, ImageDims):
        return dims
    try:
        l1, l2 = dims
    except (TypeError, ValueError):
        raise InvalidInputError(f"expected a (l1, l2) pair, got {dims!r}") from None
    return ImageDims(l1, l2)


def resize_output_dims(dims, cfg=PreprocessConfig()):
    """Target size for ``dims`` that keeps the aspect ratio and is patch aligned.

    The long side becomes the next multiple of the patch size strictly above
    it (an already aligned side still grows by one patch), capped at the
    maximum resolution. The short side is scaled by the same ratio and then
    bumped to the next multiple above. Axis order of the input is preserved.

    >>> resize_output_dims((640, 480))
    ImageDims(l1=672, l2=512)
    """
    l1, l2 = _as_dims(dims)
    o1, o2 = _resize_core(l1, l2, cfg.patch_size, cfg.max_resolution)
    return ImageDims(int(o1), int(o2))


def resize_output_dims_array(l1, l2, cfg=PreprocessConfig()):
    """Vectorized :func:`resize_output_dims` over integer arrays of widths and heights."""
    l1 = np.asarray(l1, dtype=np.int64)
    l2 = np.asarray(l2, dtype=np.int64)
    if l1.size and (l1.min() < 1 or l2.min() < 1):
        raise InvalidInputError("image dimensions must be positive")
    return _resize_core(l1, l2, cfg.patch_size, cfg.max_resolution)


def _resize_core(l1, l2, p, m):
    # floor division equals int() truncation here: all operands are positive
    swap = l2 > l1
    short = np.where(swap, l1, l2)
    long = np.where(swap, l2, l1)
    new_long = np.minimum((long // p + 1) * p, m)
    new_short = (new_long * short // long // p + 1) * p
    return np.where(swap, new_short, new_long), np.where(swap, new_long, new_short)


def _sample_axis(n_in, n_out):
    """Integer bilinear taps along one axis with edge clamping.

    Output pixel ``j`` samples source coordinate ``(j + 0.5) * n_in / n_out - 0.5``.
    Returned as ``(lo, hi, w_hi, denom)`` so that the value is
    ``(src[lo] * (denom - w_hi) + src[hi] * w_hi) / denom`` exactly.
    """
    denom = 2 * n_out
    num = (2 * np.arange(n_out, dtype=np.int64) + 1) * n_in - n_out
    lo = num // denom
    frac = num - lo * denom
    low_edge = num < 0
    lo[low_edge] = 0
    frac[low_edge] = 0
    high_edge = lo >= n_in - 1
    lo[high_edge] = n_in - 1
    frac[high_edge] = 0
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, frac, denom


def bilinear_resize(pixels, width, height):
    """Resample an ``(H, W, 3)`` uint8 array to ``(height, width, 3)``.

    Uses exact integer arithmetic with round-half-up, so the result does not
    depend on floating point evaluation order and mirroring commutes with
    resizing.
    """
    src = check_uint8_image(pixels).astype(np.int64)
    in_h, in_w = src.shape[:2]
    y0, y1, wy, dy = _sample_axis(in_h, height)
    x0, x1, wx, dx = _sample_axis(in_w, width)
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    top = src[y0][:, x0] * (dx - wx) + src[y0][:, x1] * wx
    bottom = src[y1][:, x0] * (dx - wx) + src[y1][:, x1] * wx
    acc = top * (dy - wy) + bottom * wy
    denom = dx * dy
    return ((acc + denom // 2) // denom).astype(np.uint8)


def resize_image(img, cfg=PreprocessConfig()):
    target = resize_output_dims(img.dims, cfg)
    return RawImage(bilinear_resize(img.pixels, target.width, target.height))


def extract_patches(img, cfg=PreprocessConfig()):
    p = cfg.patch_size
    h, w = img.pixels.shape[:2]
    if h % p or w % p:
        raise AlignmentError(f"image {w}x{h} is not aligned to patch size {p}")
    rows, cols = h // p, w // p
    blocks = img.pixels.reshape(rows, p, cols, p, 3).transpose(0, 2, 1, 3, 4)
    return PatchGrid(rows, cols, blocks.reshape(rows * cols, p, p, 3))


def reassemble(grid):
    """Inverse of :func:`extract_patches`."""
    p = grid.patch_size
    blocks = grid.patches.reshape(grid.rows, grid.cols, p, p, 3).transpose(0, 2, 1, 3, 4)
    return RawImage(blocks.reshape(grid.rows * p, grid.cols * p, 3))


def decode_image(path):
    """Read an image file into a :class:`RawImage`.

    Alpha is composited over black; every other mode is converted to RGB.
    """
    with Image.open(path) as im:
        im.load()
        if im.mode in ("RGBA", "LA", "PA") or (im.mode == "P" and "transparency" in im.info):
            rgba = np.asarray(im.convert("RGBA"), dtype=np.uint16)
            rgb = (rgba[..., :3] * rgba[..., 3:4] + 127) // 255
            return RawImage(rgb.astype(np.uint8))
        return RawImage(np.asarray(im.convert("RGB")))


def probe_dims(path):
    """Return the ``(width, height)`` of an image file without decoding pixels."""
    with Image.open(path) as im:
        return ImageDims(*im.size)


def preprocess_image(img, cfg=PreprocessConfig()):
    """Resize then patchify; the full ingestion path for one decoded image."""
    return extract_patches(resize_image(img, cfg), cfg)


class ImageResizer(TransformerMixin, BaseEstimator):
    """Resize a batch of images to patch-aligned sizes.

    Stateless; ``fit`` only validates the parameters.
    """

    def __init__(self, patch_size=DEFAULT_PATCH_SIZE, max_resolution=DEFAULT_MAX_RESOLUTION):
        self.patch_size = patch_size
        self.max_resolution = max_resolution

    def _config(self):
        return PreprocessConfig(self.patch_size, self.max_resolution)

    def fit(self, X=None, y=None):
        self.config_ = self._config()
        return self

    def transform(self, X):
        cfg = self._config()
        return [resize_image(_as_raw(x), cfg) for x in X]


class PatchExtractor(TransformerMixin, BaseEstimator):
    """Resize (optionally) and split images into :class:`PatchGrid` objects."""

    def __init__(self, patch_size=DEFAULT_PATCH_SIZE, max_resolution=DEFAULT_MAX_RESOLUTION, resize=True):
        self.patch_size = patch_size
        self.max_resolution = max_resolution
        self.resize = resize

    def fit(self, X=None, y=None):
        self.config_ = PreprocessConfig(self.patch_size, self.max_resolution)
        return self

    def transform(self, X):
        cfg = PreprocessConfig(self.patch_size, self.max_resolution)
        out = []
        for x in X:
            img = _as_raw(x)
            if self.resize:
                img = resize_image(img, cfg)
            out.append(extract_patches(img, cfg))
        return out


def _as_raw(x):
    return x if isinstance(x, RawImage) else RawImage(x)
