"""Image conditioning (normalize, CLAHE, resize/pad) and training-time augmentation.

Images are 2-D float arrays indexed ``[row, col]``; sizes are given as
``(width, height)`` tuples to match how resolutions are usually quoted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

PAPER_TARGET = (512, 1024)
DESK_TARGET = (128, 256)


@dataclass(frozen=True)
class ClaheParams:
    clip_limit: float = 2.0
    tiles: tuple = (8, 8)  # (columns, rows)
    bins: int = 256

    def __post_init__(self):
        object.__setattr__(self, "tiles", tuple(int(t) for t in self.tiles))
        if self.clip_limit < 1:
            raise ValueError(f"clip_limit must be >= 1, got {self.clip_limit}")
        if len(self.tiles) != 2 or min(self.tiles) < 1:
            raise ValueError(f"tiles must be two counts >= 1, got {self.tiles}")
        if self.bins < 2:
            raise ValueError(f"bins must be >= 2, got {self.bins}")


@dataclass(frozen=True)
class ResizeSpec:
    target: tuple = PAPER_TARGET  # (width, height)
    pad_value: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "target", tuple(int(t) for t in self.target))
        if len(self.target) != 2 or min(self.target) < 1:
            raise ValueError(f"target dimensions must be >= 1, got {self.target}")


@dataclass(frozen=True)
class AugmentConfig:
    rotation_max_deg: float = 15.0
    vflip_prob: float = 0.5
    blur_prob: float = 0.3
    blur_sigma_max: float = 1.5
    brightness_delta_max: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("vflip_prob", "blur_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("rotation_max_deg", "blur_sigma_max", "brightness_delta_max"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def identity(cls, seed=0):
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, seed)


@dataclass(frozen=True)
class PreprocessConfig:
    clahe: ClaheParams = ClaheParams()
    resize: ResizeSpec = ResizeSpec(DESK_TARGET)


def normalize_intensity(raw):
    """Min-max scale to [0, 1]; a constant image becomes all zeros."""
    x = np.asarray(raw, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot normalize an empty image")
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def _tile_edges(n, k):
    return (np.arange(k + 1) * n) // k


def _blend_axis(n, edges):
    """Per-coordinate (lower tile, upper tile, upper weight) between tile centers."""
    centers = (edges[:-1] + edges[1:] - 1) / 2.0
    pos = np.arange(n, dtype=np.float64)
    lo = np.clip(np.searchsorted(centers, pos, side="right") - 1, 0, len(centers) - 1)
    hi = np.minimum(lo + 1, len(centers) - 1)
    span = np.where(hi > lo, centers[hi] - centers[lo], 1.0)
    wt = np.where(hi > lo, np.clip((pos - centers[lo]) / span, 0.0, 1.0), 0.0)
    return lo, hi, wt


def clahe(img, params=ClaheParams()):
    """Contrast-limited adaptive histogram equalization of a [0,1] image.

    Each tile's histogram is clipped at ``clip_limit * tile_pixels / bins`` and the
    excess spread evenly over all bins in a single pass. A tile maps bin ``b`` to
    ``(cdf(b) - cdf_min) / (tile_pixels - cdf_min)`` clamped to [0,1]; a tile whose
    pixels all fall into one bin maps every pixel to itself. Output pixels blend the
    four nearest tile mappings bilinearly, clamping at the image border.
    """
    x = np.asarray(img, dtype=np.float64)
    h, w = x.shape
    cols, rows = params.tiles
    if w < cols or h < rows:
        raise ValueError(f"image {w}x{h} is smaller than the {cols}x{rows} tile grid")
    bins = params.bins
    b = np.clip((x * bins).astype(np.int64), 0, bins - 1)
    ye, xe = _tile_edges(h, rows), _tile_edges(w, cols)

    lut = np.zeros((rows, cols, bins))
    flat = np.zeros((rows, cols), dtype=bool)
    for r in range(rows):
        for c in range(cols):
            tile = b[ye[r]:ye[r + 1], xe[c]:xe[c + 1]].ravel()
            n = tile.size
            hist = np.bincount(tile, minlength=bins).astype(np.float64)
            if np.count_nonzero(hist) == 1:
                flat[r, c] = True
                continue
            ceiling = params.clip_limit * n / bins
            excess = np.maximum(hist - ceiling, 0.0).sum()
            hist = np.minimum(hist, ceiling) + excess / bins
            cdf = np.cumsum(hist)
            cdf_min = cdf[np.flatnonzero(hist > 0)[0]]
            lut[r, c] = np.clip((cdf - cdf_min) / (n - cdf_min), 0.0, 1.0)

    r0, r1, wy = _blend_axis(h, ye)
    c0, c1, wx = _blend_axis(w, xe)
    R0, R1, WY = r0[:, None], r1[:, None], wy[:, None]
    C0, C1, WX = c0[None, :], c1[None, :], wx[None, :]

    def mapped(R, C):
        return np.where(flat[R, C], x, lut[R, C, b])

    top = (1.0 - WX) * mapped(R0, C0) + WX * mapped(R0, C1)
    bottom = (1.0 - WX) * mapped(R1, C0) + WX * mapped(R1, C1)
    return np.clip((1.0 - WY) * top + WY * bottom, 0.0, 1.0)


def _bilinear_resize(x, new_h, new_w):
    # half-pixel aligned sample grid, edge samples clamped to the border pixels
    return ndimage.zoom(x, (new_h / x.shape[0], new_w / x.shape[1]), order=1, mode="nearest",
                        grid_mode=True, prefilter=False)


def resize_pad(img, spec=ResizeSpec()):
    """Aspect-preserving bilinear resize into ``spec.target``, padding right/bottom."""
    x = np.asarray(img, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot resize an empty image")
    h, w = x.shape
    tw, th = spec.target
    s = min(tw / w, th / h)
    new_w = min(tw, max(1, int(round(w * s))))
    new_h = min(th, max(1, int(round(h * s))))
    content = x if (new_h, new_w) == (h, w) else _bilinear_resize(x, new_h, new_w)
    out = np.full((th, tw), float(spec.pad_value))
    out[:new_h, :new_w] = content
    return out


def condition(raw, config=PreprocessConfig()):
    """Deterministic conditioning: normalize, CLAHE at native size, then resize/pad."""
    return resize_pad(clahe(normalize_intensity(raw), config.clahe), config.resize)


def rotate(img, degrees):
    """Rotate about the image center with bilinear sampling and zero fill.

    Pixels outside the source grid count as 0, so samples within one pixel of
    the border blend toward the background.
    """
    x = np.asarray(img, dtype=np.float64)
    h, w = x.shape
    t = math.radians(degrees)
    cos, sin = math.cos(t), math.sin(t)
    # output (row, col) -> source (row, col)
    mat = np.array([[cos, -sin], [sin, cos]])
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = center - mat @ center
    return ndimage.affine_transform(x, mat, offset=offset, order=1, mode="grid-constant", cval=0.0)


def vflip(img):
    return np.asarray(img)[::-1, :].copy()


def gaussian_blur(img, sigma):
    """Separable Gaussian blur, kernel radius ceil(3 sigma), edges replicated."""
    x = np.asarray(img, dtype=np.float64)
    radius = int(math.ceil(3.0 * sigma)) if sigma > 0 else 0
    if radius == 0:
        return x.copy()
    return ndimage.gaussian_filter(x, sigma, mode="nearest", radius=radius)


def adjust_brightness(img, delta):
    return np.clip(np.asarray(img, dtype=np.float64) + delta, 0.0, 1.0)


def augment(img, config, rng):
    """Random rotation, vertical flip, Gaussian blur and brightness shift, in that order.

    All five random numbers are drawn on every call, so the stream consumed from
    ``rng`` does not depend on which transforms fire.
    """
    angle = rng.uniform(-config.rotation_max_deg, config.rotation_max_deg)
    flip = rng.random() < config.vflip_prob
    blur = rng.random() < config.blur_prob
    sigma = rng.uniform(0.0, config.blur_sigma_max)
    delta = rng.uniform(-config.brightness_delta_max, config.brightness_delta_max)

    x = np.asarray(img, dtype=np.float64)
    if angle != 0.0:
        x = rotate(x, angle)
    if flip:
        x = vflip(x)
    if blur and sigma > 0.0:
        x = gaussian_blur(x, sigma)
    return adjust_brightness(x, delta)


def augment_rng(seed, epoch, index):
    """Draw state for one sample in one epoch, independent of scheduling order."""
    return np.random.default_rng([int(seed), int(epoch), int(index)])
