"""Image augmentation pipelines and controlled domain-shift transforms.

Pipelines apply their transforms in declared order; every transform fires
independently with its probability from a per-transform seed stream
(derive(sample_seed, transform_index)), so outputs are pure functions of
(image, pipeline, seed).

Geometric parameters originate from a reference setup at 128 px height and
are linearly rescaled to the working height when a builder is used; the
builders keep the original values in comments.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import Rng, derive

_IGNORED_COLOR_KEYS = ("saturation", "hue")
_warned_color = False


@dataclass(frozen=True)
class Transform:
    kind: str
    prob: float
    params: tuple  # sorted (key, value) pairs; dataclass stays hashable

    def param(self, key, default=None):
        for k, v in self.params:
            if k == key:
                return v
        return default


def make_transform(kind: str, prob: float, **params) -> Transform:
    if not 0.0 <= prob <= 1.0:
        raise ConfigError(f"{kind}: probability {prob} outside [0, 1]")
    return Transform(kind, prob, tuple(sorted(params.items())))


@dataclass(frozen=True)
class AugmentationPipeline:
    transforms: tuple = ()

    @staticmethod
    def pretraining(height: int = 32) -> "AugmentationPipeline":
        """Source-training augmentations (reference: 128 px height)."""
        s = height / 128.0
        return AugmentationPipeline(
            (
                make_transform("elastic", 0.2, magnitude=20.0 * s, smoothness=4.0),  # magnitude 20 @ 128
                make_transform("rotation", 0.5, max_degrees=3.0),
                make_transform("color_jitter", 0.2, brightness=0.4, contrast=0.4, saturation=0.2, hue=0.1),
                make_transform("blur", 0.2, kernel=_odd(23 * s)),  # kernel 23 @ 128
            )
        )

    @staticmethod
    def synthetic(height: int = 32) -> "AugmentationPipeline":
        """Synthetic-word-generator augmentations (reference: 128 px height)."""
        s = height / 128.0
        return AugmentationPipeline(
            (
                make_transform("elastic", 0.2, magnitude=20.0 * s, smoothness=4.0),
                make_transform("blur", 0.2, kernel=_odd(23 * s)),
                make_transform("erase", 0.2, scale_lo=0.01, scale_hi=0.03, aspect_lo=0.2, aspect_hi=3.2),
                make_transform("perspective", 0.2, distortion=0.2),
                make_transform("photometric", 0.5, brightness=0.125, contrast=0.5),
                make_transform(
                    "affine", 0.5, degrees=5.0, translate=0.05, scale_lo=0.95, scale_hi=1.05,
                    shear_x=5.0, shear_y=1.5,
                ),
            )
        )

    def to_dict(self) -> dict:
        return {"transforms": [[t.kind, t.prob, dict(t.params)] for t in self.transforms]}

    @staticmethod
    def from_dict(d: dict) -> "AugmentationPipeline":
        return AugmentationPipeline(
            tuple(make_transform(kind, prob, **params) for kind, prob, params in d["transforms"])
        )


def _odd(x: float) -> int:
    k = max(3, int(round(x)))
    return k if k % 2 else k + 1


def border_median(img: np.ndarray) -> float:
    """Median of the 1-px border ring; the background estimate used for
    fills and padding."""
    ring = np.concatenate([img[0], img[-1], img[1:-1, 0], img[1:-1, -1]])
    return float(np.median(ring))


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    radius = max(1, int(round(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    pad = np.pad(img, ((0, 0), (radius, radius)), mode="edge")
    out = np.zeros_like(img)
    for i, kv in enumerate(k):
        out += kv * pad[:, i : i + img.shape[1]]
    pad = np.pad(out, ((radius, radius), (0, 0)), mode="edge")
    out2 = np.zeros_like(img)
    for i, kv in enumerate(k):
        out2 += kv * pad[i : i + img.shape[0], :]
    return out2


def _sample_bilinear(img: np.ndarray, yy: np.ndarray, xx: np.ndarray, fill) -> np.ndarray:
    """Sample img at float coords; fill (or edge-clamp when fill is None)."""
    h, w = img.shape
    if fill is None:
        src = img
        yy = np.clip(yy, 0.0, h - 1.0)
        xx = np.clip(xx, 0.0, w - 1.0)
    else:
        src = np.pad(img, 1, mode="constant", constant_values=fill)
        yy = np.clip(yy + 1.0, 0.0, h + 1.0)
        xx = np.clip(xx + 1.0, 0.0, w + 1.0)
    y0 = np.floor(yy).astype(np.int64)
    x0 = np.floor(xx).astype(np.int64)
    y1 = np.minimum(y0 + 1, src.shape[0] - 1)
    x1 = np.minimum(x0 + 1, src.shape[1] - 1)
    wy = yy - y0
    wx = xx - x0
    top = src[y0, x0] * (1 - wx) + src[y0, x1] * wx
    bot = src[y1, x0] * (1 - wx) + src[y1, x1] * wx
    return top * (1 - wy) + bot * wy


def _grid(h: int, w: int):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return yy, xx


def _warp_affine_inverse(img: np.ndarray, inv: np.ndarray, fill) -> np.ndarray:
    """inv maps output (x, y, 1) to input (x, y); both center-origin."""
    h, w = img.shape
    yy, xx = _grid(h, w)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    xo = xx - cx
    yo = yy - cy
    xi = inv[0, 0] * xo + inv[0, 1] * yo + inv[0, 2] + cx
    yi = inv[1, 0] * xo + inv[1, 1] * yo + inv[1, 2] + cy
    return _sample_bilinear(img, yi, xi, fill)


def _solve_homography(src, dst) -> np.ndarray:
    """3x3 H with H @ (x_src, y_src, 1) ~ (x_dst, y_dst)."""
    A = []
    b = []
    for (x, y), (u, v) in zip(src, dst):
        A.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        b.append(u)
        A.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b.append(v)
    h = np.linalg.solve(np.array(A), np.array(b))
    return np.array([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])


# -- individual transforms ---------------------------------------------------


def _t_elastic(img, rng: Rng, magnitude: float, smoothness: float):
    h, w = img.shape
    dy = _gaussian_blur(rng.random_array((h, w)) * 2.0 - 1.0, smoothness)
    dx = _gaussian_blur(rng.random_array((h, w)) * 2.0 - 1.0, smoothness)
    for d in (dy, dx):
        peak = np.abs(d).max()
        if peak > 0:
            d *= magnitude / peak
    yy, xx = _grid(h, w)
    return _sample_bilinear(img, yy + dy, xx + dx, None)


def _t_rotation(img, rng: Rng, max_degrees: float):
    theta = math.radians(rng.uniform(-max_degrees, max_degrees))
    c, s = math.cos(theta), math.sin(theta)
    inv = np.array([[c, s, 0.0], [-s, c, 0.0]])  # inverse of rotation by theta
    return _warp_affine_inverse(img, inv, border_median(img))


def _t_color_jitter(img, rng: Rng, brightness: float, contrast: float, **ignored):
    global _warned_color
    if ignored and not _warned_color:
        warnings.warn(f"grayscale pipeline ignores {sorted(ignored)} jitter", stacklevel=3)
        _warned_color = True
    b = rng.uniform(max(0.0, 1.0 - brightness), 1.0 + brightness)
    out = img * b
    c = rng.uniform(max(0.0, 1.0 - contrast), 1.0 + contrast)
    out = out.mean() + (out - out.mean()) * c
    return np.clip(out, 0.0, 1.0)


def _t_blur(img, rng: Rng, kernel: int):
    sigma = rng.uniform(0.1, kernel / 3.0)
    return _gaussian_blur(img, sigma)


def _t_erase(img, rng: Rng, scale_lo, scale_hi, aspect_lo, aspect_hi):
    h, w = img.shape
    area = rng.uniform(scale_lo, scale_hi) * h * w
    aspect = rng.uniform(aspect_lo, aspect_hi)
    eh = min(h, max(1, int(round(math.sqrt(area * aspect)))))
    ew = min(w, max(1, int(round(math.sqrt(area / aspect)))))
    y = rng.randint(h - eh + 1)
    x = rng.randint(w - ew + 1)
    out = img.copy()
    out[y : y + eh, x : x + ew] = border_median(img)
    return out


def _t_perspective(img, rng: Rng, distortion: float):
    h, w = img.shape
    dx = distortion * w / 2.0
    dy = distortion * h / 2.0
    corners = [(0.0, 0.0), (w - 1.0, 0.0), (w - 1.0, h - 1.0), (0.0, h - 1.0)]
    # each corner moves inward by an independent random amount
    signs = [(1, 1), (-1, 1), (-1, -1), (1, -1)]
    moved = [
        (x + sx * rng.uniform(0.0, dx), y + sy * rng.uniform(0.0, dy))
        for (x, y), (sx, sy) in zip(corners, signs)
    ]
    H = _solve_homography(corners, moved)
    yy, xx = _grid(h, w)
    den = H[2, 0] * xx + H[2, 1] * yy + 1.0
    xi = (H[0, 0] * xx + H[0, 1] * yy + H[0, 2]) / den
    yi = (H[1, 0] * xx + H[1, 1] * yy + H[1, 2]) / den
    return _sample_bilinear(img, yi, xi, border_median(img))


def _t_photometric(img, rng: Rng, brightness: float, contrast: float):
    out = img
    if rng.random() < 0.5:
        out = out * rng.uniform(1.0 - brightness, 1.0 + brightness)
    if rng.random() < 0.5:
        out = out.mean() + (out - out.mean()) * rng.uniform(1.0 - contrast, 1.0 + contrast)
    return np.clip(out, 0.0, 1.0)


def _t_affine(img, rng: Rng, degrees, translate, scale_lo, scale_hi, shear_x, shear_y):
    h, w = img.shape
    theta = math.radians(rng.uniform(-degrees, degrees))
    tx = rng.uniform(-translate, translate) * w
    ty = rng.uniform(-translate, translate) * h
    sc = rng.uniform(scale_lo, scale_hi)
    shx = math.tan(math.radians(rng.uniform(-shear_x, shear_x)))
    shy = math.tan(math.radians(rng.uniform(-shear_y, shear_y)))
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    shear = np.array([[1.0, shx], [shy, 1.0]])
    fwd = sc * (rot @ shear)
    inv2 = np.linalg.inv(fwd)
    offset = inv2 @ np.array([-tx, -ty])
    inv = np.array([[inv2[0, 0], inv2[0, 1], offset[0]], [inv2[1, 0], inv2[1, 1], offset[1]]])
    return _warp_affine_inverse(img, inv, border_median(img))


_TRANSFORMS = {
    "elastic": _t_elastic,
    "rotation": _t_rotation,
    "color_jitter": _t_color_jitter,
    "blur": _t_blur,
    "erase": _t_erase,
    "perspective": _t_perspective,
    "photometric": _t_photometric,
    "affine": _t_affine,
}


def augment(image: np.ndarray, pipeline: AugmentationPipeline, seed: int) -> np.ndarray:
    """Apply the pipeline; deterministic in (image, pipeline, seed)."""
    out = image
    for ti, t in enumerate(pipeline.transforms):
        if t.kind not in _TRANSFORMS:
            raise ConfigError(f"unknown transform kind {t.kind!r}")
        rng = Rng(derive(seed, ti))
        if rng.random() < t.prob:
            out = _TRANSFORMS[t.kind](out, rng, **dict(t.params))
    return out


# -- domain shift -------------------------------------------------------------


@dataclass(frozen=True)
class DomainShiftConfig:
    """Deterministic target-domain construction knobs.

    thickness > 0 thickens dark strokes (grayscale erosion of intensity),
    < 0 thins them; fractional parts blend linearly.  background adds a
    constant level.  Applied as slant, thickness, polarity/background,
    noise.
    """

    slant_deg: float = 0.0
    thickness: float = 0.0
    invert: bool = False
    background: float = 0.0
    noise_sigma: float = 0.0

    def is_identity(self) -> bool:
        return (
            self.slant_deg == 0.0
            and self.thickness == 0.0
            and not self.invert
            and self.background == 0.0
            and self.noise_sigma == 0.0
        )

    def to_dict(self) -> dict:
        return {
            "slant_deg": self.slant_deg,
            "thickness": self.thickness,
            "invert": self.invert,
            "background": self.background,
            "noise_sigma": self.noise_sigma,
        }

    @staticmethod
    def from_dict(d: dict) -> "DomainShiftConfig":
        return DomainShiftConfig(
            slant_deg=float(d.get("slant_deg", 0.0)),
            thickness=float(d.get("thickness", 0.0)),
            invert=bool(d.get("invert", False)),
            background=float(d.get("background", 0.0)),
            noise_sigma=float(d.get("noise_sigma", 0.0)),
        )


def _min3(img: np.ndarray) -> np.ndarray:
    p = np.pad(img, 1, mode="edge")
    out = img.copy()
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            np.minimum(out, p[dy : dy + img.shape[0], dx : dx + img.shape[1]], out=out)
    return out


def _max3(img: np.ndarray) -> np.ndarray:
    p = np.pad(img, 1, mode="edge")
    out = img.copy()
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            np.maximum(out, p[dy : dy + img.shape[0], dx : dx + img.shape[1]], out=out)
    return out


def apply_domain_shift(image: np.ndarray, shift: DomainShiftConfig, seed: int) -> np.ndarray:
    out = image
    if shift.slant_deg != 0.0:
        sh = math.tan(math.radians(shift.slant_deg))
        inv = np.array([[1.0, sh, 0.0], [0.0, 1.0, 0.0]])
        out = _warp_affine_inverse(out, inv, border_median(out))
    if shift.thickness != 0.0:
        op = _min3 if shift.thickness > 0 else _max3
        whole, frac = divmod(abs(shift.thickness), 1.0)
        for _ in range(int(whole)):
            out = op(out)
        if frac > 0.0:
            out = (1.0 - frac) * out + frac * op(out)
    if shift.invert:
        out = 1.0 - out
    if shift.background != 0.0:
        out = np.clip(out + shift.background, 0.0, 1.0)
    if shift.noise_sigma > 0.0:
        rng = Rng(derive(seed, 901))
        out = np.clip(out + rng.normal_array(out.shape, shift.noise_sigma), 0.0, 1.0)
    return out
