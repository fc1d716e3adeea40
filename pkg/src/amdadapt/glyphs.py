"""Procedural stroke-glyph font and word rendering.

Each glyph is a list of line segments in a unit box (x right, y down,
baseline at y=0.8, ascenders near 0.05, descenders to 1.0).  Words render
as dark anti-aliased strokes on a light background by evaluating, per
pixel, the distance to the nearest segment of the glyph occupying that
column span.  Glyph boxes are height/2 pixels wide, so a word's image
width is exactly len(text) * height // 2.

Rendering is deterministic: all jitter comes from the caller's seed via
the counter-based stream, one child stream per glyph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import Rng, derive

BACKGROUND = 0.92
INK = 0.08


def _ring(cx, cy, rx, ry, n=10):
    pts = [(cx + rx * math.cos(2 * math.pi * k / n), cy + ry * math.sin(2 * math.pi * k / n)) for k in range(n)]
    return [(pts[k], pts[(k + 1) % n]) for k in range(n)]


def _path(*pts):
    return [(pts[k], pts[k + 1]) for k in range(len(pts) - 1)]


# Skeleton strokes per character. Legibility only has to be good enough for
# the recognizer to separate classes; these are deliberately plain.
STROKES = {
    "a": _ring(0.50, 0.60, 0.30, 0.20) + _path((0.80, 0.42), (0.80, 0.80)),
    "b": _path((0.20, 0.05), (0.20, 0.80)) + _ring(0.50, 0.60, 0.29, 0.20),
    "c": _path((0.78, 0.46), (0.50, 0.40), (0.24, 0.52), (0.22, 0.68), (0.48, 0.80), (0.78, 0.74)),
    "d": _path((0.80, 0.05), (0.80, 0.80)) + _ring(0.50, 0.60, 0.29, 0.20),
    "e": _ring(0.50, 0.60, 0.30, 0.20) + _path((0.21, 0.58), (0.79, 0.58)),
    "f": _path((0.72, 0.12), (0.48, 0.08), (0.42, 0.24), (0.42, 0.80)) + _path((0.24, 0.40), (0.66, 0.40)),
    "g": _ring(0.48, 0.58, 0.27, 0.17) + _path((0.76, 0.42), (0.76, 0.92), (0.46, 1.00), (0.26, 0.94)),
    "h": _path((0.20, 0.05), (0.20, 0.80)) + _path((0.20, 0.52), (0.50, 0.40), (0.80, 0.52), (0.80, 0.80)),
    "i": _path((0.50, 0.42), (0.50, 0.80)) + _path((0.50, 0.22), (0.50, 0.27)),
    "j": _path((0.58, 0.42), (0.58, 0.92), (0.34, 1.00)) + _path((0.58, 0.22), (0.58, 0.27)),
    "k": _path((0.20, 0.05), (0.20, 0.80)) + _path((0.20, 0.62), (0.76, 0.42)) + _path((0.42, 0.55), (0.78, 0.80)),
    "l": _path((0.50, 0.05), (0.50, 0.80)),
    "m": _path((0.14, 0.80), (0.14, 0.42))
    + _path((0.14, 0.50), (0.32, 0.40), (0.50, 0.50), (0.50, 0.80))
    + _path((0.50, 0.50), (0.68, 0.40), (0.86, 0.50), (0.86, 0.80)),
    "n": _path((0.20, 0.80), (0.20, 0.42)) + _path((0.20, 0.52), (0.50, 0.40), (0.80, 0.52), (0.80, 0.80)),
    "o": _ring(0.50, 0.60, 0.30, 0.20),
    "p": _path((0.20, 0.42), (0.20, 1.00)) + _ring(0.50, 0.60, 0.28, 0.19),
    "q": _path((0.80, 0.42), (0.80, 1.00)) + _ring(0.50, 0.60, 0.28, 0.19),
    "r": _path((0.22, 0.42), (0.22, 0.80)) + _path((0.22, 0.54), (0.52, 0.40), (0.76, 0.46)),
    "s": _path((0.76, 0.45), (0.36, 0.40), (0.24, 0.52), (0.72, 0.64), (0.66, 0.78), (0.24, 0.78)),
    "t": _path((0.44, 0.15), (0.44, 0.74), (0.56, 0.80), (0.72, 0.78)) + _path((0.24, 0.40), (0.70, 0.40)),
    "u": _path((0.20, 0.42), (0.20, 0.70), (0.42, 0.80), (0.78, 0.70)) + _path((0.80, 0.42), (0.80, 0.80)),
    "v": _path((0.20, 0.42), (0.50, 0.80), (0.80, 0.42)),
    "w": _path((0.12, 0.42), (0.30, 0.80), (0.50, 0.52), (0.70, 0.80), (0.88, 0.42)),
    "x": _path((0.20, 0.42), (0.80, 0.80)) + _path((0.80, 0.42), (0.20, 0.80)),
    "y": _path((0.22, 0.42), (0.52, 0.76)) + _path((0.80, 0.42), (0.32, 1.00)),
    "z": _path((0.22, 0.42), (0.78, 0.42), (0.22, 0.80), (0.78, 0.80)),
    "0": _ring(0.50, 0.42, 0.28, 0.34),
    "1": _path((0.34, 0.22), (0.54, 0.08), (0.54, 0.80)),
    "2": _path((0.24, 0.22), (0.50, 0.08), (0.76, 0.22), (0.26, 0.80), (0.80, 0.80)),
    "3": _path((0.24, 0.12), (0.72, 0.10), (0.46, 0.40), (0.76, 0.58), (0.52, 0.80), (0.24, 0.72)),
    "4": _path((0.62, 0.08), (0.20, 0.56), (0.82, 0.56)) + _path((0.62, 0.08), (0.62, 0.80)),
    "5": _path((0.74, 0.08), (0.28, 0.08), (0.26, 0.42), (0.62, 0.42), (0.78, 0.60), (0.54, 0.80), (0.24, 0.72)),
    "6": _path((0.68, 0.10), (0.36, 0.38), (0.24, 0.60)) + _ring(0.48, 0.62, 0.24, 0.17),
    "7": _path((0.22, 0.08), (0.80, 0.08), (0.40, 0.80)),
    "8": _ring(0.50, 0.26, 0.22, 0.16) + _ring(0.50, 0.60, 0.27, 0.19),
    "9": _ring(0.50, 0.28, 0.24, 0.17) + _path((0.74, 0.30), (0.58, 0.80)),
}


@dataclass(frozen=True)
class GlyphFont:
    """Stroke font: global slant and stroke thickness (px at height 32)."""

    slant_deg: float = 0.0
    thickness: float = 1.8
    jitter: float = 0.02  # endpoint jitter in unit-box coordinates

    def has(self, ch: str) -> bool:
        return ch in STROKES

    def to_dict(self) -> dict:
        return {"slant_deg": self.slant_deg, "thickness": self.thickness, "jitter": self.jitter}

    @staticmethod
    def from_dict(d: dict) -> "GlyphFont":
        return GlyphFont(
            slant_deg=float(d.get("slant_deg", 0.0)),
            thickness=float(d.get("thickness", 1.8)),
            jitter=float(d.get("jitter", 0.02)),
        )


def glyph_width(height: int) -> int:
    return height // 2


def _segment_distances(ys, xs, segs):
    """Min distance from each pixel center to any segment (all in px)."""
    best = np.full(ys.shape, np.inf)
    for (x0, y0), (x1, y1) in segs:
        dx, dy = x1 - x0, y1 - y0
        norm2 = dx * dx + dy * dy
        if norm2 == 0.0:
            t = np.zeros_like(xs)
        else:
            t = np.clip(((xs - x0) * dx + (ys - y0) * dy) / norm2, 0.0, 1.0)
        px = x0 + t * dx
        py = y0 + t * dy
        best = np.minimum(best, np.hypot(xs - px, ys - py))
    return best


def render_word(text: str, font: GlyphFont, height: int = 32, seed: int = 0) -> np.ndarray:
    """Render a word; returns float64 grayscale (height, len(text)*height//2)."""
    if not text:
        raise ConfigError("cannot render an empty word")
    for ch in text:
        if ch not in STROKES:
            raise ConfigError(f"no glyph for character {ch!r}")

    gw = glyph_width(height)
    img = np.full((height, gw * len(text)), BACKGROUND)
    shear = math.tan(math.radians(font.slant_deg))
    y_base = 0.80
    thick = font.thickness * height / 32.0
    ys, xs = np.mgrid[0:height, 0:gw]
    ys = ys + 0.5
    xs = xs + 0.5

    for gi, ch in enumerate(text):
        rng = Rng(derive(seed, gi))
        segs_px = []
        for (ax, ay), (bx, by) in STROKES[ch]:
            jax = ax + rng.uniform(-font.jitter, font.jitter)
            jay = ay + rng.uniform(-font.jitter, font.jitter)
            jbx = bx + rng.uniform(-font.jitter, font.jitter)
            jby = by + rng.uniform(-font.jitter, font.jitter)
            # slant shears x left/right around the baseline
            jax += shear * (y_base - jay)
            jbx += shear * (y_base - jby)
            # unit box -> pixel box with small margins
            segs_px.append(
                (
                    (2.0 + jax * (gw - 4.0), (0.06 + 0.84 * jay) * height),
                    (2.0 + jbx * (gw - 4.0), (0.06 + 0.84 * jby) * height),
                )
            )
        d = _segment_distances(ys, xs, segs_px)
        ink = np.clip(thick / 2.0 + 0.5 - d, 0.0, 1.0)
        cell = img[:, gi * gw : (gi + 1) * gw]
        cell -= ink * (BACKGROUND - INK)
    return np.clip(img, 0.0, 1.0)
