"""Stroke-font rendering invariants."""

import numpy as np
import pytest

from amdadapt.errors import ConfigError
from amdadapt.glyphs import BACKGROUND, GlyphFont, STROKES, glyph_width, render_word


def test_full_character_coverage():
    for ch in "0123456789abcdefghijklmnopqrstuvwxyz":
        assert ch in STROKES
        assert GlyphFont().has(ch)
    assert not GlyphFont().has("A")


def test_shape_and_range():
    img = render_word("hat", GlyphFont(), height=32, seed=0)
    assert img.shape == (32, 3 * glyph_width(32))
    assert img.dtype == np.float64
    assert img.min() >= 0.0 and img.max() <= 1.0
    assert (img < BACKGROUND - 0.2).any()  # some ink present


def test_deterministic_rendering():
    a = render_word("rose", GlyphFont(), seed=5)
    b = render_word("rose", GlyphFont(), seed=5)
    assert np.array_equal(a, b)


def test_seed_moves_jitter():
    font = GlyphFont(jitter=0.05)
    a = render_word("rose", font, seed=1)
    b = render_word("rose", font, seed=2)
    assert not np.array_equal(a, b)


def test_zero_jitter_ignores_seed():
    font = GlyphFont(jitter=0.0)
    a = render_word("rose", font, seed=1)
    b = render_word("rose", font, seed=2)
    assert np.array_equal(a, b)


def test_thickness_adds_ink():
    thin = render_word("ten", GlyphFont(thickness=1.0, jitter=0.0), seed=0)
    thick = render_word("ten", GlyphFont(thickness=3.0, jitter=0.0), seed=0)
    assert thick.mean() < thin.mean()


def test_slant_changes_image_not_shape():
    up = render_word("ten", GlyphFont(jitter=0.0), seed=0)
    slanted = render_word("ten", GlyphFont(slant_deg=12.0, jitter=0.0), seed=0)
    assert up.shape == slanted.shape
    assert not np.array_equal(up, slanted)


def test_height_scales_width():
    img = render_word("no", GlyphFont(), height=64, seed=0)
    assert img.shape == (64, 2 * glyph_width(64))


def test_rejects_empty_and_unknown():
    with pytest.raises(ConfigError):
        render_word("", GlyphFont())
    with pytest.raises(ConfigError):
        render_word("a b", GlyphFont())


def test_font_dict_roundtrip():
    font = GlyphFont(slant_deg=8.0, thickness=2.2, jitter=0.01)
    assert GlyphFont.from_dict(font.to_dict()) == font
