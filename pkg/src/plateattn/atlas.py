"""Glyph atlas and plate style geometry for the synthetic renderer.

Letters and digits are rasterized once from the bundled PIL bitmap font;
the 31 region-code tokens get deterministic procedural stand-in glyphs
(seeded stroke patterns), which keeps the renderer free of any CJK font
dependency while staying internally consistent for the recognizer.
"""

from __future__ import annotations

import zlib
from typing import Dict, Tuple

import numpy as np

from .vocab import DIGITS, LETTERS, REGION_CODES

GLYPH_H, GLYPH_W = 36, 24


class ConfigurationError(ValueError):
    pass


# (background RGB, ink RGB) per plate style, values in [0, 1]
STYLES: Dict[str, Tuple[Tuple[float, float, float], Tuple[float, float, float]]] = {
    "standard-blue": ((0.05, 0.15, 0.55), (0.97, 0.97, 0.97)),
    "new-energy": ((0.78, 0.94, 0.78), (0.05, 0.05, 0.05)),
    "police": ((0.94, 0.94, 0.94), (0.08, 0.08, 0.08)),
    "truck": ((0.93, 0.78, 0.10), (0.05, 0.05, 0.05)),
}


def _font_glyph(ch: str) -> np.ndarray:
    from PIL import Image, ImageDraw, ImageFont

    font = ImageFont.load_default(size=32)
    img = Image.new("L", (48, 48), 0)
    ImageDraw.Draw(img).text((8, 4), ch, fill=255, font=font)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    ys, xs = np.nonzero(arr > 0.05)
    if ys.size == 0:
        raise ConfigurationError(f"font produced empty glyph for {ch!r}")
    crop = arr[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]
    img = Image.fromarray((crop * 255).astype(np.uint8)).resize(
        (GLYPH_W, GLYPH_H), Image.BILINEAR
    )
    return np.asarray(img, dtype=np.float32) / 255.0


def _stand_in_glyph(token: str) -> np.ndarray:
    """Deterministic pseudo-ideograph: seeded strokes on a coarse grid."""
    rng = np.random.default_rng(zlib.crc32(token.encode("utf-8")))
    grid = np.zeros((9, 7), dtype=np.float32)
    # horizontal and vertical strokes chosen per token
    for _ in range(rng.integers(3, 6)):
        r = rng.integers(0, 9)
        c0, c1 = sorted(rng.choice(7, size=2, replace=False))
        grid[r, c0 : c1 + 1] = 1.0
    for _ in range(rng.integers(2, 5)):
        c = rng.integers(0, 7)
        r0, r1 = sorted(rng.choice(9, size=2, replace=False))
        grid[r0 : r1 + 1, c] = 1.0
    up = np.kron(grid, np.ones((GLYPH_H // 9 + 1, GLYPH_W // 7 + 1), dtype=np.float32))
    return up[:GLYPH_H, :GLYPH_W]


class GlyphAtlas:
    """Per-token ink masks at reference resolution, plus style colors."""

    def __init__(self):
        self.glyphs: Dict[str, np.ndarray] = {}
        for ch in LETTERS + DIGITS:
            self.glyphs[ch] = _font_glyph(ch)
        for tok in REGION_CODES:
            self.glyphs[tok] = _stand_in_glyph(tok)

    def glyph(self, token: str) -> np.ndarray:
        try:
            return self.glyphs[token]
        except KeyError:
            raise ConfigurationError(f"no glyph for token {token!r}") from None


_DEFAULT_ATLAS = None


def default_atlas() -> GlyphAtlas:
    global _DEFAULT_ATLAS
    if _DEFAULT_ATLAS is None:
        _DEFAULT_ATLAS = GlyphAtlas()
    return _DEFAULT_ATLAS
