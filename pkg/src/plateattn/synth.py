"""Deterministic synthetic plate renderer with seeded perturbation profiles.

Rendering pipeline: glyph compositing on a style background, then
shadow -> illumination -> perspective/rotation -> blur -> noise, mimicking
scene effects before camera effects. (spec, params, seed) fully determine
the output bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import convolve1d

from .atlas import GLYPH_H, GLYPH_W, STYLES, ConfigurationError, GlyphAtlas, default_atlas
from .autograd import ContractViolation
from .optim import seeded_rng
from .vocab import DIGITS, LETTERS, REGION_CODES, Vocabulary


@dataclass
class PlateSpec:
    label: str
    style: str = "standard-blue"
    plate_size: Tuple[int, int] = (160, 48)  # (width, height)

    def validate(self, vocab: Optional[Vocabulary] = None):
        vocab = vocab or Vocabulary()
        if not vocab.is_valid_label(self.label):
            raise ContractViolation(f"invalid plate label {self.label!r}")
        if self.style not in STYLES:
            raise ConfigurationError(f"unknown plate style {self.style!r}")


@dataclass
class RenderParams:
    perspective_quad: np.ndarray = field(
        default_factory=lambda: np.zeros((4, 2)))  # corner displacements, px
    rotation_deg: float = 0.0
    shadow_polygon: Optional[np.ndarray] = None
    shadow_opacity: float = 0.0
    brightness_gain: float = 1.0
    brightness_bias: float = 0.0
    blur_sigma: float = 0.0
    noise_std: float = 0.0
    seed: int = 0

    def validate(self):
        if not -30.0 <= self.rotation_deg <= 30.0:
            raise ContractViolation(f"rotation {self.rotation_deg} outside [-30, 30]")
        if not 0.0 <= self.shadow_opacity <= 1.0:
            raise ContractViolation("shadow opacity outside [0, 1]")
        if not 0.3 <= self.brightness_gain <= 1.8:
            raise ContractViolation("brightness gain outside [0.3, 1.8]")
        if not -0.3 <= self.brightness_bias <= 0.3:
            raise ContractViolation("brightness bias outside [-0.3, 0.3]")
        if self.blur_sigma < 0 or self.noise_std < 0:
            raise ContractViolation("blur sigma and noise std must be >= 0")


# ---------------------------------------------------------------------------
# clean rendering


def render_clean(spec: PlateSpec, atlas: Optional[GlyphAtlas] = None) -> np.ndarray:
    """Composite the label glyphs on the style background; (3, H, W) in [0,1]."""
    from PIL import Image

    spec.validate()
    atlas = atlas or default_atlas()
    W, H = spec.plate_size
    bg, fg = STYLES[spec.style]
    img = np.empty((H, W, 3), dtype=np.float32)
    img[:] = bg
    # thin light frame
    frame = np.minimum(1.0, np.asarray(bg) + 0.35)
    img[:2, :] = frame
    img[-2:, :] = frame
    img[:, :2] = frame
    img[:, -2:] = frame

    n = len(spec.label)
    margin = max(4, W // 26)
    pitch = (W - 2 * margin) / n
    gh = int(H * 0.70)
    gw = int(min(pitch * 0.78, GLYPH_W * gh / GLYPH_H * 1.2))
    y0 = (H - gh) // 2
    for i, tok in enumerate(spec.label):
        mask = atlas.glyph(tok)
        g = Image.fromarray((mask * 255).astype(np.uint8)).resize((gw, gh), Image.BILINEAR)
        ink = np.asarray(g, dtype=np.float32) / 255.0
        x0 = int(round(margin + i * pitch + (pitch - gw) / 2))
        region = img[y0 : y0 + gh, x0 : x0 + gw]
        region[:] = region * (1 - ink[..., None]) + np.asarray(fg) * ink[..., None]
    return img.transpose(2, 0, 1).copy()


# ---------------------------------------------------------------------------
# perturbations


def _homography_from_corners(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """8-dof homography H with dst ~ H @ src (homogeneous)."""
    A = []
    b = []
    for (x, y), (u, v) in zip(src, dst):
        A.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        b.append(u)
        A.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b.append(v)
    h = np.linalg.solve(np.asarray(A, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return np.append(h, 1.0).reshape(3, 3)


def _bilinear_sample(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample (3, H, W) at float coords with border replicate."""
    _, H, W = image.shape
    xs = np.clip(xs, 0.0, W - 1.0)
    ys = np.clip(ys, 0.0, H - 1.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = (xs - x0).astype(image.dtype)
    fy = (ys - y0).astype(image.dtype)
    out = (
        image[:, y0, x0] * (1 - fx) * (1 - fy)
        + image[:, y0, x1] * fx * (1 - fy)
        + image[:, y1, x0] * (1 - fx) * fy
        + image[:, y1, x1] * fx * fy
    )
    return out


def _quad_is_convex(pts: np.ndarray) -> bool:
    signs = []
    for i in range(4):
        a, b, c = pts[i], pts[(i + 1) % 4], pts[(i + 2) % 4]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        signs.append(np.sign(cross))
    nonzero = [s for s in signs if s != 0]
    return len(set(nonzero)) <= 1 and len(nonzero) >= 3


def warp_homography(image: np.ndarray, hom: np.ndarray) -> np.ndarray:
    """Inverse-mapped bilinear warp of (3, H, W) by a forward homography."""
    _, H, W = image.shape
    inv = np.linalg.inv(hom)
    jj, ii = np.meshgrid(np.arange(W), np.arange(H))
    ones = np.ones_like(jj)
    pts = np.stack([jj, ii, ones]).reshape(3, -1).astype(np.float64)
    src = inv @ pts
    xs = (src[0] / src[2]).reshape(H, W)
    ys = (src[1] / src[2]).reshape(H, W)
    return _bilinear_sample(image, xs, ys)


def apply_perspective(image: np.ndarray, quad: np.ndarray) -> np.ndarray:
    """Warp so each corner moves by its displacement in ``quad`` (4x2 px)."""
    quad = np.asarray(quad, dtype=np.float64)
    if quad.shape != (4, 2):
        raise ContractViolation(f"quad must be (4, 2) displacements, got {quad.shape}")
    _, H, W = image.shape
    corners = np.array([[0, 0], [W - 1, 0], [W - 1, H - 1], [0, H - 1]], dtype=np.float64)
    dst = corners + quad
    if (np.abs(dst[:, 0]) > 2 * W).any() or (np.abs(dst[:, 1]) > 2 * H).any():
        raise ContractViolation("displaced corners leave the 2x canvas")
    if not _quad_is_convex(dst):
        raise ContractViolation("degenerate (self-intersecting) perspective quad")
    hom = _homography_from_corners(corners, dst)
    return warp_homography(image, hom)


def apply_rotation(image: np.ndarray, degrees: float) -> np.ndarray:
    if degrees == 0.0:
        return image.copy()
    _, H, W = image.shape
    t = np.deg2rad(degrees)
    cx, cy = (W - 1) / 2.0, (H - 1) / 2.0
    c, s = np.cos(t), np.sin(t)
    hom = (
        np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1.0]])
        @ np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
        @ np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1.0]])
    )
    return warp_homography(image, hom)


def _polygon_coverage(shape_hw: Tuple[int, int], polygon: np.ndarray,
                      subsamples: int = 3) -> np.ndarray:
    """Per-pixel coverage in [0,1] with ~1px anti-aliased edges."""
    from matplotlib.path import Path as MplPath

    H, W = shape_hw
    path = MplPath(polygon)
    offs = (np.arange(subsamples) + 0.5) / subsamples
    cov = np.zeros((H, W), dtype=np.float64)
    jj, ii = np.meshgrid(np.arange(W), np.arange(H))
    for oy in offs:
        for ox in offs:
            pts = np.stack([(jj + ox).ravel(), (ii + oy).ravel()], axis=1)
            cov += path.contains_points(pts).reshape(H, W)
    return cov / (subsamples * subsamples)


def apply_shadow(image: np.ndarray, polygon: np.ndarray, opacity: float) -> np.ndarray:
    polygon = np.asarray(polygon, dtype=np.float64)
    if polygon.ndim != 2 or polygon.shape[0] < 3 or polygon.shape[1] != 2:
        raise ContractViolation("shadow polygon needs at least 3 (x, y) vertices")
    if not 0.0 <= opacity <= 1.0:
        raise ContractViolation("shadow opacity outside [0, 1]")
    if opacity == 0.0:
        return image.copy()
    cov = _polygon_coverage(image.shape[1:], polygon)
    return (image * (1.0 - opacity * cov)[None]).astype(image.dtype)


def apply_illumination(image: np.ndarray, gain: float, bias: float) -> np.ndarray:
    return np.clip(image * gain + bias, 0.0, 1.0).astype(image.dtype)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3 * sigma))
    xs = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def apply_blur_noise(image: np.ndarray, sigma: float, noise_std: float,
                     seed: int) -> np.ndarray:
    out = image
    if sigma > 0:
        k = gaussian_kernel(sigma).astype(image.dtype)
        out = convolve1d(out, k, axis=1, mode="nearest")
        out = convolve1d(out, k, axis=2, mode="nearest")
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        out = out + rng.normal(0.0, noise_std, size=out.shape).astype(image.dtype)
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def render_plate(spec: PlateSpec, params: RenderParams,
                 atlas: Optional[GlyphAtlas] = None) -> np.ndarray:
    """Full pipeline: clean render plus the perturbation chain."""
    params.validate()
    img = render_clean(spec, atlas)
    if params.shadow_polygon is not None and params.shadow_opacity > 0:
        img = apply_shadow(img, params.shadow_polygon, params.shadow_opacity)
    if params.brightness_gain != 1.0 or params.brightness_bias != 0.0:
        img = apply_illumination(img, params.brightness_gain, params.brightness_bias)
    if np.abs(np.asarray(params.perspective_quad)).max() > 0:
        img = apply_perspective(img, params.perspective_quad)
    if params.rotation_deg != 0.0:
        img = apply_rotation(img, params.rotation_deg)
    img = apply_blur_noise(img, params.blur_sigma, params.noise_std, params.seed)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# perturbation profiles


BASE_PROFILES = ("clean", "dark", "bright", "shadow", "tilt", "blur", "heavy")
PROFILES = BASE_PROFILES + ("mixed",)


def _shadow_polygon(rng: np.random.Generator, W: int, H: int) -> np.ndarray:
    x = rng.uniform(0.2, 0.8) * W
    tilt = rng.uniform(-0.25, 0.25) * W
    if rng.uniform() < 0.5:  # right-side wedge
        return np.array([[x, 0], [W, 0], [W, H], [x + tilt, H]])
    return np.array([[0, 0], [x, 0], [x + tilt, H], [0, H]])


def sample_render_params(profile: str, rng: np.random.Generator,
                         plate_size: Tuple[int, int] = (160, 48)) -> Tuple[str, RenderParams]:
    """Draw RenderParams for a named profile; returns (condition tag, params).

    For 'mixed' the condition is drawn per call from the base profiles."""
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown perturbation profile {profile!r}")
    cond = profile
    if profile == "mixed":
        cond = BASE_PROFILES[rng.integers(0, len(BASE_PROFILES))]
    W, H = plate_size
    p = RenderParams(seed=int(rng.integers(0, 2**63 - 1)))
    scale = min(W, H)

    def tilt_quad(strength):
        return rng.uniform(-strength, strength, size=(4, 2)) * np.array([scale, scale * 0.6])

    if cond == "clean":
        pass
    elif cond == "dark":
        p.brightness_gain = float(rng.uniform(0.3, 0.55))
        p.brightness_bias = float(rng.uniform(-0.15, 0.0))
        p.noise_std = float(rng.uniform(0.0, 0.03))
    elif cond == "bright":
        p.brightness_gain = float(rng.uniform(1.3, 1.8))
        p.brightness_bias = float(rng.uniform(0.0, 0.25))
    elif cond == "shadow":
        p.shadow_polygon = _shadow_polygon(rng, W, H)
        p.shadow_opacity = float(rng.uniform(0.35, 0.8))
    elif cond == "tilt":
        p.perspective_quad = tilt_quad(0.12)
        p.rotation_deg = float(rng.uniform(-18.0, 18.0))
    elif cond == "blur":
        p.blur_sigma = float(rng.uniform(0.6, 1.6))
        p.noise_std = float(rng.uniform(0.01, 0.05))
    elif cond == "heavy":
        p.brightness_gain = float(rng.uniform(0.4, 1.6))
        p.brightness_bias = float(rng.uniform(-0.15, 0.15))
        p.shadow_polygon = _shadow_polygon(rng, W, H)
        p.shadow_opacity = float(rng.uniform(0.2, 0.6))
        p.perspective_quad = tilt_quad(0.10)
        p.rotation_deg = float(rng.uniform(-15.0, 15.0))
        p.blur_sigma = float(rng.uniform(0.3, 1.2))
        p.noise_std = float(rng.uniform(0.01, 0.05))
    return cond, p


# ---------------------------------------------------------------------------
# balanced dataset sampling


def random_label(rng: np.random.Generator, region: str, n_tail: int) -> str:
    tail = [LETTERS[rng.integers(0, len(LETTERS))]]
    pool = LETTERS + DIGITS
    for _ in range(n_tail - 1):
        tail.append(pool[rng.integers(0, len(pool))])
    return region + "".join(tail)


def sample_balanced(n: int, rng_seed: int, perturb_profile: str, out_dir,
                    plate_size: Tuple[int, int] = (160, 48),
                    p_new_energy: float = 0.25,
                    atlas: Optional[GlyphAtlas] = None) -> List[dict]:
    """Render a region-code-balanced dataset with its JSONL manifest.

    Region codes rotate round-robin (max count difference <= 1); letters and
    digits are uniform. Returns the manifest records."""
    from PIL import Image

    if n < 1:
        raise ContractViolation("need n >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    atlas = atlas or default_atlas()
    rng = seeded_rng(rng_seed, "synth")
    order = rng.permutation(len(REGION_CODES))
    records = []
    W, H = plate_size
    for i in range(n):
        region = REGION_CODES[order[i % len(REGION_CODES)]]
        if rng.uniform() < p_new_energy:
            style, n_tail = "new-energy", 7
        else:
            r = rng.uniform()
            style = "standard-blue" if r < 0.85 else ("police" if r < 0.925 else "truck")
            n_tail = 6
        label = random_label(rng, region, n_tail)
        cond, params = sample_render_params(perturb_profile, rng, plate_size)
        img = render_plate(PlateSpec(label=label, style=style, plate_size=plate_size),
                           params, atlas)
        name = f"plate_{i:06d}.png"
        arr = (img.transpose(1, 2, 0) * 255).round().astype(np.uint8)
        Image.fromarray(arr).save(out_dir / name)
        records.append({
            "image": name,
            "label": label,
            "bbox": [0, 0, W, H],
            "subset": cond,
            "style": style,
            "seed": params.seed,
        })
    with open(out_dir / "manifest.jsonl", "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")
    return records
