"""Rendering of embossed synthetic seals with exact ground truth."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import cv2
import numpy as np

from ..alphabet import NON_CHARACTER, AlphabetRegistry, default_registry
from ..corpus import BBox, CharBox, SealAnnotation, derive_seed
from .glyphs import glyph, n_variants

LIGHT_ELEVATION_DEG = 45.0
ALBEDO = 0.78
DOME_FRACTION = 0.04  # dome height relative to diameter
RIM_FRACTION = 0.06  # text keeps this fraction of the diameter away from the rim


class LayoutError(ValueError):
    pass


@dataclass
class DegradationParams:
    """Damage applied after rendering.

    The ranges are arbitrary; nothing quantitative is known about
    real seal damage.
    """

    wear_fraction: float = 0.0
    occlusion_discs: int = 0
    occlusion_radius: tuple[float, float] = (0.03, 0.07)  # fraction of the diameter
    strike_offset_px: int = 0

    def __post_init__(self):
        if not 0.0 <= self.wear_fraction <= 1.0:
            raise ValueError("wear_fraction must be in [0, 1]")
        if self.occlusion_discs < 0:
            raise ValueError("occlusion_discs must be >= 0")
        lo, hi = self.occlusion_radius
        if not 0.0 < lo <= hi <= 0.5:
            raise ValueError("occlusion_radius must satisfy 0 < lo <= hi <= 0.5")
        if self.strike_offset_px < 0:
            raise ValueError("strike_offset_px must be >= 0")
        self.occlusion_radius = (float(lo), float(hi))

    @property
    def is_identity(self) -> bool:
        return self.wear_fraction == 0.0 and self.occlusion_discs == 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["occlusion_radius"] = list(self.occlusion_radius)
        return d


@dataclass
class SealSpec:
    text: list[list[str]]
    diameter_px: int = 400
    glyph_scale: float = 0.065  # glyph height as a fraction of the diameter
    lighting_azimuth: float = 135.0  # degrees, image axes (0 = +x, 90 = down)
    relief_depth: float = 1.0
    noise_sigma: float = 0.01
    rotation_deg: float = 0.0
    degradation: DegradationParams = field(default_factory=DegradationParams)
    line_pitch: float = 2.0  # baseline-to-baseline distance in glyph heights
    char_gap: float = 0.35  # gap between neighbouring glyphs in glyph heights
    margin_px: int = 16
    variants: list[list[int]] | None = None

    @property
    def n_lines(self) -> int:
        return len(self.text)

    @property
    def image_size(self) -> int:
        return self.diameter_px + 2 * self.margin_px

    @property
    def glyph_px(self) -> float:
        return self.glyph_scale * self.diameter_px

    def validate(self, registry: AlphabetRegistry | None = None) -> None:
        registry = registry or default_registry()
        if not self.text:
            raise ValueError("seal text needs at least one line")
        for i, line in enumerate(self.text):
            if not line:
                raise ValueError(f"line {i} is empty")
            for name in line:
                if name not in registry:
                    raise ValueError(f"line {i}: unknown class {name!r}")
                if name == NON_CHARACTER:
                    raise ValueError(f"line {i}: {NON_CHARACTER} cannot be rendered")
        if self.diameter_px < 32:
            raise ValueError("diameter_px too small")
        if not 0.0 < self.glyph_scale < 0.5:
            raise ValueError("glyph_scale must be in (0, 0.5)")
        if not 0.0 <= self.relief_depth <= 1.0:
            raise ValueError("relief_depth must be in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.line_pitch <= 0 or self.char_gap < 0:
            raise ValueError("line_pitch must be > 0 and char_gap >= 0")
        if self.variants is not None and [len(l) for l in self.variants] != [len(l) for l in self.text]:
            raise ValueError("variants must mirror the shape of text")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["degradation"] = self.degradation.to_dict()
        return d


def stroke_px(glyph_px: float) -> int:
    return max(2, int(round(0.13 * glyph_px)))


def line_width_px(names: Sequence[str], variants: Sequence[int], glyph_px: float, gap: float) -> float:
    t = stroke_px(glyph_px)
    widths = [glyph(n, v).width * glyph_px + t for n, v in zip(names, variants)]
    return sum(widths) + gap * glyph_px * (len(widths) - 1)


def max_line_width(offset_px: float, glyph_px: float, inner_radius: float) -> float:
    """Widest horizontal text band centred ``offset_px`` below the seal centre."""
    y = abs(offset_px) + glyph_px / 2 + stroke_px(glyph_px) / 2
    if y >= inner_radius:
        return 0.0
    return 2 * math.sqrt(inner_radius ** 2 - y ** 2)


def inner_radius(diameter_px: int) -> float:
    return diameter_px / 2 - RIM_FRACTION * diameter_px


def line_offsets(n_lines: int, glyph_px: float, pitch: float) -> list[float]:
    return [(i - (n_lines - 1) / 2) * pitch * glyph_px for i in range(n_lines)]


@dataclass
class _Placed:
    name: str
    variant: int
    line: int
    mask: np.ndarray  # local uint8 mask
    x0: int
    y0: int


def _rotate(points: np.ndarray, centre: tuple[float, float], deg: float) -> np.ndarray:
    # positive angles turn the text counter-clockwise as displayed (y down)
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    dx = points[:, 0] - centre[0]
    dy = points[:, 1] - centre[1]
    return np.stack([centre[0] + c * dx + s * dy, centre[1] - s * dx + c * dy], axis=1)


def _layout(spec: SealSpec, rng: np.random.Generator) -> tuple[list[_Placed], int]:
    size = spec.image_size
    gh = spec.glyph_px
    t = stroke_px(gh)
    centre = (size / 2, size / 2)
    r_in = inner_radius(spec.diameter_px)
    variants = spec.variants or [[0] * len(line) for line in spec.text]
    offsets = line_offsets(spec.n_lines, gh, spec.line_pitch)
    shift = np.zeros(2)
    if spec.degradation.strike_offset_px:
        phi = rng.uniform(0, 2 * math.pi)
        shift = spec.degradation.strike_offset_px * np.array([math.cos(phi), math.sin(phi)])
    placed = []
    for li, (names, vars_, off) in enumerate(zip(spec.text, variants, offsets)):
        width = line_width_px(names, vars_, gh, spec.char_gap)
        limit = max_line_width(off, gh, r_in)
        if width > limit + 1e-9:
            raise LayoutError(
                f"line {li} ({' '.join(names)}) is {width:.1f}px wide, only {limit:.1f}px fit at glyph_scale={spec.glyph_scale}"
            )
        x = centre[0] - width / 2 + t / 2
        top = centre[1] + off - gh / 2
        for name, v in zip(names, vars_):
            g = glyph(name, v)
            strokes = []
            for s in g.strokes:
                pts = np.array(s, dtype=np.float64)
                pts = np.stack([x + pts[:, 0] * gh, top + pts[:, 1] * gh], axis=1)
                pts = _rotate(pts, centre, spec.rotation_deg) + shift
                strokes.append(pts)
            allpts = np.concatenate(strokes)
            x0 = int(math.floor(allpts[:, 0].min())) - t - 2
            y0 = int(math.floor(allpts[:, 1].min())) - t - 2
            x1 = int(math.ceil(allpts[:, 0].max())) + t + 3
            y1 = int(math.ceil(allpts[:, 1].max())) + t + 3
            mask = np.zeros((y1 - y0, x1 - x0), np.uint8)
            shift_bits = 4
            scale = 1 << shift_bits
            polys = [np.round((p - [x0, y0]) * scale).astype(np.int32).reshape(-1, 1, 2) for p in strokes]
            cv2.polylines(mask, polys, False, 255, thickness=t, lineType=cv2.LINE_8, shift=shift_bits)
            placed.append(_Placed(name, v, li, mask, x0, y0))
            x += g.width * gh + t + spec.char_gap * gh
    return placed, size


def _shade(height: np.ndarray, azimuth_deg: float) -> np.ndarray:
    gy, gx = np.gradient(height)
    el = math.radians(LIGHT_ELEVATION_DEG)
    az = math.radians(azimuth_deg)
    # light direction points from the surface towards the lamp
    lx, ly, lz = -math.cos(az) * math.cos(el), -math.sin(az) * math.cos(el), math.sin(el)
    norm = np.sqrt(gx ** 2 + gy ** 2 + 1.0)
    lam = (-gx * lx - gy * ly + lz) / norm
    return ALBEDO * np.clip(lam, 0.0, None)


def _disc_mask(size: int, diameter: int, centre: tuple[float, float] | None = None) -> np.ndarray:
    c = centre or (size / 2, size / 2)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r = np.sqrt((xx + 0.5 - c[0]) ** 2 + (yy + 0.5 - c[1]) ** 2)
    return np.clip(diameter / 2 - r + 0.5, 0.0, 1.0)


def generate_seal(
    spec: SealSpec,
    seed: int,
    seal_id: str = "syn-0000",
    registry: AlphabetRegistry | None = None,
    image_path: str | None = None,
) -> tuple[np.ndarray, SealAnnotation]:
    """Render a seal and its ground truth.

    Glyphs are raised in a height field and lit by a single directional lamp,
    so glyphs and background share one albedo and differ only by shading.
    The boxes are tight around each glyph's rasterised stroke mask.
    """
    spec.validate(registry)
    rng = np.random.default_rng(seed)
    placed, size = _layout(spec, rng)
    gh = spec.glyph_px
    t = stroke_px(gh)

    glyph_mask = np.zeros((size, size), np.float64)
    chars = []
    for p in placed:
        ys, xs = np.nonzero(p.mask)
        gx0, gy0 = p.x0 + xs.min(), p.y0 + ys.min()
        gx1, gy1 = p.x0 + xs.max() + 1, p.y0 + ys.max() + 1
        if gx0 < 0 or gy0 < 0 or gx1 > size or gy1 > size:
            raise LayoutError(f"glyph {p.name} on line {p.line} falls outside the image")
        region = glyph_mask[p.y0:p.y0 + p.mask.shape[0], p.x0:p.x0 + p.mask.shape[1]]
        np.maximum(region, p.mask / 255.0, out=region)
        chars.append(CharBox(BBox.from_pixels(gx0, gy0, gx1, gy1, size, size), p.name, p.line))

    disc = _disc_mask(size, spec.diameter_px)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r2 = ((xx + 0.5 - size / 2) ** 2 + (yy + 0.5 - size / 2) ** 2) / (spec.diameter_px / 2) ** 2
    dome = DOME_FRACTION * spec.diameter_px * np.clip(1.0 - r2, 0.0, None)
    relief = cv2.GaussianBlur(glyph_mask, (0, 0), sigmaX=max(0.8, 0.35 * t)) * (1.2 * t)
    height = spec.relief_depth * (relief + dome)
    shaded = _shade(height, spec.lighting_azimuth)
    image = disc * shaded + (1.0 - disc) * 1.0
    if spec.noise_sigma > 0:
        image = image + rng.normal(0.0, spec.noise_sigma, image.shape)
    raster = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)

    transcription = tuple(tuple(line) for line in spec.text)
    meta = {
        "variants": [p.variant for p in placed],
        "spec": spec.to_dict(),
        "seed": int(seed),
    }
    ann = SealAnnotation(
        seal_id=seal_id,
        collection="synthetic",
        side="reverse",
        image_path=image_path or f"images/{seal_id}.png",
        image_w=size,
        image_h=size,
        chars=tuple(chars),
        transcription_gt=transcription,
        meta=meta,
    )
    if not spec.degradation.is_identity:
        raster, ann = degrade(raster, ann, spec.degradation, derive_seed(seed, "degrade"))
    return raster, ann


def estimate_background(raster: np.ndarray, glyph_px: float) -> np.ndarray:
    k = int(2 * glyph_px) | 1
    return cv2.medianBlur(raster, min(k, 255)).astype(np.float64)


def relief_pixels(raster: np.ndarray, background: np.ndarray) -> np.ndarray:
    diff = raster.astype(np.float64) - background
    inside = raster < 250
    sigma = 1.4826 * np.median(np.abs(diff[inside])) if inside.any() else 0.0
    return (np.abs(diff) > max(6.0, 4.0 * sigma)) & inside


def degrade(
    raster: np.ndarray, annotation: SealAnnotation, params: DegradationParams, seed: int
) -> tuple[np.ndarray, SealAnnotation]:
    """Wear down glyph relief and stamp occluding blotches.

    Boxes are left untouched; the fraction of each glyph's relief pixels that
    was flattened or covered is stored in ``meta['damage']``. Wear ranks
    pixels by a smooth random field drawn from ``seed``, so for a fixed seed
    a larger wear fraction erodes a superset of the pixels of a smaller one.
    """
    if params.is_identity:
        return raster.copy(), annotation
    rng = np.random.default_rng(seed)
    h, w = raster.shape
    boxes = [c.bbox.to_pixels(w, h) for c in annotation.chars]
    glyph_px = float(np.median([b[3] - b[1] for b in boxes])) if boxes else 0.05 * min(h, w)
    bg = estimate_background(raster, glyph_px)
    relief = relief_pixels(raster, bg)
    field_ = cv2.GaussianBlur(rng.normal(size=(h, w)), (0, 0), sigmaX=max(1.0, 0.15 * glyph_px))
    out = raster.astype(np.float64)
    touched = np.zeros((h, w), bool)

    for x0, y0, x1, y1 in boxes:
        sub = relief[y0:y1, x0:x1]
        idx = np.flatnonzero(sub)
        n_erode = int(round(params.wear_fraction * idx.size))
        if n_erode == 0:
            continue
        order = np.argsort(field_[y0:y1, x0:x1].ravel()[idx], kind="stable")
        chosen = idx[order[:n_erode]]
        t = touched[y0:y1, x0:x1].ravel().copy()
        t[chosen] = True
        touched[y0:y1, x0:x1] = t.reshape(sub.shape)

    out[touched] = bg[touched]

    if params.occlusion_discs:
        inside = raster < 250
        ys, xs = np.nonzero(inside)
        cy, cx = ys.mean(), xs.mean()
        diameter = 2 * math.sqrt(inside.sum() / math.pi)
        yy, xx = np.mgrid[0:h, 0:w]
        texture = cv2.GaussianBlur(rng.normal(size=(h, w)), (0, 0), sigmaX=2.0)
        texture *= 20.0 / (texture.std() + 1e-12)
        for _ in range(params.occlusion_discs):
            rad = rng.uniform(*params.occlusion_radius) * diameter
            ang = rng.uniform(0, 2 * math.pi)
            dist = (diameter / 2 - rad) * math.sqrt(rng.random())
            ox, oy = cx + dist * math.cos(ang), cy + dist * math.sin(ang)
            blot = ((xx - ox) ** 2 + (yy - oy) ** 2 <= rad ** 2) & inside
            out[blot] = bg[blot] + texture[blot]
            touched |= blot

    damage = []
    for x0, y0, x1, y1 in boxes:
        sub = relief[y0:y1, x0:x1]
        n = int(sub.sum())
        if n == 0:
            damage.append(1.0 if params.wear_fraction >= 1.0 else 0.0)
        else:
            damage.append(float((touched[y0:y1, x0:x1] & sub).sum() / n))
    meta = dict(annotation.meta)
    meta["damage"] = damage
    meta["degradation"] = params.to_dict()
    degraded = np.clip(np.round(out), 0, 255).astype(np.uint8)
    return degraded, replace(annotation, meta=meta)
