"""Template-matching stand-in for the neural detector and classifier.

Detection correlates class templates against a shading-normalised image;
glyphs and background share one colour, so only local relief contrast is
informative. Classification correlates a high-passed thumbnail of the crop
with per-class mean thumbnails and abstains to NON_CHARACTER below a floor.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import cv2
import numpy as np
from scipy import ndimage

from ..alphabet import NON_CHARACTER
from ..corpus import BBox, SealAnnotation, crop_box
from .nms import nms
from .types import ClassScores, Detection

PYRAMID = (0.8, 1.0, 1.25)
TEMPLATE_FORMAT = "sealread-templates/1"


@dataclass
class BaselineParams:
    score_floor: float = 0.5
    nms_threshold: float = 0.1
    context: float = 0.25  # template margin around the glyph, in glyph heights
    thumb_size: int = 32
    class_floor: float = 0.45  # correlation under which a crop is NON_CHARACTER
    sharpness: float = 25.0  # softmax inverse temperature over correlations
    max_variants: int = 2
    variant_split: float = 0.75  # split a class when its two cluster means correlate less


@dataclass
class Template:
    class_name: str
    image: np.ndarray  # float32, shading-normalised, glyph plus margin
    glyph_box: tuple[int, int, int, int]  # x0, y0, x1, y1 of the glyph inside ``image``


@dataclass
class TemplateBank:
    detection: list[Template]
    thumbs: dict[str, list[np.ndarray]]  # class -> unit-norm thumbnails
    glyph_px: float
    params: BaselineParams = field(default_factory=BaselineParams)
    pad_fraction: float = 0.1
    crop_size: int = 256
    source_seals: tuple[str, ...] = ()

    @property
    def classes(self) -> list[str]:
        return sorted(self.thumbs)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        if path.suffix != ".npz":
            path = path / "templates.npz"
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {}
        det_meta = []
        for i, t in enumerate(self.detection):
            arrays[f"det_{i}"] = t.image
            det_meta.append({"class_name": t.class_name, "glyph_box": list(t.glyph_box)})
        thumb_meta = []
        for name in self.classes:
            for j, th in enumerate(self.thumbs[name]):
                arrays[f"thumb_{len(thumb_meta)}"] = th
                thumb_meta.append(name)
        meta = {
            "format": TEMPLATE_FORMAT,
            "detection": det_meta,
            "thumbs": thumb_meta,
            "glyph_px": self.glyph_px,
            "params": asdict(self.params),
            "pad_fraction": self.pad_fraction,
            "crop_size": self.crop_size,
            "source_seals": list(self.source_seals),
        }
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez_compressed(fh, **arrays)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "TemplateBank":
        path = Path(path)
        if path.is_dir():
            path = path / "templates.npz"
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode("utf-8"))
            if meta.get("format") != TEMPLATE_FORMAT:
                raise ValueError(f"{path}: not a template bank")
            det = [
                Template(m["class_name"], data[f"det_{i}"], tuple(m["glyph_box"]))
                for i, m in enumerate(meta["detection"])
            ]
            thumbs: dict[str, list[np.ndarray]] = {}
            for i, name in enumerate(meta["thumbs"]):
                thumbs.setdefault(name, []).append(data[f"thumb_{i}"])
        return cls(
            det, thumbs, float(meta["glyph_px"]), BaselineParams(**meta["params"]),
            float(meta["pad_fraction"]), int(meta["crop_size"]), tuple(meta["source_seals"]),
        )


# ---------------------------------------------------------------------------
# Image preprocessing


def disc_mask(image: np.ndarray, white: int = 245) -> np.ndarray:
    """Pixels of the seal itself (the background is white)."""
    mask = (image < white).astype(np.uint8)
    mask = cv2.morphologyEx(mask, cv2.MORPH_OPEN, np.ones((3, 3), np.uint8))
    return mask.astype(bool)


def shading_normalize(image: np.ndarray, glyph_px: float, return_mask: bool = False):
    """Local mean/variance normalisation restricted to the seal disc.

    Pixels off the disc (and a thin band along its edge) are set to 0; with
    ``return_mask`` the boolean mask of valid pixels is returned as well.
    """
    f = image.astype(np.float32) / 255.0
    mask = disc_mask(image)
    m = mask.astype(np.float32)
    sigma = max(2.0, 1.5 * glyph_px)
    weight = cv2.GaussianBlur(m, (0, 0), sigma) + 1e-6
    mu = cv2.GaussianBlur(f * m, (0, 0), sigma) / weight
    d = (f - mu) * m
    var = cv2.GaussianBlur(d * d, (0, 0), sigma) / weight
    out = d / np.sqrt(var + 1e-4)
    inner = cv2.erode(mask.astype(np.uint8), np.ones((5, 5), np.uint8)).astype(bool)
    out[~inner] = 0.0
    out = out.astype(np.float32)
    return (out, inner) if return_mask else out


def thumbnail(crop: np.ndarray, size: int) -> np.ndarray:
    """High-passed, zero-mean, unit-norm thumbnail of a crop."""
    t = cv2.resize(crop.astype(np.float32), (size, size), interpolation=cv2.INTER_AREA)
    t = t - cv2.GaussianBlur(t, (0, 0), size / 8)
    t -= t.mean()
    n = float(np.linalg.norm(t))
    return t / n if n > 1e-6 else np.zeros_like(t)


def _two_means(vectors: np.ndarray, iters: int = 10) -> np.ndarray:
    """Labels of a deterministic 2-means split (farthest-pair seeding)."""
    sim = vectors @ vectors.T
    a = 0
    b = int(np.argmin(sim[a]))
    centres = vectors[[a, b]].copy()
    labels = np.zeros(len(vectors), int)
    for _ in range(iters):
        labels = np.argmax(vectors @ centres.T, axis=1)
        for k in range(2):
            if np.any(labels == k):
                c = vectors[labels == k].mean(axis=0)
                centres[k] = c / (np.linalg.norm(c) + 1e-12)
    return labels


def _unit(v: np.ndarray) -> np.ndarray:
    v = v - v.mean()
    return v / (np.linalg.norm(v) + 1e-12)


# ---------------------------------------------------------------------------
# Training


def build_templates(
    seals: Sequence[SealAnnotation],
    load_image: Callable[[SealAnnotation], np.ndarray],
    params: BaselineParams = BaselineParams(),
    pad_fraction: float = 0.1,
    crop_size: int = 256,
    classes: Iterable[str] | None = None,
) -> TemplateBank:
    """Average the ground-truth crops of ``seals`` into per-class templates.

    Classes with visibly different glyph shapes get up to
    ``params.max_variants`` templates (2-means on the thumbnails).
    """
    allowed = set(classes) if classes is not None else None
    heights = [c.bbox.h * s.image_h for s in seals for c in s.chars if c.class_name != NON_CHARACTER]
    if not heights:
        raise ValueError("no character boxes to build templates from")
    glyph_px = float(np.median(heights))
    margin_rel = params.context

    det_crops: dict[str, list[tuple[np.ndarray, tuple[float, float]]]] = {}
    thumbs: dict[str, list[np.ndarray]] = {}
    for seal in seals:
        image = load_image(seal)
        norm = shading_normalize(image, glyph_px)
        H, W = image.shape
        for c in seal.chars:
            if c.class_name == NON_CHARACTER:
                continue
            if allowed is not None and c.class_name not in allowed:
                continue
            bw, bh = c.bbox.w * W, c.bbox.h * H
            m = margin_rel * bh
            x0, y0 = c.bbox.x0 * W - m, c.bbox.y0 * H - m
            x1, y1 = c.bbox.x1 * W + m, c.bbox.y1 * H + m
            if x0 < 0 or y0 < 0 or x1 > W or y1 > H:
                continue
            ix0, iy0, ix1, iy1 = int(round(x0)), int(round(y0)), int(round(x1)), int(round(y1))
            det_crops.setdefault(c.class_name, []).append((norm[iy0:iy1, ix0:ix1], (bw, bh)))
            crop = crop_box(image, c.bbox, pad_fraction, crop_size)
            if crop is not None:
                thumbs.setdefault(c.class_name, []).append(thumbnail(crop, params.thumb_size))

    detection: list[Template] = []
    thumb_bank: dict[str, list[np.ndarray]] = {}
    for name in sorted(det_crops):
        items = det_crops[name]
        vecs = np.stack([t.ravel() for t in thumbs[name]])
        labels = np.zeros(len(items), int)
        if params.max_variants > 1 and len(items) >= 4:
            split = _two_means(vecs)
            if min(np.bincount(split, minlength=2)) >= 2:
                c0 = _unit(vecs[split == 0].mean(axis=0))
                c1 = _unit(vecs[split == 1].mean(axis=0))
                if float(c0 @ c1) < params.variant_split:
                    labels = split
        thumb_bank[name] = []
        for k in sorted(set(labels.tolist())):
            group = [items[i] for i in range(len(items)) if labels[i] == k]
            bw = float(np.median([s[0] for _, s in group]))
            bh = float(np.median([s[1] for _, s in group]))
            m = margin_rel * bh
            tw, th = int(round(bw + 2 * m)), int(round(bh + 2 * m))
            acc = np.zeros((th, tw), np.float64)
            for img, _ in group:
                acc += cv2.resize(img, (tw, th), interpolation=cv2.INTER_LINEAR)
            acc /= len(group)
            gx0, gy0 = int(round(m)), int(round(m))
            detection.append(Template(name, acc.astype(np.float32), (gx0, gy0, tw - gx0, th - gy0)))
            thumb_bank[name].append(_unit(vecs[labels == k].mean(axis=0)).reshape(params.thumb_size, params.thumb_size).astype(np.float32))
    return TemplateBank(detection, thumb_bank, glyph_px, params, pad_fraction, crop_size, tuple(s.seal_id for s in seals))


# ---------------------------------------------------------------------------
# Inference


def _scaled(t: Template, scale: float) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    if scale == 1.0:
        return t.image, t.glyph_box
    h, w = t.image.shape
    nw, nh = max(3, int(round(w * scale))), max(3, int(round(h * scale)))
    img = cv2.resize(t.image, (nw, nh), interpolation=cv2.INTER_AREA if scale < 1 else cv2.INTER_LINEAR)
    sx, sy = nw / w, nh / h
    x0, y0, x1, y1 = t.glyph_box
    return img, (int(round(x0 * sx)), int(round(y0 * sy)), int(round(x1 * sx)), int(round(y1 * sy)))


def baseline_detect(
    image: np.ndarray,
    templates: TemplateBank | Sequence[Template],
    score_floor: float | None = None,
    nms_threshold: float | None = None,
    glyph_px: float | None = None,
    scales: Sequence[float] = PYRAMID,
) -> list[Detection]:
    """Correlate every template at every pyramid scale; peaks above the floor, then NMS."""
    if isinstance(templates, TemplateBank):
        bank = templates
        tmpl = bank.detection
        glyph_px = glyph_px or bank.glyph_px
        score_floor = bank.params.score_floor if score_floor is None else score_floor
        nms_threshold = bank.params.nms_threshold if nms_threshold is None else nms_threshold
    else:
        tmpl = list(templates)
        if not tmpl:
            raise ValueError("no templates")
        if glyph_px is None:
            glyph_px = float(np.median([t.glyph_box[3] - t.glyph_box[1] for t in tmpl]))
        score_floor = 0.5 if score_floor is None else score_floor
        nms_threshold = 0.1 if nms_threshold is None else nms_threshold
    if not tmpl:
        raise ValueError("no templates")
    H, W = image.shape[:2]
    norm, valid = shading_normalize(image, glyph_px, return_mask=True)
    valid = valid.astype(np.float32)
    cands: list[Detection] = []
    for t in tmpl:
        for s in scales:
            timg, (gx0, gy0, gx1, gy1) = _scaled(t, s)
            th, tw = timg.shape
            if th > H or tw > W or float(timg.std()) < 1e-6:
                continue
            r = cv2.matchTemplate(norm, timg, cv2.TM_CCOEFF_NORMED)
            r[~np.isfinite(r)] = 0.0
            # windows hanging off the disc correlate against zeros: unreliable
            cover = cv2.boxFilter(valid, -1, (tw, th), anchor=(0, 0), borderType=cv2.BORDER_CONSTANT)
            r[cover[: r.shape[0], : r.shape[1]] < 0.9] = 0.0
            if r.max() < score_floor:
                continue
            peak = r == ndimage.maximum_filter(r, size=(max(3, th // 3), max(3, tw // 3)), mode="constant")
            ys, xs = np.nonzero(peak & (r >= score_floor))
            for y, x in zip(ys.tolist(), xs.tolist()):
                x0, y0 = max(0, x + gx0), max(0, y + gy0)
                x1, y1 = min(W, x + gx1), min(H, y + gy1)
                if x1 <= x0 or y1 <= y0:
                    continue
                box = BBox.from_pixels(x0, y0, x1, y1, W, H)
                cands.append(Detection(box, float(min(1.0, r[y, x]))))
    return nms(cands, nms_threshold)


def baseline_classify(crop: np.ndarray, bank: TemplateBank, classes: Sequence[str]) -> ClassScores:
    """Scores over ``classes``; NON_CHARACTER gets the abstention floor as its correlation."""
    p = bank.params
    v = thumbnail(crop, p.thumb_size).ravel()
    corr = []
    for name in classes:
        if name == NON_CHARACTER:
            corr.append(p.class_floor)
            continue
        ts = bank.thumbs.get(name)
        corr.append(max(float(v @ t.ravel()) for t in ts) if ts else -1.0)
    if NON_CHARACTER not in classes and not np.any(np.asarray(corr) > -1.0):
        corr = [0.0] * len(corr)
    z = p.sharpness * np.asarray(corr, dtype=np.float64)
    z = np.exp(z - z.max())
    return ClassScores.normalized(classes, z.tolist())
