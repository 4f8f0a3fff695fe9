"""Seal annotations, manifest I/O, seal-level folds and character crops."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import cv2
import numpy as np

from .alphabet import NON_CHARACTER, AlphabetRegistry, default_registry

log = logging.getLogger(__name__)

MANIFEST_FORMAT = "sealread-manifest"
SIDES = ("obverse", "reverse")
NONCHAR_IOU_CUTOFF = 0.10
NONCHAR_ATTEMPTS_PER_BOX = 1000


class ManifestError(ValueError):
    """Schema or invariant violation in a corpus manifest."""

    def __init__(self, message: str, seal_id: str | None = None, path: str | None = None):
        where = ""
        if seal_id is not None:
            where += f"seal {seal_id!r}"
        if path:
            where += (": " if where else "") + path
        super().__init__(f"{where}: {message}" if where else message)
        self.seal_id = seal_id
        self.path = path


class FoldError(ValueError):
    pass


class LeakageError(AssertionError):
    """A seal contributes to both the training and the test side of a fold."""


@dataclass(frozen=True)
class BBox:
    """Box as normalised centre and size, all in image-relative units."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"BBox.{name} is not finite: {v}")
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"BBox centre outside the unit square: ({self.cx}, {self.cy})")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise ValueError(f"BBox size outside (0, 1]: ({self.w}, {self.h})")

    @property
    def x0(self) -> float:
        return self.cx - self.w / 2

    @property
    def y0(self) -> float:
        return self.cy - self.h / 2

    @property
    def x1(self) -> float:
        return self.cx + self.w / 2

    @property
    def y1(self) -> float:
        return self.cy + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "BBox":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    @classmethod
    def from_pixels(cls, x0: float, y0: float, x1: float, y1: float, width: int, height: int) -> "BBox":
        """Box from pixel corners; ``x1``/``y1`` are exclusive edges."""
        return cls.from_corners(x0 / width, y0 / height, x1 / width, y1 / height)

    def to_pixels(self, width: int, height: int) -> tuple[int, int, int, int]:
        """Integer pixel corners (x0, y0, x1, y1), clipped to the image, end-exclusive."""
        x0 = int(round(self.x0 * width))
        y0 = int(round(self.y0 * height))
        x1 = int(round(self.x1 * width))
        y1 = int(round(self.y1 * height))
        return (max(0, x0), max(0, y0), min(width, x1), min(height, y1))


@dataclass(frozen=True)
class CharBox:
    bbox: BBox
    class_name: str
    line_hint: int | None = None


@dataclass(frozen=True)
class SealAnnotation:
    seal_id: str
    collection: str
    side: str
    image_path: str
    image_w: int
    image_h: int
    chars: tuple[CharBox, ...]
    transcription_gt: tuple[tuple[str, ...], ...] | None = None
    meta: Mapping[str, Any] = field(default_factory=dict, compare=False)

    @property
    def gt_sequence(self) -> list[str]:
        """Flattened ground-truth transcription (falls back to box order)."""
        if self.transcription_gt is not None:
            return [name for line in self.transcription_gt for name in line]
        return [c.class_name for c in self.chars if c.class_name != NON_CHARACTER]

    @property
    def gt_boxes(self) -> list[BBox]:
        return [c.bbox for c in self.chars]


@dataclass(frozen=True)
class CorpusManifest:
    registry_version: str
    seals: tuple[SealAnnotation, ...]
    provenance: Mapping[str, Any] = field(default_factory=dict)
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        seen: set[str] = set()
        for s in self.seals:
            if s.seal_id in seen:
                raise ManifestError("duplicate seal_id", s.seal_id, "seal_id")
            seen.add(s.seal_id)

    def __len__(self) -> int:
        return len(self.seals)

    def get(self, seal_id: str) -> SealAnnotation:
        for s in self.seals:
            if s.seal_id == seal_id:
                return s
        raise KeyError(seal_id)

    @property
    def by_id(self) -> dict[str, SealAnnotation]:
        return {s.seal_id: s for s in self.seals}

    def select(self, side: str | None = None) -> list[SealAnnotation]:
        return [s for s in self.seals if side is None or s.side == side]

    def image_file(self, seal: SealAnnotation) -> Path:
        base = self.root if self.root is not None else Path(".")
        return base / seal.image_path

    def load_image(self, seal: SealAnnotation) -> np.ndarray:
        return read_image(self.image_file(seal))

    def class_counts(self, side: str | None = None) -> dict[str, int]:
        counts: dict[str, int] = {}
        for s in self.select(side):
            for c in s.chars:
                counts[c.class_name] = counts.get(c.class_name, 0) + 1
        return counts


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    folds: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if self.k < 2:
            raise FoldError("k must be >= 2")
        if len(self.folds) != self.k:
            raise FoldError(f"plan declares k={self.k} but holds {len(self.folds)} folds")

    @property
    def seal_ids(self) -> list[str]:
        return [sid for fold in self.folds for sid in fold]

    def to_dict(self) -> dict:
        return {"k": self.k, "seed": self.seed, "folds": [list(f) for f in self.folds]}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "FoldPlan":
        return cls(int(doc["k"]), int(doc["seed"]), tuple(tuple(str(s) for s in f) for f in doc["folds"]))


# ---------------------------------------------------------------------------
# Manifest (de)serialisation


def _bbox_from(value: Any, seal_id: str, path: str) -> BBox:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise ManifestError("bbox must be a list [cx, cy, w, h]", seal_id, path)
    try:
        return BBox(*(float(v) for v in value))
    except (TypeError, ValueError) as exc:
        raise ManifestError(str(exc), seal_id, path) from None


def _require(doc: Mapping, key: str, kind, seal_id: str | None, path: str):
    if key not in doc:
        raise ManifestError("missing field", seal_id, f"{path}{key}")
    value = doc[key]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ManifestError(f"expected {getattr(kind, '__name__', kind)}", seal_id, f"{path}{key}")
    return value


def seal_from_dict(doc: Mapping, registry: AlphabetRegistry, index: int = 0) -> SealAnnotation:
    if not isinstance(doc, Mapping):
        raise ManifestError("seal entry must be an object", None, f"seals[{index}]")
    seal_id = doc.get("seal_id")
    if not isinstance(seal_id, str) or not seal_id:
        raise ManifestError("seal_id must be a non-empty string", None, f"seals[{index}].seal_id")
    collection = _require(doc, "collection", str, seal_id, "")
    side = _require(doc, "side", str, seal_id, "")
    if side not in SIDES:
        raise ManifestError(f"side must be one of {SIDES}", seal_id, "side")
    image_path = _require(doc, "image_path", str, seal_id, "")
    image_w = _require(doc, "image_w", int, seal_id, "")
    image_h = _require(doc, "image_h", int, seal_id, "")
    if image_w <= 0 or image_h <= 0:
        raise ManifestError("image dimensions must be positive", seal_id, "image_w/image_h")
    raw_chars = _require(doc, "chars", list, seal_id, "")
    chars = []
    for i, c in enumerate(raw_chars):
        p = f"chars[{i}]"
        if not isinstance(c, Mapping):
            raise ManifestError("char entry must be an object", seal_id, p)
        name = _require(c, "class_name", str, seal_id, p + ".")
        if name not in registry:
            raise ManifestError(f"unknown class name {name!r}", seal_id, p + ".class_name")
        hint = c.get("line_hint")
        if hint is not None and (not isinstance(hint, int) or isinstance(hint, bool) or hint < 0):
            raise ManifestError("line_hint must be a nonnegative integer", seal_id, p + ".line_hint")
        chars.append(CharBox(_bbox_from(c.get("bbox"), seal_id, p + ".bbox"), name, hint))
    gt = doc.get("transcription_gt")
    transcription = None
    if gt is not None:
        if not isinstance(gt, list) or not all(isinstance(line, list) for line in gt):
            raise ManifestError("transcription_gt must be a list of lists", seal_id, "transcription_gt")
        for li, line in enumerate(gt):
            for ci, name in enumerate(line):
                if not isinstance(name, str) or name not in registry:
                    raise ManifestError(f"unknown class name {name!r}", seal_id, f"transcription_gt[{li}][{ci}]")
                if name == NON_CHARACTER:
                    raise ManifestError("NON_CHARACTER in transcription", seal_id, f"transcription_gt[{li}][{ci}]")
        transcription = tuple(tuple(line) for line in gt)
        want = sorted(c.class_name for c in chars if c.class_name != NON_CHARACTER)
        got = sorted(n for line in transcription for n in line)
        if want != got:
            raise ManifestError(
                "transcription_gt does not contain the same characters as chars", seal_id, "transcription_gt"
            )
    meta = doc.get("meta", {})
    if not isinstance(meta, Mapping):
        raise ManifestError("meta must be an object", seal_id, "meta")
    return SealAnnotation(seal_id, collection, side, image_path, image_w, image_h, tuple(chars), transcription, dict(meta))


def seal_to_dict(seal: SealAnnotation) -> dict:
    doc: dict[str, Any] = {
        "seal_id": seal.seal_id,
        "collection": seal.collection,
        "side": seal.side,
        "image_path": seal.image_path,
        "image_w": seal.image_w,
        "image_h": seal.image_h,
        "chars": [
            {"bbox": list(c.bbox.as_tuple()), "class_name": c.class_name, "line_hint": c.line_hint}
            for c in seal.chars
        ],
        "transcription_gt": None if seal.transcription_gt is None else [list(l) for l in seal.transcription_gt],
    }
    if seal.meta:
        doc["meta"] = dict(seal.meta)
    return doc


def manifest_from_dict(doc: Mapping, registry: AlphabetRegistry | None = None, root: Path | None = None) -> CorpusManifest:
    registry = registry or default_registry()
    if not isinstance(doc, Mapping):
        raise ManifestError("manifest must be an object")
    fmt = doc.get("format", MANIFEST_FORMAT)
    if fmt != MANIFEST_FORMAT:
        raise ManifestError(f"unexpected format tag {fmt!r}", None, "format")
    version = _require(doc, "registry_version", str, None, "")
    if version != registry.version:
        raise ManifestError(f"registry version {version!r} does not match {registry.version!r}", None, "registry_version")
    raw = _require(doc, "seals", list, None, "")
    seals = [seal_from_dict(s, registry, i) for i, s in enumerate(raw)]
    provenance = doc.get("provenance", {})
    if not isinstance(provenance, Mapping):
        raise ManifestError("provenance must be an object", None, "provenance")
    return CorpusManifest(version, tuple(seals), dict(provenance), root)


def manifest_to_dict(manifest: CorpusManifest) -> dict:
    return {
        "format": MANIFEST_FORMAT,
        "registry_version": manifest.registry_version,
        "provenance": dict(manifest.provenance),
        "seals": [seal_to_dict(s) for s in manifest.seals],
    }


def load_manifest(path: str | Path, registry: AlphabetRegistry | None = None) -> CorpusManifest:
    """Read and validate a manifest. A directory means ``<dir>/manifest.json``."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"not valid JSON: {exc}") from None
    return manifest_from_dict(doc, registry, root=path.parent)


def dump_json(doc: Any) -> str:
    return json.dumps(doc, indent=1, ensure_ascii=False, sort_keys=False) + "\n"


def save_manifest(manifest: CorpusManifest, path: str | Path) -> Path:
    path = Path(path)
    if path.is_dir() or path.suffix == "":
        path = path / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json(manifest_to_dict(manifest)), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Images


def read_image(path: str | Path) -> np.ndarray:
    """Load a PNG as an 8-bit gray array."""
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FileNotFoundError(f"cannot read image {path}")
    if img.dtype != np.uint8:
        raise ManifestError(f"{path}: only 8-bit images are supported")
    if img.ndim == 3:
        code = cv2.COLOR_BGRA2GRAY if img.shape[2] == 4 else cv2.COLOR_BGR2GRAY
        img = cv2.cvtColor(img, code)
    return img


def write_image(path: str | Path, image: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), image, [cv2.IMWRITE_PNG_COMPRESSION, 6]):
        raise OSError(f"cannot write {path}")


def encode_png(image: np.ndarray) -> bytes:
    ok, buf = cv2.imencode(".png", image, [cv2.IMWRITE_PNG_COMPRESSION, 6])
    if not ok:
        raise ValueError("PNG encoding failed")
    return buf.tobytes()


def decode_png(data: bytes) -> np.ndarray:
    img = cv2.imdecode(np.frombuffer(data, np.uint8), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise ValueError("PNG decoding failed")
    if img.ndim == 3:
        img = cv2.cvtColor(img, cv2.COLOR_BGR2GRAY)
    return img


# ---------------------------------------------------------------------------
# Folds


def derive_seed(*parts: Any) -> int:
    """Stable 64-bit seed from arbitrary printable parts."""
    h = hashlib.blake2b("\x1f".join(str(p) for p in parts).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def make_folds(manifest: CorpusManifest, k: int, seed: int, side_filter: str | None = "reverse") -> FoldPlan:
    """Shuffle the selected seals (sorted by id first) and cut them into k folds.

    The first ``n % k`` folds receive one extra seal.
    """
    if k < 2:
        raise FoldError("k must be >= 2")
    ids = sorted(s.seal_id for s in manifest.select(side_filter))
    if len(ids) < k:
        raise FoldError(f"{len(ids)} seals selected, fewer than k={k}")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    base, extra = divmod(len(ids), k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(tuple(order[start:start + size]))
        start += size
    return FoldPlan(k, seed, tuple(folds))


def fold_split(
    plan: FoldPlan, test_fold: int, manifest: CorpusManifest
) -> tuple[list[SealAnnotation], list[SealAnnotation]]:
    """Seals of every other fold for training, seals of ``test_fold`` for testing."""
    if not 0 <= test_fold < plan.k:
        raise FoldError(f"test_fold {test_fold} outside [0, {plan.k})")
    by_id = manifest.by_id
    missing = [sid for sid in plan.seal_ids if sid not in by_id]
    if missing:
        raise FoldError(f"plan references unknown seals: {missing[:5]}")
    test = [by_id[sid] for sid in plan.folds[test_fold]]
    train = [by_id[sid] for i, f in enumerate(plan.folds) if i != test_fold for sid in f]
    return train, test


def augment_training(
    train: Sequence[SealAnnotation], extra: Iterable[SealAnnotation], test: Sequence[SealAnnotation]
) -> list[SealAnnotation]:
    """Append extra (e.g. obverse) seals to a training set.

    Any seal id already on the test side is rejected outright.
    """
    test_ids = {s.seal_id for s in test}
    out = list(train)
    have = {s.seal_id for s in out}
    for s in extra:
        if s.seal_id in test_ids:
            raise LeakageError(f"seal {s.seal_id} is in the test fold and cannot augment training")
        if s.seal_id not in have:
            out.append(s)
            have.add(s.seal_id)
    return out


def check_no_leakage(train_ids: Iterable[str], test_ids: Iterable[str]) -> None:
    shared = sorted(set(train_ids) & set(test_ids))
    if shared:
        raise LeakageError(f"seals present on both train and test side: {shared}")


# ---------------------------------------------------------------------------
# Crops and non-character sampling


@dataclass(frozen=True)
class CropSkip:
    seal_id: str
    index: int
    reason: str


def crop_region(bbox: BBox, width: int, height: int, pad_fraction: float) -> tuple[int, int, int, int]:
    """Pixel region (x0, y0, x1, y1) of a box padded by pad_fraction*max(w, h) per side."""
    if pad_fraction < 0:
        raise ValueError("pad_fraction must be >= 0")
    pad = pad_fraction * max(bbox.w * width, bbox.h * height)
    x0 = bbox.x0 * width - pad
    y0 = bbox.y0 * height - pad
    x1 = bbox.x1 * width + pad
    y1 = bbox.y1 * height + pad
    x0, y0 = max(0, int(round(x0))), max(0, int(round(y0)))
    x1, y1 = min(width, int(round(x1))), min(height, int(round(y1)))
    return x0, y0, x1, y1


def crop_box(image: np.ndarray, bbox: BBox, pad_fraction: float, out_size: int) -> np.ndarray | None:
    h, w = image.shape[:2]
    x0, y0, x1, y1 = crop_region(bbox, w, h, pad_fraction)
    if x1 <= x0 or y1 <= y0:
        return None
    region = image[y0:y1, x0:x1]
    interp = cv2.INTER_AREA if region.shape[0] > out_size or region.shape[1] > out_size else cv2.INTER_LINEAR
    return cv2.resize(region, (out_size, out_size), interpolation=interp)


def extract_crops(
    seal: SealAnnotation,
    image: np.ndarray,
    pad_fraction: float = 0.1,
    out_size: int = 256,
    chars: Sequence[CharBox] | None = None,
    skipped: list[CropSkip] | None = None,
) -> list[tuple[np.ndarray, str]]:
    """One ``out_size`` square crop per character box of the seal.

    Boxes that collapse to nothing after clipping are skipped; pass a list
    as ``skipped`` to collect the reasons.
    """
    if image.shape[0] != seal.image_h or image.shape[1] != seal.image_w:
        raise ValueError(
            f"image is {image.shape[1]}x{image.shape[0]} but seal {seal.seal_id} "
            f"is annotated as {seal.image_w}x{seal.image_h}"
        )
    out = []
    for i, c in enumerate(seal.chars if chars is None else chars):
        crop = crop_box(image, c.bbox, pad_fraction, out_size)
        if crop is None:
            log.warning("seal %s: char %d has zero area after clipping, skipped", seal.seal_id, i)
            if skipped is not None:
                skipped.append(CropSkip(seal.seal_id, i, "zero area after clipping"))
            continue
        out.append((crop, c.class_name))
    return out


def mean_char_size(seal: SealAnnotation) -> tuple[float, float]:
    real = [c.bbox for c in seal.chars if c.class_name != NON_CHARACTER]
    if not real:
        raise ValueError(f"seal {seal.seal_id} has no character boxes")
    return (float(np.mean([b.w for b in real])), float(np.mean([b.h for b in real])))


def sample_noncharacters(seal: SealAnnotation, count: int, rng_seed: int) -> list[CharBox]:
    """Random NON_CHARACTER boxes of the seal's mean character size.

    Centres are drawn uniformly over the disc inscribed in the image; a
    candidate is kept only when its IoU with every ground-truth box is below
    0.10. At most 1000 attempts per requested box are made; on exhaustion
    fewer boxes are returned and a warning is logged.
    """
    from .metrics import iou  # local import: metrics depends on this module

    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return []
    w, h = mean_char_size(seal)
    gts = [c.bbox for c in seal.chars if c.class_name != NON_CHARACTER]
    rng = np.random.default_rng(rng_seed)
    out: list[CharBox] = []
    attempts = 0
    budget = NONCHAR_ATTEMPTS_PER_BOX * count
    while len(out) < count and attempts < budget:
        attempts += 1
        r = 0.5 * math.sqrt(rng.random())
        a = 2 * math.pi * rng.random()
        cx = 0.5 + r * math.cos(a)
        cy = 0.5 + r * math.sin(a)
        if cx - w / 2 < 0 or cx + w / 2 > 1 or cy - h / 2 < 0 or cy + h / 2 > 1:
            continue
        box = BBox(cx, cy, w, h)
        if all(iou(box, g) < NONCHAR_IOU_CUTOFF for g in gts):
            out.append(CharBox(box, NON_CHARACTER))
    if len(out) < count:
        log.warning("seal %s: placed %d of %d non-character boxes", seal.seal_id, len(out), count)
    return out


def with_chars(seal: SealAnnotation, chars: Sequence[CharBox]) -> SealAnnotation:
    return replace(seal, chars=tuple(chars))
