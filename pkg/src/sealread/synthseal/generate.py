from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..alphabet import SAMPLE_COUNTS, GLYPH_VARIANTS, NON_CHARACTER, AlphabetRegistry, default_registry
from ..corpus import CorpusManifest, derive_seed, save_manifest, write_image
from .glyphs import glyph
from .render import (
    DegradationParams,
    SealSpec,
    generate_seal,
    inner_radius,
    line_offsets,
    line_width_px,
    max_line_width,
)


@dataclass
class CorpusConfig:
    """Distributions the per-seal specs are drawn from."""

    diameter_px: int = 400
    margin_px: int = 16
    n_lines: tuple[int, int] = (3, 6)
    glyph_scale: float = 0.065
    line_pitch: float = 2.0
    char_gap: float = 0.35
    min_chars_per_line: int = 3
    lighting_azimuth: float = 135.0
    azimuth_jitter: float = 0.0
    relief_depth: tuple[float, float] = (0.9, 1.0)
    noise_sigma: float = 0.01
    rotation_deg: tuple[float, float] = (-2.0, 2.0)
    degradation: DegradationParams = field(default_factory=DegradationParams)
    class_weights: dict[str, float] | None = None  # default: SAMPLE_COUNTS
    variant_probs: dict[str, list[float]] | None = None  # default: uniform over variants
    side: str = "reverse"
    collection: str = "synthetic"
    id_prefix: str = "syn"

    def weights(self) -> dict[str, float]:
        w = self.class_weights if self.class_weights is not None else SAMPLE_COUNTS
        w = {k: float(v) for k, v in w.items() if v > 0 and k != NON_CHARACTER}
        if not w:
            raise ValueError("class_weights has no positive entry")
        return w

    def to_dict(self) -> dict:
        d = asdict(self)
        d["degradation"] = self.degradation.to_dict()
        return d

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "CorpusConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown corpus config keys: {sorted(unknown)}")
        kw = dict(doc)
        if "degradation" in kw and isinstance(kw["degradation"], Mapping):
            deg = dict(kw["degradation"])
            if "occlusion_radius" in deg:
                deg["occlusion_radius"] = tuple(deg["occlusion_radius"])
            kw["degradation"] = DegradationParams(**deg)
        for key in ("n_lines", "relief_depth", "rotation_deg"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "CorpusConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _pick_variant(name: str, cfg: CorpusConfig, rng: np.random.Generator) -> int:
    n = GLYPH_VARIANTS.get(name, 1)
    if n == 1:
        return 0
    probs = (cfg.variant_probs or {}).get(name)
    if probs is None:
        probs = [1.0 / n] * n
    return int(rng.choice(n, p=np.asarray(probs) / np.sum(probs)))


def sample_spec(cfg: CorpusConfig, rng: np.random.Generator) -> SealSpec:
    """Draw one seal's text and rendering parameters.

    Lines are filled to a random fraction of the chord available at their
    height, so every drawn text fits the disc.
    """
    weights = cfg.weights()
    names = sorted(weights)
    p = np.array([weights[n] for n in names])
    p /= p.sum()
    gh = cfg.glyph_scale * cfg.diameter_px
    r_in = inner_radius(cfg.diameter_px)
    lo, hi = cfg.n_lines
    n_lines = int(rng.integers(lo, hi + 1))
    offsets = line_offsets(n_lines, gh, cfg.line_pitch)
    while n_lines > 1 and max_line_width(offsets[0], gh, r_in) < line_width_px(["IOTA"], [0], gh, cfg.char_gap) * 2:
        n_lines -= 1
        offsets = line_offsets(n_lines, gh, cfg.line_pitch)
    text, variants = [], []
    for off in offsets:
        limit = max_line_width(off, gh, r_in) * rng.uniform(0.75, 1.0)
        line, vline = [], []
        while True:
            name = str(rng.choice(names, p=p))
            var = _pick_variant(name, cfg, rng)
            if line_width_px(line + [name], vline + [var], gh, cfg.char_gap) > limit:
                if len(line) >= cfg.min_chars_per_line:
                    break
                # line still too short: retry with the narrowest glyph that fits
                fits = [
                    n for n in names
                    if line_width_px(line + [n], vline + [0], gh, cfg.char_gap) <= max_line_width(off, gh, r_in)
                ]
                if not fits:
                    break
                name = min(fits, key=lambda n: glyph(n).width)
                var = 0
            line.append(name)
            vline.append(var)
        if not line:
            raise ValueError("glyph_scale too large for the disc: a line cannot hold one glyph")
        text.append(line)
        variants.append(vline)
    return SealSpec(
        text=text,
        diameter_px=cfg.diameter_px,
        glyph_scale=cfg.glyph_scale,
        lighting_azimuth=cfg.lighting_azimuth + rng.uniform(-cfg.azimuth_jitter, cfg.azimuth_jitter),
        relief_depth=float(rng.uniform(*cfg.relief_depth)),
        noise_sigma=cfg.noise_sigma,
        rotation_deg=float(rng.uniform(*cfg.rotation_deg)),
        degradation=replace(cfg.degradation),
        line_pitch=cfg.line_pitch,
        char_gap=cfg.char_gap,
        margin_px=cfg.margin_px,
        variants=variants,
    )


def generate_corpus(
    cfg: CorpusConfig,
    n_seals: int,
    seed: int,
    out_dir: str | Path | None = None,
    registry: AlphabetRegistry | None = None,
    jobs: int = 1,
) -> tuple[CorpusManifest, list[np.ndarray]]:
    """Generate ``n_seals`` seals; write PNGs and manifest.json if ``out_dir`` is given.

    Seal ``i`` depends only on ``(seed, i)``, so parallel and sequential runs
    give identical output.
    """
    if n_seals < 1:
        raise ValueError("n_seals must be >= 1")
    registry = registry or default_registry()

    def one(i: int):
        seal_seed = derive_seed(seed, "seal", i)
        rng = np.random.default_rng(derive_seed(seal_seed, "spec"))
        spec = sample_spec(cfg, rng)
        seal_id = f"{cfg.id_prefix}-{i:04d}"
        raster, ann = generate_seal(spec, seal_seed, seal_id=seal_id, registry=registry)
        ann = replace(ann, side=cfg.side, collection=cfg.collection)
        return raster, ann

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(one, range(n_seals)))
    else:
        results = [one(i) for i in range(n_seals)]
    images = [r for r, _ in results]
    seals = tuple(a for _, a in results)
    root = Path(out_dir) if out_dir is not None else None
    manifest = CorpusManifest(
        registry.version,
        seals,
        {"generator": "sealread.synthseal", "seed": int(seed), "n_seals": n_seals, "config": cfg.to_dict()},
        root,
    )
    if root is not None:
        for img, ann in zip(images, seals):
            write_image(root / ann.image_path, img)
        save_manifest(manifest, root / "manifest.json")
    return manifest, images
