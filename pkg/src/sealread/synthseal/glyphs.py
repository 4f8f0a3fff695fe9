"""Stroke skeletons for every glyph class.

Coordinates live in a box of height 1 (y grows downwards) and the glyph's
own width; each glyph is a list of polylines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Polyline = list[tuple[float, float]]


def arc(cx: float, cy: float, rx: float, ry: float, a0: float, a1: float, n: int = 24) -> Polyline:
    """Elliptical arc from angle a0 to a1 (degrees, 0 = +x, 90 = down)."""
    return [
        (cx + rx * math.cos(math.radians(a)), cy + ry * math.sin(math.radians(a)))
        for a in np.linspace(a0, a1, n)
    ]


def ellipse(cx, cy, rx, ry, n=40) -> Polyline:
    return arc(cx, cy, rx, ry, 0, 360, n)


@dataclass(frozen=True)
class Glyph:
    width: float
    strokes: tuple[tuple[tuple[float, float], ...], ...]


def _g(width: float, *strokes: Polyline) -> Glyph:
    return Glyph(width, tuple(tuple(s) for s in strokes))


GLYPHS: dict[str, list[Glyph]] = {
    "ALPHA": [_g(0.72, [(0, 1), (0.36, 0), (0.72, 1)], [(0.16, 0.62), (0.56, 0.62)])],
    "BETA": [_g(0.5, [(0, 0), (0, 1)], [(0, 0)] + arc(0.06, 0.25, 0.38, 0.25, -90, 90)[1:] + [(0, 0.5)],
                [(0, 0.5)] + arc(0.08, 0.75, 0.42, 0.25, -90, 90)[1:] + [(0, 1)])],
    "GAMMA": [_g(0.52, [(0, 1), (0, 0), (0.52, 0)])],
    "DELTA": [_g(0.74, [(0, 1), (0.37, 0), (0.74, 1), (0, 1)])],
    "EPSILON": [_g(0.52, [(0.52, 0), (0, 0), (0, 1), (0.52, 1)], [(0, 0.5), (0.4, 0.5)])],
    "ZETA": [_g(0.6, [(0, 0), (0.6, 0), (0, 1), (0.6, 1)])],
    "ETA": [_g(0.6, [(0, 0), (0, 1)], [(0.6, 0), (0.6, 1)], [(0, 0.5), (0.6, 0.5)])],
    "THETA": [_g(0.72, ellipse(0.36, 0.5, 0.36, 0.5), [(0.14, 0.5), (0.58, 0.5)])],
    "IOTA": [_g(0.26, [(0.13, 0), (0.13, 1)], [(0, 0), (0.26, 0)], [(0, 1), (0.26, 1)])],
    "KAPPA": [_g(0.6, [(0, 0), (0, 1)], [(0.56, 0), (0, 0.56)], [(0.18, 0.42), (0.6, 1)])],
    "LAMBDA": [_g(0.7, [(0, 1), (0.35, 0), (0.7, 1)])],
    "MU": [_g(0.82, [(0, 1), (0, 0), (0.41, 0.62), (0.82, 0), (0.82, 1)])],
    "NU": [
        _g(0.62, [(0, 1), (0, 0), (0.62, 1), (0.62, 0)]),
        _g(0.62, [(0, 1), (0, 0)], [(0, 0.1), (0.62, 0.75)], [(0.62, 0), (0.62, 1)]),
    ],
    "XI": [_g(0.6, [(0, 0), (0.6, 0)], [(0.12, 0.5), (0.48, 0.5)], [(0, 1), (0.6, 1)])],
    "OMICRON": [_g(0.7, ellipse(0.35, 0.5, 0.35, 0.5))],
    "PI": [_g(0.66, [(0.08, 1), (0.08, 0)], [(0, 0), (0.66, 0)], [(0.58, 0), (0.58, 1)])],
    "RHO": [_g(0.5, [(0, 1), (0, 0)], [(0, 0)] + arc(0.08, 0.27, 0.42, 0.27, -90, 90)[1:] + [(0, 0.54)])],
    "SIGMA": [_g(0.62, arc(0.42, 0.5, 0.42, 0.5, 50, 310, 30))],
    "TAU": [_g(0.64, [(0, 0), (0.64, 0)], [(0.32, 0), (0.32, 1)])],
    "UPSILON": [
        _g(0.66, [(0, 0), (0.33, 0.5), (0.66, 0)], [(0.33, 0.5), (0.33, 1)]),
        _g(0.66, [(0, 0), (0.33, 1), (0.66, 0)]),
    ],
    "PHI": [_g(0.76, [(0.38, 0), (0.38, 1)], ellipse(0.38, 0.5, 0.38, 0.27))],
    "CHI": [_g(0.64, [(0, 0), (0.64, 1)], [(0.64, 0), (0, 1)])],
    "PSI": [_g(0.72, [(0.36, 0), (0.36, 1)], arc(0.36, 0.15, 0.36, 0.45, 180, 0, 24))],
    "OMEGA": [_g(0.9, [(0, 0), (0.2, 1), (0.45, 0.42), (0.7, 1), (0.9, 0)])],
    "BETA_CLOSED": [_g(0.52, [(0, 0), (0, 1)], [(0, 0)] + arc(0.06, 0.5, 0.46, 0.5, -90, 90)[1:] + [(0, 1)],
                       [(0, 0.5), (0.3, 0.5)])],
    "OU_LIGATURE": [_g(0.7, [(0, 0), (0.35, 0.45), (0.7, 0)], ellipse(0.35, 0.7, 0.26, 0.3))],
    "CT_LIGATURE": [_g(0.96, arc(0.32, 0.5, 0.32, 0.5, 60, 300, 24), [(0.38, 0.02), (0.96, 0.02)], [(0.67, 0.02), (0.67, 1)])],
    "KAI_S": [_g(0.56, [(0.56, 0.12), (0.32, 0), (0.06, 0.1), (0.04, 0.35), (0.5, 0.62), (0.54, 0.88), (0.3, 1), (0, 0.9)])],
    "CROISETTE": [_g(0.7, [(0, 0.5), (0.7, 0.5)], [(0.35, 0), (0.35, 1)], [(0.0, 0.38), (0.0, 0.62)], [(0.7, 0.38), (0.7, 0.62)])],
}


def glyph(name: str, variant: int = 0) -> Glyph:
    variants = GLYPHS[name]
    return variants[variant % len(variants)]


def n_variants(name: str) -> int:
    return len(GLYPHS[name])
