"""Text lines from character boxes, and the diplomatic transcription.

Lines are found by hypothesis-validation in the Hough domain: the densest
(rho, theta) cell proposes a line, which is then validated in the image by
the distance of box centres to it. The process repeats on the boxes that
are still unassigned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .alphabet import NON_CHARACTER
from .corpus import BBox


@dataclass(frozen=True)
class HoughParams:
    theta_range_deg: float = 20.0
    theta_step_deg: float = 1.0
    rho_step: float = 0.5  # cell width, in median box heights
    min_boxes_per_line: int = 2
    proximity_factor: float = 0.75  # validation distance, in median box heights

    def __post_init__(self):
        if self.theta_step_deg <= 0 or self.rho_step <= 0:
            raise ValueError("Hough steps must be positive")
        if self.theta_range_deg < 0:
            raise ValueError("theta_range_deg must be >= 0")
        if self.min_boxes_per_line < 1:
            raise ValueError("min_boxes_per_line must be >= 1")
        if self.proximity_factor <= 0:
            raise ValueError("proximity_factor must be positive")

    def thetas(self) -> np.ndarray:
        n = int(math.floor(self.theta_range_deg / self.theta_step_deg + 1e-9))
        return np.deg2rad(np.arange(-n, n + 1) * self.theta_step_deg)


@dataclass(frozen=True)
class TextLine:
    member_indices: tuple[int, ...]
    rho: float
    theta: float  # radians; direction of the line in image axes
    mean_y: float
    along: tuple[float, ...] = field(default=(), compare=False)  # member positions along the line


@dataclass(frozen=True)
class Transcription:
    lines: tuple[tuple[str, ...], ...]

    @property
    def flattened(self) -> list[str]:
        return [c for line in self.lines for c in line]


def _centres(boxes: Sequence[BBox]) -> np.ndarray:
    return np.array([[b.cx, b.cy] for b in boxes], dtype=np.float64).reshape(-1, 2)


def rho_of(points: np.ndarray, theta: float) -> np.ndarray:
    return -points[:, 0] * math.sin(theta) + points[:, 1] * math.cos(theta)


def along_of(points: np.ndarray, theta: float) -> np.ndarray:
    return points[:, 0] * math.cos(theta) + points[:, 1] * math.sin(theta)


def _make_line(points: np.ndarray, members: Sequence[int], rho: float, theta: float) -> TextLine:
    members = np.asarray(members)
    pos = along_of(points[members], theta)
    order = np.argsort(pos, kind="stable")
    return TextLine(
        tuple(int(m) for m in members[order]),
        float(rho),
        float(theta),
        float(points[members, 1].mean()),
        tuple(float(p) for p in pos[order]),
    )


def _best_cell(points: np.ndarray, idx: np.ndarray, thetas: np.ndarray, width: float):
    """Densest accumulator cell among ``points[idx]``.

    Cells are windows of ``width`` in rho, placed every ``width / 2``; the
    count of a cell is the number of centres whose rho falls inside it.
    Ties go to the theta closest to 0 (negative first), then the smallest rho.
    """
    best = None
    half = width / 2
    for ti in np.argsort(np.abs(thetas) + 1e-12 * (thetas > 0), kind="stable"):
        th = float(thetas[ti])
        r = np.sort(rho_of(points[idx], th))
        lo = math.floor((r[0] - half) / half)
        hi = math.ceil((r[-1] + half) / half)
        centres = np.arange(lo, hi + 1) * half
        counts = np.searchsorted(r, centres + half + 1e-12, side="right") - np.searchsorted(
            r, centres - half - 1e-12, side="left"
        )
        ci = int(np.argmax(counts))
        c = int(counts[ci])
        if best is None or c > best[0]:
            inside = r[(r >= centres[ci] - half - 1e-12) & (r <= centres[ci] + half + 1e-12)]
            best = (c, th, float(np.median(inside)))
    return best


def extract_lines(boxes: Sequence[BBox], params: HoughParams = HoughParams()) -> list[TextLine]:
    """Group boxes into text lines (unordered; see :func:`reading_order`)."""
    if not boxes:
        raise ValueError("extract_lines needs at least one box")
    pts = _centres(boxes)
    h_med = float(np.median([b.h for b in boxes]))
    width = params.rho_step * h_med
    tol = params.proximity_factor * h_med
    thetas = params.thetas()
    unassigned = np.ones(len(boxes), bool)
    lines: list[TextLine] = []

    while unassigned.sum() >= params.min_boxes_per_line:
        idx = np.flatnonzero(unassigned)
        count, theta, rho = _best_cell(pts, idx, thetas, width)
        if count < params.min_boxes_per_line:
            break
        dist = np.abs(rho_of(pts[idx], theta) - rho)
        members = idx[dist <= tol]
        if len(members) < params.min_boxes_per_line:
            break
        lines.append(_make_line(pts, members, rho, theta))
        unassigned[members] = False

    # orphans join the nearest validated line when close enough, else stand alone
    n_validated = len(lines)
    for i in np.flatnonzero(unassigned):
        best_j, best_d = -1, math.inf
        for j, line in enumerate(lines[:n_validated]):
            d = abs(float(rho_of(pts[i:i + 1], line.theta)[0]) - line.rho)
            if d < best_d:
                best_j, best_d = j, d
        if best_j >= 0 and best_d <= 2 * tol:
            line = lines[best_j]
            lines[best_j] = _make_line(pts, list(line.member_indices) + [int(i)], line.rho, line.theta)
        else:
            lines.append(_make_line(pts, [int(i)], float(pts[i, 1]), 0.0))
    return lines


def reading_order(lines: Sequence[TextLine], boxes: Sequence[BBox] | None = None) -> list[TextLine]:
    """Lines top to bottom, members left to right along each line."""
    out = []
    for line in lines:
        if boxes is not None:
            out.append(_make_line(_centres(boxes), line.member_indices, line.rho, line.theta))
        elif line.along and len(line.along) == len(line.member_indices):
            order = sorted(range(len(line.along)), key=lambda k: line.along[k])
            out.append(replace(
                line,
                member_indices=tuple(line.member_indices[k] for k in order),
                along=tuple(line.along[k] for k in order),
            ))
        else:
            out.append(line)
    return sorted(out, key=lambda l: l.mean_y)


def transcribe(detections: Sequence, params: HoughParams = HoughParams()) -> Transcription:
    """Diplomatic transcription from labelled detections.

    Detections labelled NON_CHARACTER are dropped before line extraction.
    """
    kept = [d for d in detections if d.scores.label != NON_CHARACTER]
    if not kept:
        return Transcription(())
    boxes = [d.bbox for d in kept]
    lines = reading_order(extract_lines(boxes, params))
    return Transcription(tuple(tuple(kept[i].scores.label for i in line.member_indices) for line in lines))


def brute_force_lines(boxes: Sequence[BBox], params: HoughParams = HoughParams()) -> list[list[int]]:
    """Reference grouping for small inputs.

    Candidate directions are the theta grid plus the direction of every pair
    of centres inside the theta range; each candidate line is anchored on
    every unassigned centre. The candidate validating the most unassigned
    boxes wins (ties: smallest |theta|). Same orphan rule as extract_lines.
    """
    pts = _centres(boxes)
    h_med = float(np.median([b.h for b in boxes]))
    tol = params.proximity_factor * h_med
    limit = math.radians(params.theta_range_deg) + 1e-9
    unassigned = set(range(len(boxes)))
    groups: list[tuple[list[int], float, float]] = []
    while len(unassigned) >= params.min_boxes_per_line:
        best = None
        cand = sorted(unassigned)
        directions = [float(t) for t in params.thetas()]
        for a in cand:
            for b in cand:
                if b <= a:
                    continue
                dx, dy = pts[b] - pts[a]
                th = math.atan2(dy, dx)
                if th > math.pi / 2:
                    th -= math.pi
                elif th < -math.pi / 2:
                    th += math.pi
                if abs(th) <= limit:
                    directions.append(th)
        for th in directions:
            rhos = rho_of(pts[cand], th)
            for r in rhos:
                members = [i for i, ri in zip(cand, rhos) if abs(float(ri) - float(r)) <= tol]
                key = (len(members), -abs(th))
                if best is None or key > best[0]:
                    best = (key, members, float(r), th)
        if best is None or len(best[1]) < params.min_boxes_per_line:
            break
        groups.append((best[1], best[2], best[3]))
        unassigned -= set(best[1])
    out = [list(g) for g, _, _ in groups]
    for i in sorted(unassigned):
        dists = [abs(float(rho_of(pts[i:i + 1], th)[0]) - r) for _, r, th in groups]
        if dists and min(dists) <= 2 * tol:
            out[int(np.argmin(dists))].append(i)
        else:
            out.append([i])
    return out
