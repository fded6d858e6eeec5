"""Freehand drawing ingestion and the directed stroke-graph representation.

Drawings arrive as QuickDraw-style NDJSON lines: one JSON object per line
with a "drawing" array of [xs, ys] stroke pairs. The pipeline to a graph is
simplify -> resample to a fixed vertex budget -> normalize to [-1, 1]^2,
then connect consecutive points of each stroke with edges in both
directions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

DEFAULT_NUM_POINTS = 128
RDP_EPSILON = 0.01  # in normalized units, applied after a provisional rescale


class ParseError(ValueError):
    """Raised for malformed drawing input; message names the offending field."""


@dataclass
class RawDrawing:
    """Multi-stroke drawing; each stroke is an (n, 2) float array of points."""

    strokes: list[np.ndarray]
    category: str | None = None
    dropped_strokes: int = 0  # single-point strokes removed at parse

    def validate(self) -> None:
        if not self.strokes:
            raise ParseError("empty drawing")
        for i, s in enumerate(self.strokes):
            if s.ndim != 2 or s.shape[1] != 2 or len(s) < 2:
                raise ParseError(f"stroke {i}: expected >= 2 points of 2 coords, got shape {s.shape}")
            if not np.all(np.isfinite(s)):
                raise ParseError(f"stroke {i}: non-finite coordinates")

    def point_count(self) -> int:
        return sum(len(s) for s in self.strokes)


@dataclass
class SketchGraph:
    """Fixed-size directed graph over simplified stroke points.

    vertices: (n, 2) float32 in [-1, 1]^2; stroke_id: (n,) int32;
    edges: (e, 2) int32 pairs (src, dst), present in both directions for
    every consecutive same-stroke point pair.
    """

    vertices: np.ndarray
    stroke_id: np.ndarray
    edges: np.ndarray
    category: str | None = None

    def validate(self) -> None:
        n = len(self.vertices)
        if self.vertices.shape != (n, 2):
            raise ValueError(f"vertices must be (n, 2), got {self.vertices.shape}")
        if self.stroke_id.shape != (n,):
            raise ValueError(f"stroke_id must be (n,), got {self.stroke_id.shape}")
        if np.abs(self.vertices).max(initial=0.0) > 1.0 + 1e-6:
            raise ValueError("vertices outside [-1, 1]")
        if len(self.edges):
            if self.edges.min() < 0 or self.edges.max() >= n:
                raise ValueError("edge index out of range")
            fwd = {(int(i), int(j)) for i, j in self.edges}
            if any((j, i) not in fwd for i, j in fwd):
                raise ValueError("edges are not symmetric")


def parse_ndjson(line: str) -> RawDrawing:
    """Parse one QuickDraw NDJSON line into a RawDrawing.

    Schema: {"word": str, "drawing": [[[x...], [y...]], ...]}. Strokes with
    fewer than two points are dropped and counted.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object")
    drawing = obj.get("drawing")
    if drawing is None:
        raise ParseError('missing "drawing" field')
    if not isinstance(drawing, list):
        raise ParseError('"drawing" must be an array of strokes')
    if len(drawing) == 0:
        raise ParseError("empty drawing")

    strokes: list[np.ndarray] = []
    dropped = 0
    for i, stroke in enumerate(drawing):
        if not (isinstance(stroke, (list, tuple)) and len(stroke) == 2):
            raise ParseError(f'"drawing" stroke {i}: expected [xs, ys] pair')
        xs, ys = stroke
        if len(xs) != len(ys):
            raise ParseError(f'"drawing" stroke {i}: xs has {len(xs)} values but ys has {len(ys)}')
        pts = np.column_stack([np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)])
        if not np.all(np.isfinite(pts)):
            raise ParseError(f'"drawing" stroke {i}: non-finite coordinates')
        if len(pts) < 2:
            dropped += 1
            continue
        strokes.append(pts)
    if not strokes:
        raise ParseError("empty drawing")

    category = obj.get("word")
    if category is not None and not isinstance(category, str):
        raise ParseError('"word" must be a string')
    return RawDrawing(strokes=strokes, category=category, dropped_strokes=dropped)


def _point_segment_dist(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Perpendicular distances from points to segment a-b (falls back to |p - a| when a == b)."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(pts - a, axis=1)
    t = np.clip((pts - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(pts - proj, axis=1)


def simplify_rdp(polyline: np.ndarray, epsilon: float) -> np.ndarray:
    """Ramer-Douglas-Peucker simplification keeping both endpoints.

    Iterative (explicit stack) so very long strokes cannot overflow
    recursion limits.
    """
    pts = np.asarray(polyline, dtype=np.float64)
    if len(pts) < 2:
        raise ValueError("polyline needs at least 2 points")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    n = len(pts)
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        inner = pts[lo + 1 : hi]
        dists = _point_segment_dist(inner, pts[lo], pts[hi])
        imax = int(np.argmax(dists))
        if dists[imax] > epsilon:
            split = lo + 1 + imax
            keep[split] = True
            stack.append((lo, split))
            stack.append((split, hi))
    return pts[keep]


def _arc_lengths(stroke: np.ndarray) -> np.ndarray:
    diffs = np.diff(stroke, axis=0)
    return np.sqrt((diffs**2).sum(axis=1))


def resample_to(drawing: RawDrawing, n: int) -> RawDrawing:
    """Resample the drawing to exactly n points, allocated to strokes
    proportionally to arc length with a minimum of two per stroke."""
    drawing.validate()
    strokes = drawing.strokes
    if n < 2 * len(strokes):
        raise ValueError(f"n={n} is below the minimum of 2 points for each of {len(strokes)} strokes")

    lengths = np.array([_arc_lengths(s).sum() for s in strokes])
    total = lengths.sum()
    if total <= 0:
        quotas = np.full(len(strokes), n / len(strokes))
    else:
        quotas = n * lengths / total

    counts = np.maximum(np.floor(quotas).astype(int), 2)
    # largest-remainder style adjustment to make counts sum exactly to n
    while counts.sum() > n:
        over = np.where(counts > 2)[0]
        worst = over[np.argmin((quotas - counts)[over])]
        counts[worst] -= 1
    remainders = quotas - counts
    while counts.sum() < n:
        best = int(np.argmax(remainders))
        counts[best] += 1
        remainders[best] -= 1.0

    out = []
    for stroke, c in zip(strokes, counts):
        seg = _arc_lengths(stroke)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        if cum[-1] <= 0:
            out.append(np.repeat(stroke[:1], c, axis=0))
            continue
        targets = np.linspace(0.0, cum[-1], c)
        xs = np.interp(targets, cum, stroke[:, 0])
        ys = np.interp(targets, cum, stroke[:, 1])
        out.append(np.column_stack([xs, ys]))
    return RawDrawing(strokes=out, category=drawing.category, dropped_strokes=drawing.dropped_strokes)


def normalize(drawing: RawDrawing) -> RawDrawing:
    """Center on the tight bounding box and scale the longest axis to [-1, 1].

    Aspect ratio is preserved; zero-extent drawings collapse to the origin.
    """
    drawing.validate()
    allpts = np.vstack(drawing.strokes)
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    center = (lo + hi) / 2.0
    extent = float((hi - lo).max())
    out = []
    for s in drawing.strokes:
        if extent <= 0:
            out.append(np.zeros_like(s))
        else:
            out.append(np.clip((s - center) * (2.0 / extent), -1.0, 1.0))
    return RawDrawing(strokes=out, category=drawing.category, dropped_strokes=drawing.dropped_strokes)


def build_graph(drawing: RawDrawing, num_points: int = DEFAULT_NUM_POINTS) -> SketchGraph:
    """Full pipeline: simplify -> resample to `num_points` -> normalize -> graph."""
    provisional = normalize(drawing)
    simplified = RawDrawing(
        strokes=[simplify_rdp(s, RDP_EPSILON) for s in provisional.strokes],
        category=drawing.category,
        dropped_strokes=drawing.dropped_strokes,
    )
    resampled = resample_to(simplified, num_points)
    final = normalize(resampled)

    vertices = np.vstack(final.strokes).astype(np.float32)
    stroke_id = np.concatenate(
        [np.full(len(s), i, dtype=np.int32) for i, s in enumerate(final.strokes)]
    )
    edges = []
    offset = 0
    for s in final.strokes:
        for k in range(len(s) - 1):
            edges.append((offset + k, offset + k + 1))
            edges.append((offset + k + 1, offset + k))
        offset += len(s)
    edge_arr = np.array(edges, dtype=np.int32) if edges else np.empty((0, 2), dtype=np.int32)
    graph = SketchGraph(vertices=vertices, stroke_id=stroke_id, edges=edge_arr, category=drawing.category)
    graph.validate()
    return graph


def rasterize(drawing: RawDrawing, size: int) -> np.ndarray:
    """Rasterize a drawing into a (size, size, 1) float32 image in [0, 1].

    Used by the image-based sketch encoder baseline. Strokes are drawn by
    dense sampling along each segment; no anti-aliasing.
    """
    normed = normalize(drawing)
    img = np.zeros((size, size), dtype=np.float32)
    scale = (size - 1) / 2.0
    for stroke in normed.strokes:
        px = (stroke[:, 0] + 1.0) * scale
        py = (stroke[:, 1] + 1.0) * scale
        for k in range(len(stroke) - 1):
            seg_len = max(abs(px[k + 1] - px[k]), abs(py[k + 1] - py[k]))
            steps = max(int(np.ceil(seg_len * 2)), 1) + 1
            ts = np.linspace(0.0, 1.0, steps)
            xs = np.clip(np.round(px[k] + ts * (px[k + 1] - px[k])).astype(int), 0, size - 1)
            ys = np.clip(np.round(py[k] + ts * (py[k + 1] - py[k])).astype(int), 0, size - 1)
            img[ys, xs] = 1.0
    return img[:, :, None]


def drawing_to_ndjson(drawing: RawDrawing) -> str:
    """Serialize back to the QuickDraw NDJSON schema (lossy only in float formatting)."""
    doc: dict = {
        "drawing": [[list(map(float, s[:, 0])), list(map(float, s[:, 1]))] for s in drawing.strokes]
    }
    if drawing.category is not None:
        doc["word"] = drawing.category
    return json.dumps(doc)
