"""Oriented-rectangle geometry, rotated overlap metrics, and top-k retrieval scoring."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


def normalize_angle(theta: float) -> float:
    """Map an angle in degrees to the canonical (0, 180] range.

    Grasp orientations are modular with period 180; the exact value 0 wraps
    to 180 so the stored angle is always strictly positive.
    """
    t = math.fmod(float(theta), 180.0)
    if t <= 0.0:
        t += 180.0
    return t


@dataclass(frozen=True)
class OrientedRect:
    """Grasp rectangle: center (x, y), extents (w, h), orientation theta in degrees."""

    x: float
    y: float
    w: float
    h: float
    theta: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"rect extents must be positive, got w={self.w}, h={self.h}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h, self.theta)):
            raise ValueError("rect fields must be finite")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.x, self.y, self.w, self.h, self.theta)


def rect_corners(r: OrientedRect) -> np.ndarray:
    """Counter-clockwise corners (4x2) of the rectangle rotated by theta about its center."""
    rad = math.radians(r.theta)
    c, s = math.cos(rad), math.sin(rad)
    hw, hh = r.w / 2.0, r.h / 2.0
    # corner order chosen so the polygon is CCW for theta = 0
    local = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]], dtype=np.float64)
    rot = np.array([[c, -s], [s, c]], dtype=np.float64)
    return local @ rot.T + np.array([r.x, r.y], dtype=np.float64)


def _polygon_area(poly: np.ndarray) -> float:
    """Shoelace area of a simple polygon given as an (n, 2) array."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))) / 2.0


def _clip_polygon(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of `subject` against convex `clipper` (both (n, 2))."""
    # clipper orientation decides which half-plane is "inside"
    orient = 1.0 if _signed_area(clipper) >= 0 else -1.0
    output = [tuple(p) for p in subject]
    n = len(clipper)
    for i in range(n):
        if not output:
            return np.empty((0, 2))
        a = clipper[i]
        b = clipper[(i + 1) % n]
        ex, ey = b[0] - a[0], b[1] - a[1]
        input_pts = output
        output = []
        prev = input_pts[-1]
        prev_side = orient * (ex * (prev[1] - a[1]) - ey * (prev[0] - a[0]))
        for cur in input_pts:
            cur_side = orient * (ex * (cur[1] - a[1]) - ey * (cur[0] - a[0]))
            if cur_side >= 0:
                if prev_side < 0:
                    output.append(_line_intersect(prev, cur, a, b))
                output.append(cur)
            elif prev_side >= 0:
                output.append(_line_intersect(prev, cur, a, b))
            prev, prev_side = cur, cur_side
    return np.array(output, dtype=np.float64) if output else np.empty((0, 2))


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return (float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))) / 2.0


def _line_intersect(p1, p2, a, b) -> tuple[float, float]:
    """Intersection of segment p1->p2 with the infinite line through a->b."""
    dx1, dy1 = p2[0] - p1[0], p2[1] - p1[1]
    dx2, dy2 = b[0] - a[0], b[1] - a[1]
    denom = dx1 * dy2 - dy1 * dx2
    if denom == 0.0:
        return (p1[0], p1[1])
    t = ((a[0] - p1[0]) * dy2 - (a[1] - p1[1]) * dx2) / denom
    return (p1[0] + t * dx1, p1[1] + t * dy1)


def rotated_jaccard(a: OrientedRect, b: OrientedRect) -> float:
    """Intersection-over-union of two oriented rectangles via exact polygon clipping."""
    ca, cb = rect_corners(a), rect_corners(b)
    inter_poly = _clip_polygon(ca, cb)
    inter = _polygon_area(inter_poly)
    union = a.area() + b.area() - inter
    if union <= 0.0:
        return 0.0
    # clamp fp noise: intersection can exceed union by ~1e-16 for identical rects
    return min(max(inter / union, 0.0), 1.0)


def angle_error(a: float, b: float) -> float:
    """Smallest angular difference in degrees between two orientations, in [0, 90]."""
    d = math.fmod(abs(float(a) - float(b)), 180.0)
    return min(d, 180.0 - d)


def is_correct_grasp(
    pred: OrientedRect,
    gts: list[OrientedRect],
    jaccard_thresh: float = 0.25,
    angle_thresh: float = 30.0,
) -> bool:
    """A prediction is correct when some single ground-truth grasp satisfies
    both the overlap and the orientation criteria."""
    for gt in gts:
        if angle_error(pred.theta, gt.theta) < angle_thresh and rotated_jaccard(pred, gt) > jaccard_thresh:
            return True
    return False


def rotated_nms(
    rects: list[OrientedRect],
    scores: list[float] | np.ndarray,
    threshold: float,
) -> list[int]:
    """Greedy rotated non-maximum suppression.

    Returns indices of kept rects in descending score order (stable for ties).
    A rect is suppressed when its rotated IoU with an already-kept rect
    exceeds `threshold`.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if len(rects) != len(scores):
        raise ValueError(f"got {len(rects)} rects but {len(scores)} scores")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    order = np.argsort(-scores, kind="stable")
    kept: list[int] = []
    for idx in order:
        r = rects[idx]
        if all(rotated_jaccard(r, rects[k]) <= threshold for k in kept):
            kept.append(int(idx))
    return kept


@dataclass
class EvalReport:
    """Top-k precision/recall over a set of queries, with per-category breakdown."""

    ks: list[int]
    precision: dict[int, float]
    recall: dict[int, float]
    per_category: dict[str, dict[str, dict[int, float]]] = field(default_factory=dict)
    query_count: int = 0

    def to_json(self) -> str:
        doc = {
            "query_count": self.query_count,
            "ks": self.ks,
            "precision": {str(k): self.precision[k] for k in self.ks},
            "recall": {str(k): self.recall[k] for k in self.ks},
            "per_category": {
                cat: {
                    "precision": {str(k): v["precision"][k] for k in self.ks},
                    "recall": {str(k): v["recall"][k] for k in self.ks},
                }
                for cat, v in sorted(self.per_category.items())
            },
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def to_table(self) -> str:
        """Fixed-width table with recall columns then precision columns."""
        header = ["category".ljust(14)]
        header += [f"R@{k}".rjust(7) for k in self.ks]
        header += [f"P@{k}".rjust(7) for k in self.ks]
        lines = ["".join(header)]

        def row(name: str, rec: dict[int, float], prec: dict[int, float]) -> str:
            cells = [name.ljust(14)]
            cells += [f"{rec[k] * 100:7.2f}" for k in self.ks]
            cells += [f"{prec[k] * 100:7.2f}" for k in self.ks]
            return "".join(cells)

        for cat in sorted(self.per_category):
            entry = self.per_category[cat]
            lines.append(row(cat, entry["recall"], entry["precision"]))
        lines.append(row("overall", self.recall, self.precision))
        return "\n".join(lines)


def precision_recall_at_k(
    ranked_preds: list[list[OrientedRect]],
    gts: list[list[OrientedRect]],
    ks: list[int],
    categories: list[str] | None = None,
) -> EvalReport:
    """Score ranked predictions per query against that query's ground truths.

    P@k averages, over queries, the fraction of correct grasps among the
    top-k returned (denominator min(k, #returned); empty returns count 0).
    R@k is the fraction of queries with at least one correct grasp in the
    top k.
    """
    if len(ranked_preds) != len(gts):
        raise ValueError(f"got {len(ranked_preds)} prediction lists but {len(gts)} gt lists")
    n = len(ranked_preds)
    if n == 0:
        raise ValueError("zero queries")
    if categories is not None and len(categories) != n:
        raise ValueError(f"got {len(categories)} categories for {n} queries")

    per_query_p = {k: np.zeros(n) for k in ks}
    per_query_r = {k: np.zeros(n) for k in ks}
    for qi, (preds, gt) in enumerate(zip(ranked_preds, gts)):
        correct = [is_correct_grasp(p, gt) for p in preds]
        for k in ks:
            top = correct[:k]
            if top:
                per_query_p[k][qi] = sum(top) / min(k, len(top))
                per_query_r[k][qi] = 1.0 if any(top) else 0.0

    report = EvalReport(
        ks=list(ks),
        precision={k: float(per_query_p[k].mean()) for k in ks},
        recall={k: float(per_query_r[k].mean()) for k in ks},
        query_count=n,
    )
    if categories is not None:
        for cat in sorted(set(categories)):
            mask = np.array([c == cat for c in categories])
            report.per_category[cat] = {
                "precision": {k: float(per_query_p[k][mask].mean()) for k in ks},
                "recall": {k: float(per_query_r[k][mask].mean()) for k in ks},
            }
    return report
