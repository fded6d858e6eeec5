"""Region proposal and grasp decoding heads.

Proposals are axis-aligned boxes regressed from tiled anchors; the ROI head
classifies each proposal into 19 classes (background plus 18 orientation
bins at 10-degree steps) and regresses a class-agnostic box. Sketch
conditioning enters through target assignment: only grasps belonging to the
queried category count as positives, everything else is background.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import OrientedRect, normalize_angle, rect_corners, rotated_nms

ORIENTATION_BINS = 18
BIN_STEP_DEGREES = 10.0
NUM_CLASSES = ORIENTATION_BINS + 1  # class 0 = not a grasp of the queried object

DEFAULT_ANCHOR_SCALES = (16.0, 32.0, 64.0)
DEFAULT_ANCHOR_RATIOS = (0.5, 1.0, 2.0)


def theta_to_label(theta: float) -> int:
    """Nearest orientation bin in {10, 20, ..., 180}; 0 wraps to 180."""
    t = normalize_angle(float(theta))
    label = int(np.floor(t / BIN_STEP_DEGREES + 0.5))
    return ORIENTATION_BINS if label == 0 else label


def label_to_theta(label: int) -> float:
    if not 1 <= label <= ORIENTATION_BINS:
        raise ValueError(f"orientation label must be in 1..{ORIENTATION_BINS}, got {label}")
    return BIN_STEP_DEGREES * label


@dataclass(frozen=True)
class AnchorSet:
    boxes: np.ndarray  # (n, 4) center-form (x, y, w, h), image pixels
    feature_hw: tuple[int, int]
    stride: int
    per_cell: int


def gen_anchors(
    feature_h: int,
    feature_w: int,
    stride: int,
    scales=DEFAULT_ANCHOR_SCALES,
    ratios=DEFAULT_ANCHOR_RATIOS,
) -> AnchorSet:
    """Tile scale/ratio anchor boxes over feature cells (ratio = height/width)."""
    if feature_h <= 0 or feature_w <= 0:
        raise ValueError(f"feature dims must be positive, got {feature_h}x{feature_w}")
    shapes = []
    for s in scales:
        for r in ratios:
            shapes.append((s / np.sqrt(r), s * np.sqrt(r)))
    shapes = np.array(shapes, dtype=np.float32)  # (a, 2) w, h
    cy, cx = np.meshgrid(
        stride / 2.0 + stride * np.arange(feature_h),
        stride / 2.0 + stride * np.arange(feature_w),
        indexing="ij",
    )
    centers = np.stack([cx.ravel(), cy.ravel()], axis=1).astype(np.float32)  # cell-major
    a = len(shapes)
    boxes = np.empty((len(centers) * a, 4), dtype=np.float32)
    boxes[:, :2] = np.repeat(centers, a, axis=0)
    boxes[:, 2:] = np.tile(shapes, (len(centers), 1))
    return AnchorSet(boxes=boxes, feature_hw=(feature_h, feature_w), stride=stride, per_cell=a)


def hull_box(rect: OrientedRect) -> np.ndarray:
    """Axis-aligned bounding box of a rotated rect, center-form."""
    corners = rect_corners(rect)
    lo = corners.min(axis=0)
    hi = corners.max(axis=0)
    return np.array([(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, hi[0] - lo[0], hi[1] - lo[1]], dtype=np.float32)


def _to_corners(boxes: np.ndarray) -> np.ndarray:
    half = boxes[:, 2:] / 2
    return np.concatenate([boxes[:, :2] - half, boxes[:, :2] + half], axis=1)


def aligned_iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of center-form axis-aligned boxes: (n, 4) x (m, 4) -> (n, m)."""
    ca, cb = _to_corners(a), _to_corners(b)
    x0 = np.maximum(ca[:, None, 0], cb[None, :, 0])
    y0 = np.maximum(ca[:, None, 1], cb[None, :, 1])
    x1 = np.minimum(ca[:, None, 2], cb[None, :, 2])
    y1 = np.minimum(ca[:, None, 3], cb[None, :, 3])
    inter = np.clip(x1 - x0, 0, None) * np.clip(y1 - y0, 0, None)
    area_a = a[:, 2] * a[:, 3]
    area_b = b[:, 2] * b[:, 3]
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.maximum(union, 1e-12), 0.0)


def encode_deltas(anchors: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Box regression targets: offsets scaled by anchor size, log size ratios."""
    t = np.empty_like(targets, dtype=np.float32)
    t[:, 0] = (targets[:, 0] - anchors[:, 0]) / anchors[:, 2]
    t[:, 1] = (targets[:, 1] - anchors[:, 1]) / anchors[:, 3]
    t[:, 2] = np.log(targets[:, 2] / anchors[:, 2])
    t[:, 3] = np.log(targets[:, 3] / anchors[:, 3])
    return t


def decode_deltas(anchors: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    out = np.empty_like(deltas, dtype=np.float32)
    out[:, 0] = anchors[:, 0] + deltas[:, 0] * anchors[:, 2]
    out[:, 1] = anchors[:, 1] + deltas[:, 1] * anchors[:, 3]
    out[:, 2] = anchors[:, 2] * np.exp(deltas[:, 2])
    out[:, 3] = anchors[:, 3] * np.exp(deltas[:, 3])
    return out


POSITIVE, NEGATIVE, IGNORED = 1, 0, -1


@dataclass
class RpnTargets:
    labels: np.ndarray  # (n,) int8: 1 positive, 0 negative, -1 ignored
    deltas: np.ndarray  # (n, 4) float32, valid where positive
    matched: np.ndarray  # (n,) int32 grasp index, -1 where not positive


def assign_rpn_targets(
    anchors: AnchorSet,
    queried_grasps: list[OrientedRect],
    pos_iou: float = 0.7,
    neg_iou: float = 0.3,
    hull_regression: bool = False,
) -> RpnTargets:
    """Label anchors against the queried object's grasps.

    Matching uses the axis-aligned hull of each rotated grasp. Regression
    targets default to the grasp's unrotated (x, y, w, h); set
    `hull_regression` to regress the hull instead.
    """
    n = len(anchors.boxes)
    labels = np.full(n, NEGATIVE, dtype=np.int8)
    deltas = np.zeros((n, 4), dtype=np.float32)
    matched = np.full(n, -1, dtype=np.int32)
    if not queried_grasps:
        return RpnTargets(labels, deltas, matched)

    hulls = np.stack([hull_box(g) for g in queried_grasps])
    iou = aligned_iou_matrix(anchors.boxes, hulls)  # n x m
    best = iou.max(axis=1)
    best_idx = iou.argmax(axis=1)

    labels[best < neg_iou] = NEGATIVE
    labels[(best >= neg_iou) & (best < pos_iou)] = IGNORED
    labels[best >= pos_iou] = POSITIVE
    # every grasp claims its best-overlapping anchor(s), ties included
    per_grasp_best = iou.max(axis=0)
    for j in range(len(queried_grasps)):
        if per_grasp_best[j] > 0:
            claim = np.flatnonzero(iou[:, j] == per_grasp_best[j])
            labels[claim] = POSITIVE
            best_idx[claim] = j

    pos = np.flatnonzero(labels == POSITIVE)
    if len(pos):
        if hull_regression:
            target_boxes = hulls[best_idx[pos]]
        else:
            target_boxes = np.array(
                [[queried_grasps[j].x, queried_grasps[j].y, queried_grasps[j].w, queried_grasps[j].h] for j in best_idx[pos]],
                dtype=np.float32,
            )
        deltas[pos] = encode_deltas(anchors.boxes[pos], target_boxes)
        matched[pos] = best_idx[pos]
    return RpnTargets(labels, deltas, matched)


def sample_targets(
    labels: np.ndarray,
    batch_size: int,
    pos_fraction: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Pick a mini-batch of indices: up to pos_fraction positives, rest negatives."""
    pos = np.flatnonzero(labels == POSITIVE)
    neg = np.flatnonzero(labels == NEGATIVE)
    if len(pos) + len(neg) == 0:
        raise ValueError("empty sample: no positive or negative candidates")
    n_pos = min(len(pos), int(round(batch_size * pos_fraction)))
    if n_pos < len(pos):
        pos = rng.choice(pos, size=n_pos, replace=False)
    n_neg = min(len(neg), batch_size - n_pos)
    if n_neg < len(neg):
        neg = rng.choice(neg, size=n_neg, replace=False)
    return np.concatenate([pos, neg])


def rpn_loss(
    score_logits: Tensor,
    pred_deltas: Tensor,
    labels: np.ndarray,
    target_deltas: np.ndarray,
    n_cls: int = 256,
    n_reg: int = 256,
) -> tuple[Tensor, dict[str, float]]:
    """Binary proposal loss plus positive-masked box regression (per-batch sums
    normalized by the configured sample sizes)."""
    if labels.size == 0:
        raise ValueError("empty sample: rpn_loss needs at least one anchor")
    cls = ad.scale(ad.binary_cross_entropy(score_logits, labels.astype(np.float32)), 1.0 / n_cls)
    pos = np.flatnonzero(labels == POSITIVE)
    if len(pos):
        reg_sum = ad.smooth_l1(ad.gather(pred_deltas, pos), target_deltas[pos])
        reg = ad.scale(reg_sum, 1.0 / n_reg)
        total = ad.add(cls, reg)
        reg_val = reg.item()
    else:
        total = cls
        reg_val = 0.0
    return total, {"cls": cls.item(), "reg": reg_val}


@dataclass
class ProposalBatch:
    boxes: np.ndarray  # (m, 4) center-form, clipped to the image
    scores: np.ndarray  # (m,) descending
    anchor_indices: np.ndarray  # (m,) int32, -1 for injected boxes


def _aligned_nms(corners: np.ndarray, scores: np.ndarray, thresh: float) -> np.ndarray:
    order = np.argsort(-scores, kind="stable")
    keep = []
    suppressed = np.zeros(len(corners), dtype=bool)
    areas = (corners[:, 2] - corners[:, 0]) * (corners[:, 3] - corners[:, 1])
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        x0 = np.maximum(corners[i, 0], corners[:, 0])
        y0 = np.maximum(corners[i, 1], corners[:, 1])
        x1 = np.minimum(corners[i, 2], corners[:, 2])
        y1 = np.minimum(corners[i, 3], corners[:, 3])
        inter = np.clip(x1 - x0, 0, None) * np.clip(y1 - y0, 0, None)
        iou = inter / np.maximum(areas[i] + areas - inter, 1e-12)
        suppressed |= iou > thresh
    return np.array(keep, dtype=np.int64)


def select_proposals(
    anchors: AnchorSet,
    score_logits: np.ndarray,
    deltas: np.ndarray,
    image_size: tuple[int, int],
    k: int = 300,
    nms_thresh: float = 0.7,
    pre_nms: int = 2000,
    min_size: float = 1.0,
) -> ProposalBatch:
    """Decode, clip, drop sub-pixel boxes, NMS, keep the top k by score."""
    scores = 1.0 / (1.0 + np.exp(-np.asarray(score_logits, dtype=np.float64)))
    order = np.argsort(-scores, kind="stable")[:pre_nms]
    boxes = decode_deltas(anchors.boxes[order], np.asarray(deltas, dtype=np.float32)[order])
    w, h = image_size
    corners = _to_corners(boxes)
    corners[:, 0::2] = np.clip(corners[:, 0::2], 0, w)
    corners[:, 1::2] = np.clip(corners[:, 1::2], 0, h)
    widths = corners[:, 2] - corners[:, 0]
    heights = corners[:, 3] - corners[:, 1]
    valid = (widths >= min_size) & (heights >= min_size)
    corners, order = corners[valid], order[valid]
    kept = _aligned_nms(corners, scores[order], nms_thresh)[:k]
    corners = corners[kept]
    final = np.empty((len(kept), 4), dtype=np.float32)
    final[:, 0] = (corners[:, 0] + corners[:, 2]) / 2
    final[:, 1] = (corners[:, 1] + corners[:, 3]) / 2
    final[:, 2] = corners[:, 2] - corners[:, 0]
    final[:, 3] = corners[:, 3] - corners[:, 1]
    sel = order[kept]
    return ProposalBatch(boxes=final, scores=scores[sel].astype(np.float32), anchor_indices=sel.astype(np.int32))


def roi_pool(fmap: Tensor, boxes: np.ndarray, stride: int, out_size: int = 7) -> Tensor:
    """Bilinear crop-resize of center-form pixel boxes on a feature map.

    The pixel box is converted to cell-center coordinates and inset by half
    a cell per side, so a box spanning exactly one feature cell samples that
    cell's center everywhere and a whole-image box spans cell centers
    0..W-1.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if np.any(boxes[:, 2] <= 0) or np.any(boxes[:, 3] <= 0):
        raise ValueError("zero-area box passed to roi_pool")
    corners = _to_corners(boxes)
    feat = corners / stride
    feat[:, 2:] -= 1.0  # right/bottom edges to cell centers
    return ad.bilinear_crop(fmap, feat, out_size)


@dataclass
class RoiTargets:
    classes: np.ndarray  # (m,) int32 in 0..18
    deltas: np.ndarray  # (m, 4) float32, valid where class != 0
    matched: np.ndarray  # (m,) int32 grasp index, -1 for background


def assign_roi_targets(
    proposals: np.ndarray,
    grasps: list[OrientedRect],
    owner_categories: list[str],
    queried_category: str,
    pos_iou: float = 0.5,
) -> RoiTargets:
    """Orientation-class and box targets for proposals, conditioned on the query.

    A proposal only becomes positive through a grasp owned by the queried
    category; overlap with other objects' grasps still yields class 0.
    """
    proposals = np.asarray(proposals, dtype=np.float32).reshape(-1, 4)
    m = len(proposals)
    classes = np.zeros(m, dtype=np.int32)
    deltas = np.zeros((m, 4), dtype=np.float32)
    matched = np.full(m, -1, dtype=np.int32)
    queried = [i for i, cat in enumerate(owner_categories) if cat == queried_category]
    if not queried or m == 0:
        return RoiTargets(classes, deltas, matched)
    hulls = np.stack([hull_box(grasps[i]) for i in queried])
    iou = aligned_iou_matrix(proposals, hulls)
    best = iou.max(axis=1)
    best_idx = iou.argmax(axis=1)
    pos = np.flatnonzero(best >= pos_iou)
    for p in pos:
        g = grasps[queried[best_idx[p]]]
        classes[p] = theta_to_label(g.theta)
        deltas[p] = encode_deltas(proposals[p : p + 1], np.array([[g.x, g.y, g.w, g.h]], dtype=np.float32))[0]
        matched[p] = queried[best_idx[p]]
    return RoiTargets(classes, deltas, matched)


def sample_roi_targets(
    targets: RoiTargets,
    batch_size: int = 512,
    pos_fraction: float = 0.25,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    rng = rng or np.random.default_rng()
    labels = np.where(targets.classes > 0, POSITIVE, NEGATIVE).astype(np.int8)
    return sample_targets(labels, batch_size, pos_fraction, rng)


def roi_loss(
    class_logits: Tensor,
    pred_deltas: Tensor,
    classes: np.ndarray,
    target_deltas: np.ndarray,
    n_cls: int = 512,
    n_reg: int = 512,
) -> tuple[Tensor, dict[str, float]]:
    """19-way orientation cross-entropy plus positive-only box regression."""
    if classes.size == 0:
        raise ValueError("empty sample: roi_loss needs at least one proposal")
    cls = ad.scale(ad.softmax_cross_entropy(class_logits, classes), 1.0 / n_cls)
    pos = np.flatnonzero(classes > 0)
    if len(pos):
        reg = ad.scale(ad.smooth_l1(ad.gather(pred_deltas, pos), target_deltas[pos]), 1.0 / n_reg)
        total = ad.add(cls, reg)
        reg_val = reg.item()
    else:
        total = cls
        reg_val = 0.0
    return total, {"cls": cls.item(), "reg": reg_val}


def joint_loss(l_gp: Tensor, l_gd: Tensor) -> Tensor:
    """Total training loss: proposal loss plus grasp-decoding loss."""
    return ad.add(l_gp, l_gd)


@dataclass(frozen=True)
class GraspPrediction:
    rect: OrientedRect
    label: int
    score: float


def decode_grasps(
    class_logits: np.ndarray,
    deltas: np.ndarray,
    proposals: np.ndarray,
    k: int,
    nms_thresh: float = 0.3,
    score_thresh: float = 0.0,
) -> list[GraspPrediction]:
    """Ranked grasp list: drop background, decode boxes, rotated NMS, top-k."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    logits = np.asarray(class_logits, dtype=np.float64)
    if logits.size == 0:
        return []
    z = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=1, keepdims=True)
    labels = probs.argmax(axis=1)
    fg = np.flatnonzero(labels > 0)
    if fg.size == 0:
        return []
    scores = probs[fg, labels[fg]]
    ok = scores >= score_thresh
    fg, scores = fg[ok], scores[ok]
    if fg.size == 0:
        return []
    boxes = decode_deltas(np.asarray(proposals, dtype=np.float32)[fg], np.asarray(deltas, dtype=np.float32)[fg])
    rects = [
        OrientedRect(x=float(b[0]), y=float(b[1]), w=float(b[2]), h=float(b[3]), theta=label_to_theta(int(l)))
        for b, l in zip(boxes, labels[fg])
    ]
    keep = rotated_nms(rects, scores, nms_thresh)[:k]
    return [GraspPrediction(rect=rects[i], label=int(labels[fg[i]]), score=float(scores[i])) for i in keep]


# ---------------------------------------------------------------------------
# learned heads


@dataclass
class RpnHeadParams:
    conv_w: Tensor  # 3x3, D -> mid
    conv_b: Tensor
    score_w: Tensor  # 1x1, mid -> per-cell anchors
    score_b: Tensor
    delta_w: Tensor  # 1x1, mid -> 4 * per-cell anchors
    delta_b: Tensor
    per_cell: int

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, per_cell: int, mid: int = 256) -> "RpnHeadParams":
        def he(fan_in, shape):
            return Tensor((rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32), requires_grad=True)

        return cls(
            conv_w=he(9 * in_dim, (3, 3, in_dim, mid)),
            conv_b=Tensor(np.zeros(mid, dtype=np.float32), requires_grad=True),
            score_w=he(mid, (1, 1, mid, per_cell)),
            score_b=Tensor(np.zeros(per_cell, dtype=np.float32), requires_grad=True),
            delta_w=he(mid, (1, 1, mid, 4 * per_cell)),
            delta_b=Tensor(np.zeros(4 * per_cell, dtype=np.float32), requires_grad=True),
            per_cell=per_cell,
        )

    def named(self, prefix: str = "rpn") -> dict[str, Tensor]:
        return {
            f"{prefix}.conv.w": self.conv_w,
            f"{prefix}.conv.b": self.conv_b,
            f"{prefix}.score.w": self.score_w,
            f"{prefix}.score.b": self.score_b,
            f"{prefix}.delta.w": self.delta_w,
            f"{prefix}.delta.b": self.delta_b,
        }


def rpn_forward(fused: Tensor, params: RpnHeadParams) -> tuple[Tensor, Tensor]:
    """Score logits (n,) and deltas (n, 4) in anchor order (cell-major)."""
    h, w = fused.shape[0], fused.shape[1]
    mid = ad.relu(ad.conv2d(fused, params.conv_w, params.conv_b, stride=1, padding=1))
    scores = ad.conv2d(mid, params.score_w, params.score_b)
    deltas = ad.conv2d(mid, params.delta_w, params.delta_b)
    a = params.per_cell
    return ad.reshape(scores, (h * w * a,)), ad.reshape(deltas, (h * w * a, 4))


@dataclass
class RoiHeadParams:
    """Two-layer MLP over pooled features plus 4 normalized box descriptors
    (center and log size relative to the image); the descriptors keep
    absolute scale and aspect visible after the pool's resampling."""

    fc1_w: Tensor
    fc1_b: Tensor
    cls_w: Tensor
    cls_b: Tensor
    reg_w: Tensor
    reg_b: Tensor
    pool_size: int

    @classmethod
    def init(cls, rng: np.random.Generator, feat_dim: int, pool_size: int = 7, hidden: int = 256) -> "RoiHeadParams":
        in_dim = pool_size * pool_size * feat_dim + 4

        def he(fan_in, shape):
            return Tensor((rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32), requires_grad=True)

        def glorot(fan_in, fan_out, shape):
            return Tensor((rng.standard_normal(shape) * np.sqrt(2.0 / (fan_in + fan_out))).astype(np.float32), requires_grad=True)

        return cls(
            fc1_w=he(in_dim, (in_dim, hidden)),
            fc1_b=Tensor(np.zeros(hidden, dtype=np.float32), requires_grad=True),
            cls_w=glorot(hidden, NUM_CLASSES, (hidden, NUM_CLASSES)),
            cls_b=Tensor(np.zeros(NUM_CLASSES, dtype=np.float32), requires_grad=True),
            reg_w=glorot(hidden, 4, (hidden, 4)),
            reg_b=Tensor(np.zeros(4, dtype=np.float32), requires_grad=True),
            pool_size=pool_size,
        )

    def named(self, prefix: str = "roi") -> dict[str, Tensor]:
        return {
            f"{prefix}.fc1.w": self.fc1_w,
            f"{prefix}.fc1.b": self.fc1_b,
            f"{prefix}.cls.w": self.cls_w,
            f"{prefix}.cls.b": self.cls_b,
            f"{prefix}.reg.w": self.reg_w,
            f"{prefix}.reg.b": self.reg_b,
        }


def box_descriptors(boxes: np.ndarray, image_size: tuple[int, int]) -> np.ndarray:
    w, h = image_size
    boxes = np.asarray(boxes, dtype=np.float32).reshape(-1, 4)
    out = np.empty_like(boxes)
    out[:, 0] = boxes[:, 0] / w
    out[:, 1] = boxes[:, 1] / h
    out[:, 2] = np.log(np.maximum(boxes[:, 2], 1e-3) / w)
    out[:, 3] = np.log(np.maximum(boxes[:, 3], 1e-3) / h)
    return out


def roi_forward(
    fused: Tensor,
    boxes: np.ndarray,
    params: RoiHeadParams,
    stride: int,
    image_size: tuple[int, int],
) -> tuple[Tensor, Tensor]:
    """Class logits (m, 19) and deltas (m, 4) for center-form pixel boxes."""
    pooled = roi_pool(fused, boxes, stride, params.pool_size)
    m = pooled.shape[0]
    flat = ad.reshape(pooled, (m, params.pool_size * params.pool_size * fused.shape[2]))
    desc = Tensor(box_descriptors(boxes, image_size).astype(np.float32))
    hidden = ad.relu(ad.linear(ad.concat([flat, desc], axis=1), params.fc1_w, params.fc1_b))
    return ad.linear(hidden, params.cls_w, params.cls_b), ad.linear(hidden, params.reg_w, params.reg_b)
