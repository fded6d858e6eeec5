"""Full detector assembly: parameter groups, configuration, and forward passes.

A GraspModel bundles the sketch encoder (graph-based by default, with a
raster CNN baseline variant), the scene image encoder, the fusion projection,
and the two detection heads. Functions here run the complete pipeline from
(image, drawing) to ranked grasp predictions; training logic lives in the
engine module.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from PIL import Image, ImageDraw

from . import autodiff as ad
from .autodiff import Tensor
from .detection import (
    AnchorSet,
    GraspPrediction,
    RoiHeadParams,
    RpnHeadParams,
    decode_grasps,
    gen_anchors,
    roi_forward,
    rpn_forward,
    select_proposals,
)
from .encoders import (
    BASELINE_CHANNELS,
    ImageEncoderParams,
    SketchEncoderParams,
    image_encode,
    sketch_encode,
    sketch_encode_image_baseline,
)
from .fusion import FusionParams, query_features
from .sketch_graph import RawDrawing, build_graph, normalize

SKETCH_MODES = ("graph", "image")


@dataclass
class ModelConfig:
    """Architecture knobs; defaults are the small desk-scale setup."""

    image_size: int = 128
    feat_dim: int = 64
    image_channels: tuple[int, ...] = (32, 64, 128)
    sketch_mode: str = "graph"
    raster_size: int = 64  # baseline sketch raster input edge length
    num_points: int = 128  # sketch graph vertex count
    dynamic_knn: bool = False
    anchor_scales: tuple[float, ...] = (12.0, 20.0, 36.0)
    anchor_ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    pool_size: int = 7
    rpn_hidden: int = 256
    roi_hidden: int = 256

    def __post_init__(self) -> None:
        self.image_channels = tuple(self.image_channels)
        self.anchor_scales = tuple(float(s) for s in self.anchor_scales)
        self.anchor_ratios = tuple(float(r) for r in self.anchor_ratios)
        if self.sketch_mode not in SKETCH_MODES:
            raise ValueError(f"sketch_mode must be one of {SKETCH_MODES}, got {self.sketch_mode!r}")
        stride = 2 ** len(self.image_channels)
        if self.image_size % stride:
            raise ValueError(f"image_size {self.image_size} not divisible by encoder stride {stride}")
        raster_stride = 2 ** len(BASELINE_CHANNELS)
        if self.raster_size % raster_stride:
            raise ValueError(f"raster_size {self.raster_size} not divisible by baseline stride {raster_stride}")
        for name in ("feat_dim", "num_points", "pool_size", "rpn_hidden", "roi_hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def stride(self) -> int:
        return 2 ** len(self.image_channels)

    @property
    def feature_size(self) -> int:
        return self.image_size // self.stride

    @classmethod
    def paper_scale(cls) -> "ModelConfig":
        """Full-scale setup: deeper scene encoder, 1024-d descriptors."""
        return cls(
            image_size=512,
            feat_dim=1024,
            image_channels=(32, 64, 128, 256),
            raster_size=128,
            num_points=256,
            anchor_scales=(32.0, 64.0, 128.0),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        doc = dict(doc)
        for key in ("image_channels", "anchor_scales", "anchor_ratios"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


@dataclass
class GraspModel:
    config: ModelConfig
    sketch: SketchEncoderParams | ImageEncoderParams
    image: ImageEncoderParams
    fusion: FusionParams
    rpn: RpnHeadParams
    roi: RoiHeadParams

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "GraspModel":
        rng = np.random.default_rng(seed)
        if config.sketch_mode == "graph":
            sketch: SketchEncoderParams | ImageEncoderParams = SketchEncoderParams.init(
                rng, out_dim=config.feat_dim, dynamic_knn=config.dynamic_knn
            )
        else:
            sketch = ImageEncoderParams.init(
                rng, out_dim=config.feat_dim, in_channels=1, channels=BASELINE_CHANNELS
            )
        per_cell = len(config.anchor_scales) * len(config.anchor_ratios)
        return cls(
            config=config,
            sketch=sketch,
            image=ImageEncoderParams.init(rng, out_dim=config.feat_dim, channels=config.image_channels),
            fusion=FusionParams.init(rng, config.feat_dim),
            rpn=RpnHeadParams.init(rng, in_dim=config.feat_dim, per_cell=per_cell, mid=config.rpn_hidden),
            roi=RoiHeadParams.init(rng, feat_dim=config.feat_dim, pool_size=config.pool_size, hidden=config.roi_hidden),
        )

    def named(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        params.update(self.sketch.named("sketch"))
        params.update(self.image.named("image"))
        params.update(self.fusion.named("fusion"))
        params.update(self.rpn.named("rpn"))
        params.update(self.roi.named("roi"))
        return params

    def param_count(self) -> int:
        return sum(p.size for p in self.named().values())

    def sketch_param_count(self) -> int:
        return sum(p.size for p in self.sketch.named("sketch").values())

    def anchors(self) -> AnchorSet:
        fs = self.config.feature_size
        return gen_anchors(fs, fs, self.config.stride, self.config.anchor_scales, self.config.anchor_ratios)

    def config_json(self) -> str:
        return json.dumps(self.config.to_dict(), sort_keys=True)


def rasterize_drawing(drawing: RawDrawing, size: int) -> np.ndarray:
    """Render strokes as 1-pixel-wide white lines on black, (size, size, 1) float32.

    Coordinates are aspect-preserving normalized first so the raster sees the
    same framing as the graph encoder.
    """
    normalized = normalize(drawing)
    img = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(img)
    margin = 2
    span = size - 1 - 2 * margin
    for stroke in normalized.strokes:
        pts = (stroke + 1.0) / 2.0 * span + margin
        draw.line([tuple(p) for p in pts], fill=255, width=2)
    return (np.asarray(img, dtype=np.float32) / 255.0)[:, :, None]


def encode_sketch_feature(model: GraspModel, drawing: RawDrawing) -> Tensor:
    """Drawing -> (1, 1, D) query descriptor via the configured encoder."""
    if model.config.sketch_mode == "graph":
        graph = build_graph(drawing, num_points=model.config.num_points)
        return sketch_encode(graph, model.sketch)
    raster = rasterize_drawing(drawing, model.config.raster_size)
    return sketch_encode_image_baseline(Tensor(raster), model.sketch)


def forward_features(model: GraspModel, image: np.ndarray, drawing: RawDrawing) -> Tensor:
    """Sketch-conditioned fused feature map for one scene/query pair."""
    f_c = image_encode(Tensor(np.ascontiguousarray(image, dtype=np.float32)), model.image)
    f_s = encode_sketch_feature(model, drawing)
    _, fused = query_features(f_c, f_s, model.fusion)
    return fused


def infer_grasps(
    model: GraspModel,
    image: np.ndarray,
    drawing: RawDrawing,
    k: int,
    score_thresh: float = 0.0,
    proposal_k: int = 300,
    nms_thresh: float = 0.3,
) -> list[GraspPrediction]:
    """Full pipeline on one already-sized image; no gradients recorded."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    size = model.config.image_size
    if image.shape[:2] != (size, size):
        raise ValueError(f"expected a {size}x{size} image, got {image.shape[0]}x{image.shape[1]}")
    with ad.no_grad():
        fused = forward_features(model, image, drawing)
        scores, deltas = rpn_forward(fused, model.rpn)
        proposals = select_proposals(
            model.anchors(), scores.data, deltas.data, (size, size), k=proposal_k
        )
        if len(proposals.boxes) == 0:
            return []
        cls_logits, roi_deltas = roi_forward(
            fused, proposals.boxes, model.roi, model.config.stride, (size, size)
        )
    return decode_grasps(
        cls_logits.data, roi_deltas.data, proposals.boxes, k=k, nms_thresh=nms_thresh, score_thresh=score_thresh
    )
