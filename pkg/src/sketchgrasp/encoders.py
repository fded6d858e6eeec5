"""Sketch and image encoders.

The sketch side is a residual EdgeConv stack over the stroke graph: project
2-d points to 128 channels, run four EdgeConv blocks with residual adds,
concatenate the four block outputs per point, project to the embedding width
D, then max-pool over points to a 1x1xD global feature. The image side is a
small stack of stride-2 convolutions ending in a 1x1 projection to D
channels. A third encoder treats a rasterized sketch as an image and
global-max-pools it; it serves as the ablation baseline for the graph
encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .sketch_graph import SketchGraph

EDGECONV_BLOCKS = 4
BLOCK_WIDTH = 128

# channel plan for the image-baseline sketch encoder (ablation); deeper than
# the graph encoder so the parameter-count comparison keeps its direction
BASELINE_CHANNELS = (64, 128, 256)

NEG_PAD = -1e30  # sentinel for max-pool padding rows


def _he(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / (fan_in + fan_out))).astype(np.float32)


def _zeros(*shape) -> np.ndarray:
    return np.zeros(shape, dtype=np.float32)


@dataclass
class EdgeConvBlock:
    """Two-layer perceptron applied to (x_i, x_j - x_i) pairs, then max over j.

    The first layer's weight is stored split: `w_center` acts on x_i and
    `w_nbr` on (x_j - x_i), so per-edge messages cost two gathers instead of
    materializing concatenated pair features.
    """

    w_center: Tensor
    w_nbr: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, width: int = BLOCK_WIDTH) -> "EdgeConvBlock":
        return cls(
            w_center=Tensor(_he(rng, 2 * width, (width, width)), requires_grad=True),
            w_nbr=Tensor(_he(rng, 2 * width, (width, width)), requires_grad=True),
            b1=Tensor(_zeros(width), requires_grad=True),
            w2=Tensor(_he(rng, width, (width, width)), requires_grad=True),
            b2=Tensor(_zeros(width), requires_grad=True),
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w_center": self.w_center,
            f"{prefix}.w_nbr": self.w_nbr,
            f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2,
            f"{prefix}.b2": self.b2,
        }


@dataclass
class SketchEncoderParams:
    proj_w: Tensor
    proj_b: Tensor
    blocks: list[EdgeConvBlock]
    point_w: Tensor
    point_b: Tensor
    out_dim: int
    dynamic_knn: bool = False
    knn_k: int = 8

    @classmethod
    def init(cls, rng: np.random.Generator, out_dim: int, dynamic_knn: bool = False) -> "SketchEncoderParams":
        width = BLOCK_WIDTH
        concat_width = EDGECONV_BLOCKS * width
        return cls(
            proj_w=Tensor(_glorot(rng, 2, width, (2, width)), requires_grad=True),
            proj_b=Tensor(_zeros(width), requires_grad=True),
            blocks=[EdgeConvBlock.init(rng, width) for _ in range(EDGECONV_BLOCKS)],
            point_w=Tensor(_glorot(rng, concat_width, out_dim, (concat_width, out_dim)), requires_grad=True),
            point_b=Tensor(_zeros(out_dim), requires_grad=True),
            out_dim=out_dim,
            dynamic_knn=dynamic_knn,
        )

    def named(self, prefix: str = "sketch") -> dict[str, Tensor]:
        params = {f"{prefix}.proj.w": self.proj_w, f"{prefix}.proj.b": self.proj_b}
        for i, blk in enumerate(self.blocks):
            params.update(blk.named(f"{prefix}.block{i}"))
        params[f"{prefix}.point.w"] = self.point_w
        params[f"{prefix}.point.b"] = self.point_b
        return params

    def param_count(self) -> int:
        return sum(p.size for p in self.named().values())


@dataclass
class ImageEncoderParams:
    conv_w: list[Tensor]
    conv_b: list[Tensor]
    head_w: Tensor
    head_b: Tensor
    out_dim: int
    in_channels: int

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        out_dim: int,
        in_channels: int = 3,
        channels: tuple[int, ...] = (32, 64, 128, 256),
    ) -> "ImageEncoderParams":
        conv_w, conv_b = [], []
        prev = in_channels
        for c in channels:
            conv_w.append(Tensor(_he(rng, 9 * prev, (3, 3, prev, c)), requires_grad=True))
            conv_b.append(Tensor(_zeros(c), requires_grad=True))
            prev = c
        return cls(
            conv_w=conv_w,
            conv_b=conv_b,
            head_w=Tensor(_glorot(rng, prev, out_dim, (1, 1, prev, out_dim)), requires_grad=True),
            head_b=Tensor(_zeros(out_dim), requires_grad=True),
            out_dim=out_dim,
            in_channels=in_channels,
        )

    @property
    def stride(self) -> int:
        return 2 ** len(self.conv_w)

    def named(self, prefix: str = "image") -> dict[str, Tensor]:
        params = {}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            params[f"{prefix}.conv{i}.w"] = w
            params[f"{prefix}.conv{i}.b"] = b
        params[f"{prefix}.head.w"] = self.head_w
        params[f"{prefix}.head.b"] = self.head_b
        return params

    def param_count(self) -> int:
        return sum(p.size for p in self.named().values())


def _knn_edges(features: np.ndarray, k: int) -> np.ndarray:
    """Directed edges (i, j) to the k nearest neighbors of i in feature space."""
    n = len(features)
    k = min(k, n - 1)
    if k <= 0:
        return np.zeros((0, 2), dtype=np.int32)
    d2 = np.square(features[:, None, :] - features[None, :, :]).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    nbrs = np.argpartition(d2, k - 1, axis=1)[:, :k]
    src = np.repeat(np.arange(n), k)
    return np.stack([src, nbrs.reshape(-1)], axis=1).astype(np.int32)


def edgeconv_forward(features: Tensor, edges: np.ndarray, block: EdgeConvBlock) -> Tensor:
    """One EdgeConv block: out[i] = max_{j in N(i)} MLP(x_i, x_j - x_i).

    Vertices without neighbors fall back to the self-pair (x_i, 0).
    """
    n = features.shape[0]
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise IndexError(f"edge index out of range for {n} vertices")

    center_term = ad.linear(features, block.w_center)  # n x width
    nbr_term = ad.linear(features, block.w_nbr)

    width = block.b1.shape[0]
    e = len(edges)
    # per-edge first layer: c[i] + (nb[j] - nb[i]) + b1
    if e:
        msg = ad.add(
            ad.sub(ad.add(ad.gather(center_term, edges[:, 0]), ad.gather(nbr_term, edges[:, 1])), ad.gather(nbr_term, edges[:, 0])),
            block.b1,
        )
        edge_out = ad.relu(ad.linear(ad.relu(msg), block.w2, block.b2))  # e x width
    else:
        edge_out = Tensor(np.zeros((0, width), dtype=features.dtype))
    # self-pair messages: difference term zero
    self_out = ad.relu(ad.linear(ad.relu(ad.add(center_term, block.b1)), block.w2, block.b2))  # n x width

    degree = np.zeros(n, dtype=np.int64)
    if e:
        np.add.at(degree, edges[:, 0], 1)
    max_deg = max(int(degree.max(initial=0)), 1)

    # rows: [edge messages | self messages | -inf pad]
    pad_row = Tensor(np.full((1, width), NEG_PAD, dtype=features.dtype))
    pool = ad.concat([edge_out, self_out, pad_row], axis=0)
    pad_idx = e + n
    idx = np.full((n, max_deg), pad_idx, dtype=np.int64)
    cursor = np.zeros(n, dtype=np.int64)
    for row, (i, _) in enumerate(edges):
        idx[i, cursor[i]] = row
        cursor[i] += 1
    isolated = degree == 0
    idx[isolated, 0] = e + np.flatnonzero(isolated)
    gathered = ad.reshape(ad.gather(pool, idx.reshape(-1)), (n, max_deg, width))
    return ad.reduce_max(gathered, axis=1)


def sketch_encode_features(vertices: Tensor, edges: np.ndarray, params: SketchEncoderParams) -> Tensor:
    """Core encoder over an explicit vertex Tensor; returns a 1x1xD feature."""
    h = ad.linear(vertices, params.proj_w, params.proj_b)
    block_outputs = []
    for block in params.blocks:
        if params.dynamic_knn:
            block_edges = _knn_edges(h.data, params.knn_k)
        else:
            block_edges = edges
        h = ad.add(edgeconv_forward(h, block_edges, block), h)
        block_outputs.append(h)
    per_point = ad.linear(ad.concat(block_outputs, axis=1), params.point_w, params.point_b)
    pooled = ad.reduce_max(per_point, axis=0)
    return ad.reshape(pooled, (1, 1, params.out_dim))


def sketch_encode(graph: SketchGraph, params: SketchEncoderParams) -> Tensor:
    return sketch_encode_features(Tensor(graph.vertices), graph.edges, params)


def image_encode(image, params: ImageEncoderParams) -> Tensor:
    """Encode an HxWxC image to an (H/stride)x(W/stride)xD feature map."""
    x = image if isinstance(image, Tensor) else Tensor(image)
    h, w = x.shape[0], x.shape[1]
    s = params.stride
    if h % s or w % s:
        pad_h = (h + s - 1) // s * s
        pad_w = (w + s - 1) // s * s
        raise ad.ShapeError(f"image {h}x{w} not divisible by stride {s}; pad to {pad_h}x{pad_w}")
    if x.shape[2] != params.in_channels:
        raise ad.ShapeError(f"image has {x.shape[2]} channels, encoder expects {params.in_channels}")
    for w_t, b_t in zip(params.conv_w, params.conv_b):
        x = ad.relu(ad.conv2d(x, w_t, b_t, stride=2, padding=1))
    return ad.conv2d(x, params.head_w, params.head_b)


def sketch_encode_image_baseline(raster, params: ImageEncoderParams) -> Tensor:
    """Ablation encoder: CNN over the rasterized sketch, global max pool."""
    fmap = image_encode(raster, params)
    pooled = ad.reduce_max(ad.reduce_max(fmap, axis=0), axis=0)
    return ad.reshape(pooled, (1, 1, params.out_dim))
