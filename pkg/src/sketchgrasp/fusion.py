"""Sketch-image relevance and feature fusion.

The global sketch feature scales the image feature map channelwise
(Hadamard product) to produce a relevance map; the relevance map is then
concatenated with the original features and linearly projected back to the
original channel width by a 1x1 projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class FusionParams:
    w: Tensor  # 2D x D
    b: Tensor  # D

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int) -> "FusionParams":
        """Identity on the image half, small random mixing on the relevance half.

        Starting near pass-through keeps early training close to a plain
        detector while still providing gradient to the sketch pathway.
        """
        eye = np.eye(dim, dtype=np.float32)
        mix = (rng.standard_normal((dim, dim)) * np.sqrt(1.0 / dim) * 0.5).astype(np.float32)
        return cls(
            w=Tensor(np.concatenate([eye, mix], axis=0), requires_grad=True),
            b=Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True),
        )

    @classmethod
    def identity(cls, dim: int) -> "FusionParams":
        """Exact [I | 0] projection: fuse(F_c, anything) == F_c."""
        w = np.concatenate([np.eye(dim, dtype=np.float32), np.zeros((dim, dim), dtype=np.float32)], axis=0)
        return cls(w=Tensor(w, requires_grad=True), b=Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True))

    def named(self, prefix: str = "fusion") -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


def relevance(f_c: Tensor, f_s: Tensor) -> Tensor:
    """Channelwise product of an HxWxD map with a 1x1xD global feature."""
    if f_c.shape[-1] != f_s.shape[-1]:
        raise ad.ShapeError(f"channel mismatch: image features have {f_c.shape[-1]}, sketch feature has {f_s.shape[-1]}")
    return ad.mul(f_c, f_s)


def fuse(f_c: Tensor, f_rel: Tensor, params: FusionParams) -> Tensor:
    """Concat channels and project back to the image feature width."""
    if f_c.shape != f_rel.shape:
        raise ad.ShapeError(f"fuse: shape mismatch {f_c.shape} vs {f_rel.shape}")
    h, w, d = f_c.shape
    stacked = ad.concat([f_c, f_rel], axis=2)
    flat = ad.reshape(stacked, (h * w, 2 * d))
    projected = ad.linear(flat, params.w, params.b)
    return ad.reshape(projected, (h, w, d))


def query_features(f_c: Tensor, f_s: Tensor, params: FusionParams) -> tuple[Tensor, Tensor]:
    """Relevance map and fused features for one (image, sketch) query."""
    f_rel = relevance(f_c, f_s)
    return f_rel, fuse(f_c, f_rel, params)
