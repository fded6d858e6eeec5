import numpy as np
import pytest

from sketchgrasp import autodiff as ad
from sketchgrasp.autodiff import Tensor
from sketchgrasp.encoders import (
    BASELINE_CHANNELS,
    EdgeConvBlock,
    ImageEncoderParams,
    SketchEncoderParams,
    edgeconv_forward,
    image_encode,
    sketch_encode,
    sketch_encode_features,
    sketch_encode_image_baseline,
)
from sketchgrasp.sketch_graph import SketchGraph


def random_block(rng, width=128):
    blk = EdgeConvBlock.init(rng, width)
    return blk


def mlp_reference(block, x_i, x_j):
    """Plain-numpy evaluation of the pair MLP on concat(x_i, x_j - x_i)."""
    w1 = np.concatenate([block.w_center.data, block.w_nbr.data], axis=0)
    pair = np.concatenate([x_i, x_j - x_i])
    h = np.maximum(pair @ w1 + block.b1.data, 0)
    return np.maximum(h @ block.w2.data + block.b2.data, 0)


def chain_edges(n):
    edges = []
    for i in range(n - 1):
        edges.append((i, i + 1))
        edges.append((i + 1, i))
    return np.array(edges, dtype=np.int32)


def test_edgeconv_no_edges_uses_self_pair():
    rng = np.random.default_rng(0)
    blk = random_block(rng)
    x = rng.standard_normal((3, 128)).astype(np.float32)
    out = edgeconv_forward(Tensor(x), np.zeros((0, 2), dtype=np.int32), blk)
    for i in range(3):
        np.testing.assert_allclose(out.data[i], mlp_reference(blk, x[i], x[i]), rtol=1e-5, atol=1e-5)


def test_edgeconv_identical_vertices_symmetric():
    rng = np.random.default_rng(1)
    blk = random_block(rng)
    x = np.tile(rng.standard_normal(128).astype(np.float32), (2, 1))
    out = edgeconv_forward(Tensor(x), np.array([[0, 1], [1, 0]]), blk)
    np.testing.assert_allclose(out.data[0], out.data[1], atol=1e-6)
    np.testing.assert_allclose(out.data[0], mlp_reference(blk, x[0], x[0]), rtol=1e-5, atol=1e-5)


def test_edgeconv_chain_matches_enumeration():
    rng = np.random.default_rng(2)
    blk = random_block(rng)
    x = rng.standard_normal((4, 128)).astype(np.float32)
    edges = chain_edges(4)
    out = edgeconv_forward(Tensor(x), edges, blk)
    for i in range(4):
        nbrs = [j for a, j in edges if a == i]
        expected = np.max([mlp_reference(blk, x[i], x[j]) for j in nbrs], axis=0)
        np.testing.assert_allclose(out.data[i], expected, rtol=1e-4, atol=1e-5)


def test_edgeconv_rejects_out_of_range_index():
    rng = np.random.default_rng(3)
    blk = random_block(rng)
    x = rng.standard_normal((3, 128)).astype(np.float32)
    with pytest.raises(IndexError):
        edgeconv_forward(Tensor(x), np.array([[0, 3]]), blk)


def make_graph(rng, n=12):
    verts = rng.uniform(-1, 1, size=(n, 2)).astype(np.float32)
    return SketchGraph(vertices=verts, stroke_id=np.zeros(n, dtype=np.int32), edges=chain_edges(n), category="test")


def test_sketch_encode_output_shape():
    rng = np.random.default_rng(4)
    params = SketchEncoderParams.init(rng, out_dim=64)
    out = sketch_encode(make_graph(rng), params)
    assert out.shape == (1, 1, 64)


def test_sketch_encode_full_scale_width():
    rng = np.random.default_rng(5)
    params = SketchEncoderParams.init(rng, out_dim=1024)
    out = sketch_encode(make_graph(rng, n=8), params)
    assert out.shape == (1, 1, 1024)


def test_sketch_encode_permutation_invariant():
    rng = np.random.default_rng(6)
    params = SketchEncoderParams.init(rng, out_dim=32)
    g = make_graph(rng, n=10)
    perm = rng.permutation(10)
    inv = np.argsort(perm)
    permuted = SketchGraph(
        vertices=g.vertices[perm],
        stroke_id=g.stroke_id[perm],
        edges=inv[g.edges].astype(np.int32),
        category=g.category,
    )
    a = sketch_encode(g, params)
    b = sketch_encode(permuted, params)
    np.testing.assert_allclose(a.data, b.data, atol=1e-5)


def test_sketch_encode_duplicate_vertex_invariant():
    rng = np.random.default_rng(7)
    params = SketchEncoderParams.init(rng, out_dim=32)
    g = make_graph(rng, n=6)
    dup = SketchGraph(
        vertices=np.concatenate([g.vertices, g.vertices[2:3]], axis=0),
        stroke_id=np.concatenate([g.stroke_id, g.stroke_id[2:3]]),
        edges=np.concatenate([g.edges, np.array([[6, 1], [1, 6], [6, 3], [3, 6]], dtype=np.int32)], axis=0),
        category=g.category,
    )
    a = sketch_encode(g, params)
    b = sketch_encode(dup, params)
    np.testing.assert_allclose(a.data, b.data, atol=1e-5)


def test_sketch_encode_zero_blocks_is_pooled_projection():
    rng = np.random.default_rng(8)
    params = SketchEncoderParams.init(rng, out_dim=16)
    for blk in params.blocks:
        for t in (blk.w_center, blk.w_nbr, blk.b1, blk.w2, blk.b2):
            t.data[...] = 0
    g = make_graph(rng, n=9)
    out = sketch_encode(g, params)
    h0 = g.vertices @ params.proj_w.data + params.proj_b.data
    per_point = np.tile(h0, (1, 4)) @ params.point_w.data + params.point_b.data
    np.testing.assert_allclose(out.data.reshape(-1), per_point.max(axis=0), rtol=1e-5, atol=1e-6)


def test_sketch_encode_gradient_reaches_vertices():
    rng = np.random.default_rng(9)
    params = SketchEncoderParams.init(rng, out_dim=16)
    g = make_graph(rng, n=8)
    verts = Tensor(g.vertices, requires_grad=True)
    out = sketch_encode_features(verts, g.edges, params)
    ad.reduce_sum(ad.mul(out, Tensor(rng.standard_normal((1, 1, 16)).astype(np.float32)))).backward()
    assert verts.grad is not None
    assert np.abs(verts.grad).max() > 0


def test_sketch_encode_dynamic_knn_flag():
    rng = np.random.default_rng(10)
    params = SketchEncoderParams.init(rng, out_dim=16, dynamic_knn=True)
    out = sketch_encode(make_graph(rng, n=12), params)
    assert out.shape == (1, 1, 16)
    assert np.all(np.isfinite(out.data))


def test_image_encode_shape():
    rng = np.random.default_rng(11)
    params = ImageEncoderParams.init(rng, out_dim=64)
    assert params.stride == 16
    out = image_encode(np.zeros((64, 64, 3), dtype=np.float32), params)
    assert out.shape == (4, 4, 64)


def test_image_encode_zero_image_zero_feature():
    rng = np.random.default_rng(12)
    params = ImageEncoderParams.init(rng, out_dim=8, channels=(8, 16))
    out = image_encode(np.zeros((16, 16, 3), dtype=np.float32), params)
    np.testing.assert_array_equal(out.data, 0)


def test_image_encode_indivisible_suggests_pad():
    rng = np.random.default_rng(13)
    params = ImageEncoderParams.init(rng, out_dim=8)
    with pytest.raises(ad.ShapeError, match="pad to 64x64"):
        image_encode(np.zeros((50, 50, 3), dtype=np.float32), params)


def test_image_encode_translation_equivariance():
    rng = np.random.default_rng(14)
    params = ImageEncoderParams.init(rng, out_dim=8, channels=(8, 16))
    stride = params.stride  # 4
    img1 = np.zeros((48, 48, 3), dtype=np.float32)
    img2 = np.zeros((48, 48, 3), dtype=np.float32)
    img1[20, 20, :] = 1.0
    img2[20 + stride, 20, :] = 1.0
    out1 = image_encode(img1, params).data
    out2 = image_encode(img2, params).data
    assert np.abs(out1).max() > 0
    np.testing.assert_allclose(out1[:-1], out2[1:], atol=1e-5)


def test_baseline_encoder_shape_and_blank_input():
    rng = np.random.default_rng(15)
    params = ImageEncoderParams.init(rng, out_dim=32, in_channels=1, channels=(8, 16))
    out = sketch_encode_image_baseline(np.zeros((32, 32, 1), dtype=np.float32), params)
    assert out.shape == (1, 1, 32)
    np.testing.assert_array_equal(out.data, 0)


def test_graph_encoder_smaller_than_image_baseline():
    rng = np.random.default_rng(16)
    graph_params = SketchEncoderParams.init(rng, out_dim=64)
    baseline_params = ImageEncoderParams.init(rng, out_dim=64, in_channels=1, channels=BASELINE_CHANNELS)
    assert graph_params.param_count() < baseline_params.param_count()


def test_encoder_outputs_finite_on_bounded_inputs():
    rng = np.random.default_rng(17)
    sketch_params = SketchEncoderParams.init(rng, out_dim=16)
    image_params = ImageEncoderParams.init(rng, out_dim=16, channels=(8, 16))
    for trial in range(5):
        g = make_graph(rng, n=int(rng.integers(4, 20)))
        assert np.all(np.isfinite(sketch_encode(g, sketch_params).data))
        img = rng.uniform(-1, 1, size=(16, 16, 3)).astype(np.float32)
        assert np.all(np.isfinite(image_encode(img, image_params).data))
