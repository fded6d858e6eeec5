"""Tests for the inference HTTP service."""

import base64
import io
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from sketchgrasp.data_synth import generate_dataset, load_manifest
from sketchgrasp.engine import TrainConfig, make_checkpoint
from sketchgrasp.model import GraspModel, ModelConfig
from sketchgrasp.service import create_app

SQUARE_STROKES = [[[10, 100, 100, 10, 10], [10, 10, 100, 100, 10]]]


@pytest.fixture(scope="module")
def client():
    import tempfile
    from pathlib import Path

    tmp = Path(tempfile.mkdtemp(prefix="service-ds-"))
    manifest = generate_dataset(
        tmp,
        n_train=2,
        n_test=3,
        sketch_counts={"train": 1, "testA": 1, "testB": 1},
        seed=5,
        image_size=64,
        n_objects_range=(1, 2),
    )
    dataset = load_manifest(manifest)
    cfg = TrainConfig.desk(
        max_iterations=1,
        model=ModelConfig(image_size=64, feat_dim=16, image_channels=(8, 16, 32), num_points=48),
    )
    ckpt = make_checkpoint(GraspModel.init(cfg.model, seed=1), 1, cfg)
    app = create_app(ckpt, dataset=dataset, scene_split="test")
    with TestClient(app) as tc:
        tc.checkpoint_digest = ckpt.digest
        yield tc


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200
    body = r.json()
    assert body["status"] == "ok"
    assert body["checkpoint_digest"] == client.checkpoint_digest
    assert "version" in body


def test_scenes_listing_with_thumbnails(client):
    r = client.get("/scenes")
    assert r.status_code == 200
    scenes = r.json()["scenes"]
    assert len(scenes) == 3
    assert [s["id"] for s in scenes] == sorted(s["id"] for s in scenes)
    for entry in scenes:
        thumb = Image.open(io.BytesIO(base64.b64decode(entry["thumbnail_png_base64"])))
        assert thumb.size == (64, 64)
        assert entry["categories"]


def test_scene_png_roundtrip(client):
    sid = client.get("/scenes").json()["scenes"][0]["id"]
    r = client.get(f"/scene/{sid}")
    assert r.status_code == 200
    assert r.headers["content-type"] == "image/png"
    img = Image.open(io.BytesIO(r.content))
    assert img.size == (64, 64)


def test_scene_unknown_404(client):
    r = client.get("/scene/nope")
    assert r.status_code == 404
    assert "error" in r.json()


def test_infer_by_scene_id(client):
    sid = client.get("/scenes").json()["scenes"][0]["id"]
    r = client.post("/infer", json={"scene_id": sid, "strokes": SQUARE_STROKES, "k": 3})
    assert r.status_code == 200
    body = r.json()
    assert body["elapsed_ms"] > 0
    assert isinstance(body["grasps"], list)
    assert len(body["grasps"]) <= 3
    for g in body["grasps"]:
        assert set(g) == {"x", "y", "w", "h", "theta", "score"}
        assert 0.0 < g["theta"] <= 180.0


def test_infer_repeatable_and_concurrent(client):
    sid = client.get("/scenes").json()["scenes"][0]["id"]
    payload = {"scene_id": sid, "strokes": SQUARE_STROKES, "k": 5}

    def call(_):
        return client.post("/infer", json=payload).json()["grasps"]

    with ThreadPoolExecutor(max_workers=4) as pool:
        results = list(pool.map(call, range(4)))
    assert all(r == results[0] for r in results)


def test_infer_by_image_matches_scene_id(client):
    sid = client.get("/scenes").json()["scenes"][0]["id"]
    png = client.get(f"/scene/{sid}").content
    b64 = base64.b64encode(png).decode()
    via_id = client.post("/infer", json={"scene_id": sid, "strokes": SQUARE_STROKES, "k": 4}).json()
    via_img = client.post("/infer", json={"image_png_base64": b64, "strokes": SQUARE_STROKES, "k": 4}).json()
    assert via_id["grasps"] == via_img["grasps"]


@pytest.mark.parametrize(
    "body",
    [
        {"strokes": SQUARE_STROKES},  # neither scene nor image
        {"scene_id": "x", "image_png_base64": "x", "strokes": SQUARE_STROKES},  # both
        {"scene_id": "placeholder"},  # missing strokes
        {"scene_id": "placeholder", "strokes": []},  # empty strokes
        {"scene_id": "placeholder", "strokes": "scribble"},  # wrong type
        {"scene_id": "placeholder", "strokes": [[[1], [1]]]},  # single-point stroke
        {"scene_id": "placeholder", "strokes": SQUARE_STROKES, "k": 0},
        {"scene_id": "placeholder", "strokes": SQUARE_STROKES, "k": "three"},
        {"image_png_base64": "!!!", "strokes": SQUARE_STROKES},
    ],
)
def test_infer_malformed_requests_400(client, body):
    if body.get("scene_id") == "placeholder":
        body = dict(body)
        body["scene_id"] = client.get("/scenes").json()["scenes"][0]["id"]
    r = client.post("/infer", json=body)
    assert r.status_code == 400
    assert "error" in r.json()


def test_infer_unknown_scene_404(client):
    r = client.post("/infer", json={"scene_id": "missing", "strokes": SQUARE_STROKES, "k": 1})
    assert r.status_code == 404
