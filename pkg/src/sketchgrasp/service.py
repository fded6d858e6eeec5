"""HTTP inference service over an immutable model snapshot.

Endpoints: GET /health, GET /scenes (ids + thumbnails of the loaded
evaluation set), GET /scene/{id} (PNG), POST /infer (scene id or base64 PNG
plus QuickDraw-style strokes). Requests are independent and side-effect
free, so concurrent identical queries return identical bodies.
"""

from __future__ import annotations

import base64
import io
import json
import time
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from PIL import Image

from . import __version__
from .data_synth import Dataset, SceneSample
from .engine import Checkpoint, infer, model_from_checkpoint
from .model import GraspModel
from .sketch_graph import ParseError, RawDrawing, parse_ndjson

THUMBNAIL_SIZE = 64


@dataclass
class ServiceState:
    model: GraspModel
    digest: str
    scenes: dict[str, SceneSample]


def _png_bytes(image: np.ndarray) -> bytes:
    arr = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def _thumbnail_b64(image: np.ndarray) -> str:
    arr = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    thumb = Image.fromarray(arr).resize((THUMBNAIL_SIZE, THUMBNAIL_SIZE), Image.BILINEAR)
    buf = io.BytesIO()
    thumb.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def _parse_strokes(strokes) -> RawDrawing:
    """Validate UI strokes by round-tripping them through the NDJSON schema."""
    line = json.dumps({"drawing": strokes})
    drawing = parse_ndjson(line)
    drawing.validate()
    if not drawing.strokes:
        raise ParseError("no usable strokes")
    return drawing


def _decode_image(b64: str) -> np.ndarray:
    try:
        raw = base64.b64decode(b64, validate=True)
        img = Image.open(io.BytesIO(raw)).convert("RGB")
    except Exception as exc:
        raise ValueError(f"could not decode image_png_base64: {exc}") from None
    return np.asarray(img, dtype=np.float32) / 255.0


def create_app(
    checkpoint_or_model,
    scenes: dict[str, SceneSample] | None = None,
    dataset: Dataset | None = None,
    scene_split: str = "test",
    digest: str | None = None,
) -> FastAPI:
    if isinstance(checkpoint_or_model, Checkpoint):
        model = model_from_checkpoint(checkpoint_or_model)
        digest = digest or checkpoint_or_model.digest
    else:
        model = checkpoint_or_model
        digest = digest or "unsaved"
    scene_map: dict[str, SceneSample] = dict(scenes or {})
    if dataset is not None:
        for i in dataset.split_indices(scene_split):
            sample = dataset.load(i)
            scene_map[sample.scene_id] = sample
    state = ServiceState(model=model, digest=digest, scenes=scene_map)
    app = FastAPI(title="sketchgrasp", version=__version__)
    # the sketchpad UI is served from its own origin during development
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"])
    app.state.service = state

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__, "checkpoint_digest": state.digest}

    @app.get("/scenes")
    def list_scenes():
        entries = []
        for sid in sorted(state.scenes):
            sample = state.scenes[sid]
            entries.append(
                {
                    "id": sid,
                    "categories": sorted(set(sample.categories())),
                    "thumbnail_png_base64": _thumbnail_b64(sample.image),
                }
            )
        return {"scenes": entries}

    @app.get("/scene/{scene_id}")
    def get_scene(scene_id: str):
        sample = state.scenes.get(scene_id)
        if sample is None:
            return _error(404, f"unknown scene {scene_id!r}")
        return Response(content=_png_bytes(sample.image), media_type="image/png")

    @app.post("/infer")
    async def run_infer(body: dict):
        started = time.perf_counter()
        if not isinstance(body, dict):
            return _error(400, "body must be a JSON object")
        strokes = body.get("strokes")
        if strokes is None:
            return _error(400, "missing 'strokes'")
        k = body.get("k", 5)
        if not isinstance(k, int) or isinstance(k, bool) or k <= 0:
            return _error(400, f"'k' must be a positive integer, got {k!r}")

        scene_id = body.get("scene_id")
        image_b64 = body.get("image_png_base64")
        if (scene_id is None) == (image_b64 is None):
            return _error(400, "provide exactly one of 'scene_id' or 'image_png_base64'")
        if scene_id is not None:
            sample = state.scenes.get(scene_id)
            if sample is None:
                return _error(404, f"unknown scene {scene_id!r}")
            image = sample.image
        else:
            try:
                image = _decode_image(image_b64)
            except ValueError as exc:
                return _error(400, str(exc))

        try:
            drawing = _parse_strokes(strokes)
        except ParseError as exc:
            return _error(400, f"invalid strokes: {exc}")

        try:
            preds = infer(state.model, image, drawing, k=k)
        except ValueError as exc:
            return _error(400, str(exc))
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        return {
            "grasps": [
                {
                    "x": p.rect.x,
                    "y": p.rect.y,
                    "w": p.rect.w,
                    "h": p.rect.h,
                    "theta": p.rect.theta,
                    "score": p.score,
                }
                for p in preds
            ],
            "elapsed_ms": elapsed_ms,
        }

    return app


def serve(app: FastAPI, host: str = "127.0.0.1", port: int = 8420) -> None:
    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="warning")
