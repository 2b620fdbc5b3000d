"""Stateless HTTP inference service.

``GET /health`` reports the loaded model; ``POST /analyze`` takes raw PNG or
JPEG bytes and returns the same JSON document as ``smearscope infer``.
"""
from __future__ import annotations

import base64
import logging

from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse

from .classification import model_hash
from .imaging import ImageError, decode_image, encode_png
from .pipeline import analyze_image, image_id_for_bytes, render_overlay
from .preprocess import PreprocessConfig
from .segmentation import SegmentationConfig

log = logging.getLogger(__name__)

MAX_REQUEST_BYTES = 20 * 1024 * 1024


def create_app(model, seg_cfg: SegmentationConfig = SegmentationConfig(),
               pre_cfg: PreprocessConfig = PreprocessConfig()) -> FastAPI:
    app = FastAPI(title="smearscope")
    digest = model_hash(model)

    @app.get("/health")
    def health():
        return {"status": "ok", "model_hash": digest}

    @app.post("/analyze")
    async def analyze(request: Request, overlay: int = 0):
        declared = request.headers.get("content-length")
        if declared is not None and declared.isdigit() and int(declared) > MAX_REQUEST_BYTES:
            return JSONResponse({"error": "payload_too_large"}, status_code=413)
        body = await request.body()
        if len(body) > MAX_REQUEST_BYTES:
            return JSONResponse({"error": "payload_too_large"}, status_code=413)
        try:
            img = decode_image(body)
        except ImageError:
            return JSONResponse({"error": "decode_failed"}, status_code=400)
        try:
            result = await run_in_threadpool(
                analyze_image, img, seg_cfg, model, pre_cfg, image_id_for_bytes(body))
        except ValueError as exc:
            log.info("analysis failed: %s", exc)
            return JSONResponse({"error": "processing_failed", "detail": str(exc)},
                                status_code=422)
        doc = result.to_dict()
        if overlay:
            doc["overlay_png_base64"] = base64.b64encode(
                encode_png(render_overlay(img, result))).decode("ascii")
        return doc

    return app


def serve(host: str, port: int, model, seg_cfg: SegmentationConfig,
          pre_cfg: PreprocessConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(model, seg_cfg, pre_cfg), host=host, port=port)
