"""HTTP synthesis service: a frozen generator behind three endpoints.

POST /synthesize  takes a 3-channel label PNG and returns a grayscale
PNG at the model resolution.  GET /info reports checkpoint metadata and
GET /health is a liveness probe.  The loaded model is immutable, so
identical requests return byte-identical images.
"""

from __future__ import annotations

import io
import os
import threading
import time

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, PlainTextResponse
from PIL import Image

from .checkpoint import load_checkpoint
from .sketch import sanitize_label


class ModelHandle:
    """Immutable generator snapshot plus checkpoint metadata."""

    def __init__(self, checkpoint_path):
        g, _d, _ag, _ad, meta = load_checkpoint(checkpoint_path)
        self.generator = g
        self.meta = meta
        self.resolution = int(meta["resolution"])
        self.checkpoint_path = str(checkpoint_path)
        # forward caches activations, so synthesis is serialized per lock;
        # concurrency across requests is bounded by the worker semaphore
        self._lock = threading.Lock()

    def synthesize(self, label: np.ndarray) -> np.ndarray:
        """(3,H,W) label in {0,1} -> (H,W) uint8 image."""
        with self._lock:
            out = self.generator.forward(label[None].astype(np.float32))[0, 0]
        return np.clip(np.round((out + 1.0) * 127.5), 0, 255).astype(np.uint8)


def worker_limit() -> int:
    try:
        return max(1, int(os.environ.get("PGSGAN_THREADS", "2")))
    except ValueError:
        return 2


def create_app(handle: ModelHandle | None, allow_origin: str | None = None) -> FastAPI:
    app = FastAPI()
    app.state.handle = handle
    sem = threading.BoundedSemaphore(worker_limit())

    if allow_origin:
        from fastapi.middleware.cors import CORSMiddleware
        app.add_middleware(CORSMiddleware, allow_origins=[allow_origin],
                           allow_methods=["*"], allow_headers=["*"])

    @app.get("/health")
    def health():
        return PlainTextResponse("ok")

    @app.get("/info")
    def info():
        h = app.state.handle
        if h is None:
            return JSONResponse({"error": "model not loaded"}, status_code=503)
        return {
            "resolution": h.resolution,
            "phase": h.meta.get("phase"),
            "architecture_hash": h.meta.get("architecture_hash"),
            "checkpoint_path": h.checkpoint_path,
            "label_format": "rgb-png ovary/follicle/sketch",
        }

    @app.post("/synthesize")
    async def synthesize(request: Request):
        h = app.state.handle
        if h is None:
            return JSONResponse({"error": "model not loaded"}, status_code=503)
        body = await request.body()
        try:
            im = Image.open(io.BytesIO(body)).convert("RGB")
        except Exception:
            return JSONResponse({"error": "request body is not a decodable "
                                 "image"}, status_code=400)
        if im.size != (h.resolution, h.resolution):
            return JSONResponse({
                "error": "wrong label size",
                "expected": [h.resolution, h.resolution],
                "got": [im.height, im.width],
            }, status_code=400)
        arr = np.asarray(im, dtype=np.float32).transpose(2, 0, 1) / 255.0
        label = sanitize_label(arr)  # overlapping strokes are repaired here
        t0 = time.perf_counter()
        with sem:
            out = h.synthesize(label)
        millis = int(round((time.perf_counter() - t0) * 1000))
        buf = io.BytesIO()
        Image.fromarray(out, mode="L").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png",
                        headers={"X-Synth-Millis": str(millis)})

    return app


def serve(checkpoint_path, port: int = 8750, allow_origin: str | None = None):
    import uvicorn
    app = create_app(ModelHandle(checkpoint_path), allow_origin=allow_origin)
    uvicorn.run(app, host="0.0.0.0", port=port)
