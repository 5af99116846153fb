"""HTTP inference service consumed by the prompt-studio UI.

Endpoints (JSON bodies, rasters as base64 PNG):

    GET  /v1/health                       -> {status, model_config}
    GET  /v1/sheets                       -> demo sheet listing with thumbnails
    GET  /v1/sheets/{id}/tile?row=&col=&size= -> PNG tile
    POST /v1/segment                      -> {mask, foreground_fraction, latency_ms}

Malformed payloads return 400 with {error, field}; rasters over the
configured maximum side length return 413. The model is loaded once and
never mutated, so responses depend only on the request payload.
"""

from __future__ import annotations

import base64
import io
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from PIL import Image
from pydantic import BaseModel

from .datapipe import load_sheet
from .evaluation import segment_raster
from .model import load_model
from .model.unet import BaselineUNet
from .synthmap import MapSheet


class ApiError(Exception):
    def __init__(self, status: int, error: str, field: str = ""):
        super().__init__(error)
        self.status = status
        self.error = error
        self.field = field


class SegmentRequest(BaseModel):
    source_image: str
    source_mask: str
    target_image: str
    threshold: float = 0.5


def _decode_png(b64: str, field: str, mode: str) -> np.ndarray:
    try:
        raw = base64.b64decode(b64, validate=True)
    except Exception:
        raise ApiError(400, "not valid base64", field)
    try:
        with Image.open(io.BytesIO(raw)) as im:
            return np.asarray(im.convert(mode))
    except Exception:
        raise ApiError(400, "not a decodable image", field)


def _encode_png(array: np.ndarray) -> str:
    mode = "RGB" if array.ndim == 3 else "L"
    buf = io.BytesIO()
    Image.fromarray(array, mode=mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _thumbnail(image: np.ndarray, max_side: int = 128) -> str:
    im = Image.fromarray(image, mode="RGB")
    im.thumbnail((max_side, max_side), Image.NEAREST)
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def create_app(checkpoint, dataset_root=None, max_side: int = 2048) -> FastAPI:
    """Build the service around one frozen checkpoint.

    `checkpoint` is a path or an already-built prompted model. `dataset_root`
    optionally points at a generated dataset whose sheets become the demo
    gallery; without it the sheet endpoints serve an empty list.
    """
    if isinstance(checkpoint, (str, Path)):
        model = load_model(checkpoint)
    else:
        model = checkpoint
    if isinstance(model, BaselineUNet):
        raise ValueError("the service needs a prompted-model checkpoint")
    model.eval()
    patch = model.cfg.patch_size

    sheets: dict[int, MapSheet] = {}
    if dataset_root is not None:
        root = Path(dataset_root)
        for meta in sorted((root / "sheets").iterdir(), key=lambda d: int(d.name)):
            sheet = load_sheet(root, int(meta.name))
            sheets[sheet.sheet_id] = sheet

    app = FastAPI(title="smolmapseg")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status, content={"error": exc.error, "field": exc.field}
        )

    @app.exception_handler(RequestValidationError)
    async def handle_validation_error(request: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        field = ".".join(str(p) for p in first.get("loc", []) if p != "body")
        return JSONResponse(
            status_code=400,
            content={"error": first.get("msg", "invalid request"), "field": field},
        )

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "model_config": model.cfg.to_dict()}

    @app.get("/v1/sheets")
    def list_sheets():
        return [
            {
                "sheet_id": s.sheet_id,
                "style_id": s.style_id,
                "width": int(s.image.shape[1]),
                "height": int(s.image.shape[0]),
                "thumbnail": _thumbnail(s.image),
            }
            for s in sheets.values()
        ]

    @app.get("/v1/sheets/{sheet_id}/tile")
    def get_tile(sheet_id: int, row: int = 0, col: int = 0, size: int = 0):
        if sheet_id not in sheets:
            raise ApiError(404, f"unknown sheet {sheet_id}", "sheet_id")
        size = size or patch
        if size < 1 or size > max_side:
            raise ApiError(400, f"tile size must be in 1..{max_side}", "size")
        sheet = sheets[sheet_id]
        h, w = sheet.labels.shape
        if row < 0 or col < 0 or (row + 1) * size > h or (col + 1) * size > w:
            raise ApiError(400, f"tile ({row}, {col}) at size {size} is out of bounds", "row")
        tile = sheet.image[row * size : (row + 1) * size, col * size : (col + 1) * size]
        buf = io.BytesIO()
        Image.fromarray(tile, mode="RGB").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.post("/v1/segment")
    def segment(req: SegmentRequest):
        t0 = time.perf_counter()
        if not 0.0 < req.threshold < 1.0:
            raise ApiError(400, "threshold must lie strictly between 0 and 1", "threshold")
        source = _decode_png(req.source_image, "source_image", "RGB")
        mask = _decode_png(req.source_mask, "source_mask", "L")
        target = _decode_png(req.target_image, "target_image", "RGB")
        for name, arr in (("source_image", source), ("source_mask", mask), ("target_image", target)):
            if max(arr.shape[:2]) > max_side:
                raise ApiError(413, f"raster exceeds the maximum side length {max_side}", name)
        if source.shape[:2] != mask.shape:
            raise ApiError(
                400,
                f"source mask dims {mask.shape} do not match source image "
                f"dims {source.shape[:2]}",
                "source_mask",
            )
        if min(source.shape[:2]) < patch:
            raise ApiError(400, f"source image sides must be at least {patch}", "source_image")
        if min(target.shape[:2]) < patch:
            raise ApiError(400, f"target image sides must be at least {patch}", "target_image")
        if not np.any(mask):
            raise ApiError(400, "source mask has no foreground", "source_mask")

        pred = segment_raster(model, source, mask, target, threshold=req.threshold)
        fraction = float(np.count_nonzero(pred)) / pred.size
        return {
            "mask": _encode_png((pred * 255).astype(np.uint8)),
            "foreground_fraction": fraction,
            "latency_ms": (time.perf_counter() - t0) * 1000.0,
        }

    return app
