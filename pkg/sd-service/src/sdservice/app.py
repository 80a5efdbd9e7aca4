"""HTTP surface of the denoising service.

Request bodies are parsed as plain JSON objects and validated by hand so
that every rejection is a 400 with a message naming the offending field,
rather than a framework-shaped error the client cannot act on. The only
state across requests is a bounded LRU of guidance images; everything
else is a pure function of the request and the server seed.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import io
import re
import threading
from collections import OrderedDict

import numpy as np
from fastapi import Body, FastAPI, HTTPException
from PIL import Image

from .model import ModelError, StubModel, image_features, _spread
from .wire import WireError, decode_tensor, encode_tensor

_DIRECTION_SUFFIX = re.compile(r",\s*from (?:front|side|back|top|bottom) view\s*$")

MAX_IMAGE_SIDE = 4096


def strip_direction(prompt: str) -> str:
    """Drop a trailing view clause; the guidance image is view-agnostic."""
    return _DIRECTION_SUFFIX.sub("", prompt)


class SessionState:
    """LRU store of guidance images keyed by handle.

    Capacity is clamped to at least 8 so a full ring of view queries can
    never evict its own guidance image mid-pass. Lookups refresh
    recency; inserting past capacity drops the least recently used
    entry, after which its handle is simply unknown.
    """

    def __init__(self, capacity: int = 8):
        self.capacity = max(8, int(capacity))
        self._images: OrderedDict[str, bytes] = OrderedDict()
        self._lock = threading.Lock()

    def put(self, handle: str, png: bytes) -> None:
        with self._lock:
            if handle in self._images:
                self._images.move_to_end(handle)
            self._images[handle] = png
            while len(self._images) > self.capacity:
                self._images.popitem(last=False)

    def get(self, handle: str) -> bytes | None:
        with self._lock:
            png = self._images.get(handle)
            if png is not None:
                self._images.move_to_end(handle)
            return png

    def __contains__(self, handle: str) -> bool:
        with self._lock:
            return handle in self._images

    def __len__(self) -> int:
        with self._lock:
            return len(self._images)


def _bad(message: str) -> None:
    raise HTTPException(status_code=400, detail=message)


def _want_str(payload: dict, key: str, required: bool = True) -> str:
    value = payload.get(key)
    if value is None and not required:
        return ""
    if not isinstance(value, str):
        _bad(f"{key!r} must be a string")
    return value


def _want_int(payload: dict, key: str, lo: int, hi: int) -> int:
    value = payload.get(key)
    if not isinstance(value, int) or isinstance(value, bool):
        _bad(f"{key!r} must be an integer")
    if not lo <= value <= hi:
        _bad(f"{key!r} {value} outside [{lo}, {hi}]")
    return value


def _want_latent(payload: dict, key: str = "latent") -> np.ndarray:
    if key not in payload:
        _bad(f"request is missing {key!r}")
    try:
        latent = decode_tensor(payload[key])
    except WireError as exc:
        _bad(f"{key!r}: {exc}")
    if latent.ndim != 3:
        _bad(f"{key!r} must be rank 3, got shape {latent.shape}")
    return latent


def _decode_png_field(payload: dict, key: str) -> bytes:
    value = payload.get(key)
    if not isinstance(value, str):
        _bad(f"{key!r} must be a base64 string")
    try:
        return base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError) as exc:
        _bad(f"{key!r} is not valid base64: {exc}")


def _content_handle(png: bytes) -> str:
    return "img-" + hashlib.sha256(png).hexdigest()[:16]


def _depth_grid(raw: bytes, width: int, height: int) -> np.ndarray:
    """Decode a depth control PNG and fit it to the latent grid.

    Sixteen-bit grayscale is the native format (near=65535); eight-bit
    and color images are accepted and normalized the same way.
    """
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:
        _bad(f"'depth_png' is not a decodable image: {exc}")
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        depth = np.asarray(img, dtype=np.float64) / 65535.0
    elif img.mode == "F":
        depth = np.asarray(img, dtype=np.float64)
    else:
        depth = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    return _spread(depth, width, height)


def create_app(seed: int = 0, capacity: int = 8) -> FastAPI:
    app = FastAPI(title="sd-service")
    model = StubModel(seed)
    sessions = SessionState(capacity)
    app.state.model = model
    app.state.sessions = sessions

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/txt2img")
    def txt2img(payload: dict = Body(...)) -> dict:
        prompt = strip_direction(_want_str(payload, "prompt"))
        seed_in = _want_int(payload, "seed", -(2**62), 2**62)
        width = _want_int(payload, "width", 8, MAX_IMAGE_SIDE)
        height = _want_int(payload, "height", 8, MAX_IMAGE_SIDE)
        png = model.txt2img(prompt, seed_in, width, height)
        handle = _content_handle(png)
        sessions.put(handle, png)
        return {"handle": handle, "png": base64.b64encode(png).decode("ascii")}

    @app.post("/register-image")
    def register_image(payload: dict = Body(...)) -> dict:
        png = _decode_png_field(payload, "png")
        try:
            image_features(png)
        except ModelError as exc:
            _bad(str(exc))
        handle = _content_handle(png)
        sessions.put(handle, png)
        return {"handle": handle}

    @app.post("/decode")
    def decode(payload: dict = Body(...)) -> dict:
        latent = _want_latent(payload)
        return {"image": encode_tensor(model.decode(latent))}

    @app.post("/denoise")
    def denoise(payload: dict = Body(...)) -> dict:
        latent = _want_latent(payload)
        timestep = _want_int(payload, "timestep", 1, 1000)
        prompt = _want_str(payload, "prompt")
        _want_str(payload, "negative_prompt", required=False)

        height, width = latent.shape[0], latent.shape[1]
        depth = None
        if payload.get("depth_png") is not None:
            raw = _decode_png_field(payload, "depth_png")
            depth = _depth_grid(raw, width, height)

        scale = payload.get("image_scale", 0.0)
        if isinstance(scale, bool) or not isinstance(scale, (int, float)):
            _bad("'image_scale' must be a number")
        scale = float(scale)
        if not np.isfinite(scale):
            _bad("'image_scale' must be finite")

        features = None
        handle = payload.get("image_guidance_id")
        if handle is not None:
            if not isinstance(handle, str) or not handle:
                _bad("'image_guidance_id' must be a non-empty string or null")
            png = sessions.get(handle)
            if png is None:
                _bad(f"unknown or expired image handle {handle!r}")
            features = image_features(png)

        flag = payload.get("cfg_server_side", False)
        if not isinstance(flag, bool):
            _bad("'cfg_server_side' must be a boolean")
        # Guidance mixing is the client's job; both branches are always
        # returned, so the flag carries no behavior here.

        try:
            eps_cond, eps_uncond = model.denoise(
                latent, timestep, prompt, features, scale, depth
            )
        except ModelError as exc:
            _bad(str(exc))
        return {
            "eps_cond": encode_tensor(eps_cond),
            "eps_uncond": encode_tensor(eps_uncond),
        }

    return app
