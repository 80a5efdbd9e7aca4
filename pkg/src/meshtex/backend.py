"""HTTP denoising backend: tensor wire format, transports, remote client.

Tensors travel as JSON objects {"shape", "dtype", "data"} holding raw
little-endian float32 bytes in base64. The shape prefix is authoritative:
a payload whose byte count disagrees with it is rejected outright.

Transports are swappable so tests can run against canned exchanges
(ReplayTransport) and live sessions can be captured for later replay
(RecordingTransport). Identical inputs always serialize to identical
request bytes, which is what makes replay matching workable.
"""

from __future__ import annotations

import base64
import binascii
import json
import math
import os
import time
from typing import Protocol

import numpy as np
import requests

from .diffusion import DenoiserOutput, ViewConditioning
from .exceptions import (
    BackendError,
    BadBase64Error,
    DenoiserUnavailableError,
    LengthMismatchError,
    ShapeMismatchError,
)

WIRE_DTYPE = "f32"


def encode_tensor(grid: np.ndarray) -> dict:
    """Pack a grid as a shape-prefixed base64 float32 payload."""
    a = np.ascontiguousarray(grid, dtype="<f4")
    if not np.isfinite(a).all():
        raise BackendError("refusing to encode non-finite tensor values")
    return {
        "shape": [int(s) for s in a.shape],
        "dtype": WIRE_DTYPE,
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def decode_tensor(payload: dict) -> np.ndarray:
    """Unpack a wire tensor into float64, validating shape against bytes."""
    if not isinstance(payload, dict):
        raise BackendError(
            f"tensor payload must be an object, got {type(payload).__name__}"
        )
    for key in ("shape", "dtype", "data"):
        if key not in payload:
            raise BackendError(f"tensor payload missing {key!r}")
    if payload["dtype"] != WIRE_DTYPE:
        raise BackendError(f"unsupported wire dtype {payload['dtype']!r}")
    shape = tuple(int(s) for s in payload["shape"])
    if any(s < 0 for s in shape):
        raise BackendError(f"negative dimension in shape {shape}")
    try:
        raw = base64.b64decode(payload["data"], validate=True)
    except (binascii.Error, ValueError) as exc:
        raise BadBase64Error(f"tensor data is not valid base64: {exc}") from exc
    expected = math.prod(shape) * 4
    if len(raw) != expected:
        raise LengthMismatchError(
            f"shape {shape} implies {expected} bytes, payload has {len(raw)}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def build_denoise_request(
    latent: np.ndarray, timestep: int, conditioning: ViewConditioning
) -> dict:
    """Serialize one denoiser query; rank-3 latents only."""
    latent = np.asarray(latent)
    if latent.ndim != 3:
        raise ShapeMismatchError(f"latent must be rank 3, got shape {latent.shape}")
    depth = conditioning.depth_png
    return {
        "latent": encode_tensor(latent),
        "timestep": int(timestep),
        "prompt": conditioning.prompt,
        "negative_prompt": conditioning.negative_prompt,
        "depth_png": base64.b64encode(depth).decode("ascii") if depth else None,
        "image_guidance_id": conditioning.image_guidance_id,
        "image_scale": float(conditioning.image_scale),
        "cfg_server_side": False,
    }


class Transport(Protocol):
    """Minimal request channel the client speaks through."""

    def post(self, path: str, payload: dict) -> dict: ...

    def get(self, path: str) -> dict: ...


class HttpTransport:
    """Live HTTP transport with bounded retries on connection failures.

    Retries cover only transport-level errors (refused, timeout); an HTTP
    error status is a server answer and is surfaced immediately.
    """

    def __init__(
        self,
        base_url: str,
        timeout: float = 60.0,
        retries: int = 2,
        retry_wait: float = 0.5,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.retry_wait = retry_wait
        self._session = requests.Session()

    def _finish(self, response: requests.Response) -> dict:
        if response.status_code != 200:
            raise BackendError(
                f"backend returned {response.status_code}: {response.text[:300]}"
            )
        try:
            return response.json()
        except ValueError as exc:
            raise BackendError(f"backend sent non-JSON body: {exc}") from exc

    def _attempt(self, send) -> dict:
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                return self._finish(send())
            except requests.RequestException as exc:
                last = exc
                if attempt < self.retries:
                    time.sleep(self.retry_wait)
        raise DenoiserUnavailableError(
            f"backend unreachable after {self.retries + 1} attempts: {last}"
        ) from last

    def post(self, path: str, payload: dict) -> dict:
        url = self.base_url + path
        return self._attempt(
            lambda: self._session.post(url, json=payload, timeout=self.timeout)
        )

    def get(self, path: str) -> dict:
        url = self.base_url + path
        return self._attempt(lambda: self._session.get(url, timeout=self.timeout))


class ReplayTransport:
    """Serves exchanges recorded earlier; method and path must match."""

    def __init__(self, exchanges: list[dict]):
        self._queue = list(exchanges)
        self._cursor = 0

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "ReplayTransport":
        with open(os.fspath(path), "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    @classmethod
    def from_dir(cls, directory: str | os.PathLike) -> "ReplayTransport":
        """Load a directory of one-exchange JSON files in name order."""
        directory = os.fspath(directory)
        exchanges = []
        for name in sorted(os.listdir(directory)):
            if name.endswith(".json"):
                with open(os.path.join(directory, name), "r", encoding="utf-8") as fh:
                    exchanges.append(json.load(fh))
        return cls(exchanges)

    def _next(self, method: str, path: str) -> dict:
        if self._cursor >= len(self._queue):
            raise BackendError(f"replay exhausted at {method} {path}")
        entry = self._queue[self._cursor]
        self._cursor += 1
        if entry["method"] != method or entry["path"] != path:
            raise BackendError(
                f"replay expected {entry['method']} {entry['path']}, "
                f"got {method} {path}"
            )
        return entry["response"]

    def post(self, path: str, payload: dict) -> dict:
        return self._next("POST", path)

    def get(self, path: str) -> dict:
        return self._next("GET", path)


class RecordingTransport:
    """Pass-through transport that captures exchanges for replay files."""

    def __init__(self, inner: Transport):
        self.inner = inner
        self.exchanges: list[dict] = []

    def post(self, path: str, payload: dict) -> dict:
        response = self.inner.post(path, payload)
        self.exchanges.append(
            {"method": "POST", "path": path, "request": payload, "response": response}
        )
        return response

    def get(self, path: str) -> dict:
        response = self.inner.get(path)
        self.exchanges.append(
            {"method": "GET", "path": path, "request": None, "response": response}
        )
        return response

    def save(self, path: str | os.PathLike) -> None:
        with open(os.fspath(path), "w", encoding="utf-8") as fh:
            json.dump(self.exchanges, fh)

    def save_dir(self, directory: str | os.PathLike) -> None:
        directory = os.fspath(directory)
        os.makedirs(directory, exist_ok=True)
        for i, entry in enumerate(self.exchanges):
            name = f"{i:04d}-{entry['method']}-{entry['path'].strip('/').replace('/', '_')}.json"
            with open(os.path.join(directory, name), "w", encoding="utf-8") as fh:
                json.dump(entry, fh)


class RemoteDenoiser:
    """Denoiser speaking the wire protocol; satisfies the sampler contract.

    Responses must echo the query latent's shape in both eps tensors and
    be finite; dimension problems raise ShapeMismatchError, anything
    structurally wrong raises BackendError.
    """

    def __init__(self, transport: Transport):
        self.transport = transport

    def query(
        self, latent: np.ndarray, timestep: int, conditioning: ViewConditioning
    ) -> DenoiserOutput:
        request = build_denoise_request(latent, timestep, conditioning)
        response = self.transport.post("/denoise", request)
        for key in ("eps_cond", "eps_uncond"):
            if key not in response:
                raise BackendError(f"denoise response missing {key!r}")
        eps_cond = decode_tensor(response["eps_cond"])
        eps_uncond = decode_tensor(response["eps_uncond"])
        shape = tuple(np.asarray(latent).shape)
        if eps_cond.shape != shape or eps_uncond.shape != shape:
            raise ShapeMismatchError(
                f"server returned shapes {eps_cond.shape}/{eps_uncond.shape} "
                f"for latent {shape}"
            )
        if not (np.isfinite(eps_cond).all() and np.isfinite(eps_uncond).all()):
            raise BackendError("server returned non-finite noise predictions")
        return DenoiserOutput(eps_cond=eps_cond, eps_uncond=eps_uncond)

    def decode_latent(self, latent: np.ndarray) -> np.ndarray:
        """Ask the server's decoder for the RGB image of one latent grid."""
        response = self.transport.post("/decode", {"latent": encode_tensor(latent)})
        if "image" not in response:
            raise BackendError("decode response missing 'image'")
        image = decode_tensor(response["image"])
        if image.ndim != 3 or image.shape[2] != 3:
            raise BackendError(f"decoded image has shape {image.shape}, want (H, W, 3)")
        return image

    def register_image(self, png_bytes: bytes) -> str:
        """Upload a user-supplied guidance image; returns its handle."""
        response = self.transport.post(
            "/register-image",
            {"png": base64.b64encode(png_bytes).decode("ascii")},
        )
        handle = response.get("handle")
        if not isinstance(handle, str) or not handle:
            raise BackendError("register-image response lacks a handle string")
        return handle

    def health(self) -> dict:
        info = self.transport.get("/health")
        if info.get("status") != "ok":
            raise BackendError(f"backend unhealthy: {info}")
        return info


def remote_denoiser(endpoint: str, timeout: float = 60.0, retries: int = 2) -> RemoteDenoiser:
    """Build a client for ``endpoint`` and verify it is alive."""
    client = RemoteDenoiser(HttpTransport(endpoint, timeout=timeout, retries=retries))
    client.health()
    return client


def fetch_guidance_image(
    transport: Transport, prompt: str, seed: int = 0, size: int = 512
) -> tuple[str, bytes]:
    """Generate the shared guidance image; returns (handle, png bytes).

    The handle is what denoise requests reference; the bytes are kept for
    artifact export. One call serves all views, so the prompt passed here
    should be the base prompt without any direction clause.
    """
    response = transport.post(
        "/txt2img",
        {"prompt": prompt, "seed": int(seed), "width": int(size), "height": int(size)},
    )
    for key in ("handle", "png"):
        if key not in response:
            raise BackendError(f"txt2img response missing {key!r}")
    handle = response["handle"]
    if not isinstance(handle, str) or not handle:
        raise BackendError("txt2img handle must be a non-empty string")
    try:
        png = base64.b64decode(response["png"], validate=True)
    except (binascii.Error, ValueError) as exc:
        raise BadBase64Error(f"txt2img png is not valid base64: {exc}") from exc
    return handle, png
