"""Deterministic stand-in for a depth-conditioned latent diffusion model.

Every output is a pure function of (server seed, request), so repeated
identical requests agree bitwise, which comfortably covers the 1e-3
reproducibility tolerance real GPU backends are held to. The noise
prediction is consistent with the linear-beta forward process: it points
at a fixed "scene" derived from the prompt, the guidance-image features
and the depth control, so a standard DDIM loop driven by this model
converges instead of wandering off.

The conditional branch sees the full prompt and the image features at
the request's image scale; the unconditional branch is computed with an
empty prompt and zeroed image features, keeping only the depth control.
"""

from __future__ import annotations

import hashlib
import io

import numpy as np
from PIL import Image

TRAIN_STEPS = 1000
_BETAS = np.linspace(1.0e-4, 0.02, TRAIN_STEPS, dtype=np.float64)
_ALPHA_BARS = np.concatenate([[1.0], np.cumprod(1.0 - _BETAS)])

FEATURE_GRID = 8


class ModelError(ValueError):
    """Input the model cannot consume (undecodable image, bad timestep)."""


def _stable_rng(*parts) -> np.random.Generator:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def image_features(png_bytes: bytes) -> np.ndarray:
    """Pool an image down to an (8, 8, 3) grid in [0, 1].

    This is the whole "adapter encoding" of the stub: enough structure
    that different guidance images produce different textures, cheap
    enough to run everywhere.
    """
    try:
        img = Image.open(io.BytesIO(png_bytes))
        img = img.convert("RGB").resize((FEATURE_GRID, FEATURE_GRID), Image.BILINEAR)
    except Exception as exc:
        raise ModelError(f"cannot decode guidance image: {exc}") from exc
    return np.asarray(img, dtype=np.float64) / 255.0


def _spread(plane: np.ndarray, width: int, height: int) -> np.ndarray:
    """Nearest-upsample a small float grid to (height, width)."""
    as_img = Image.fromarray(np.float32(plane), mode="F")
    return np.asarray(
        as_img.resize((width, height), Image.NEAREST), dtype=np.float64
    )


class StubModel:
    def __init__(self, seed: int = 0):
        self.seed = int(seed)

    def alpha_bar(self, timestep: int) -> float:
        if not isinstance(timestep, int) or isinstance(timestep, bool):
            raise ModelError(f"timestep must be an integer, got {timestep!r}")
        if not 1 <= timestep <= TRAIN_STEPS:
            raise ModelError(f"timestep {timestep} outside [1, {TRAIN_STEPS}]")
        return float(_ALPHA_BARS[timestep])

    def txt2img(self, prompt: str, seed: int, width: int, height: int) -> bytes:
        """Low-frequency color blobs seeded by (server seed, prompt, seed)."""
        rng = _stable_rng("txt2img", self.seed, seed, prompt, width, height)
        small = rng.uniform(0.0, 255.0, (FEATURE_GRID, FEATURE_GRID, 3))
        img = Image.fromarray(small.astype(np.uint8)).resize(
            (width, height), Image.BILINEAR
        )
        buf = io.BytesIO()
        img.save(buf, "PNG")
        return buf.getvalue()

    def _scene(
        self,
        shape: tuple[int, ...],
        prompt: str,
        features: np.ndarray | None,
        image_scale: float,
        depth: np.ndarray | None,
    ) -> np.ndarray:
        """The clean latent this branch believes in, clipped to [0, 1]."""
        h, w, c = shape
        rng = _stable_rng("scene", self.seed, prompt)
        base = rng.uniform(0.3, 0.7, (1, 1, c))
        grain = 0.05 * rng.standard_normal(shape)
        scene = np.broadcast_to(base, shape) + grain
        if features is not None and image_scale != 0.0:
            planes = [_spread(features[:, :, i], w, h) for i in range(3)]
            pattern = np.stack([planes[i % 3] for i in range(c)], axis=2)
            scene = scene + image_scale * 0.25 * (pattern - 0.5)
        if depth is not None:
            scene = scene + 0.1 * (depth - 0.5)[:, :, None]
        return np.clip(scene, 0.0, 1.0)

    def denoise(
        self,
        latent: np.ndarray,
        timestep: int,
        prompt: str,
        features: np.ndarray | None,
        image_scale: float,
        depth: np.ndarray | None,
    ) -> tuple[np.ndarray, np.ndarray]:
        ab = self.alpha_bar(timestep)
        scale = np.sqrt(ab)
        spread = np.sqrt(1.0 - ab)
        cond = self._scene(latent.shape, prompt, features, image_scale, depth)
        uncond = self._scene(latent.shape, "", None, 0.0, depth)
        eps_cond = (latent - scale * cond) / spread
        eps_uncond = (latent - scale * uncond) / spread
        return eps_cond, eps_uncond

    def decode(self, latent: np.ndarray) -> np.ndarray:
        """Latent to RGB: clamp the first three channels, upsample 8x."""
        h, w, c = latent.shape
        if c >= 3:
            rgb = latent[:, :, :3]
        else:
            rgb = np.repeat(latent[:, :, :1], 3, axis=2)
        rgb = np.clip(rgb, 0.0, 1.0)
        return np.repeat(np.repeat(rgb, 8, axis=0), 8, axis=1)
