"""Conditioning math: decoupled cross-attention and direction prompts.

The attention here is the reference semantics a denoising backend must
honor: plain scaled dot-product over token sequences, with an image
branch that has its own key/value projections and whose output is added
after scaling. Everything is small dense numpy (dozens of tokens); it
documents the contract rather than running inside a network.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .camera import CameraPose
from .exceptions import DimensionMismatchError

FRONT_HALF_ANGLE = 45.0
BACK_MIN_ANGLE = 135.0
TOP_MIN_ELEVATION = 60.0

PROMPT_TEMPLATE = "{base}, from {label} view"

DIRECTION_LABELS = ("front", "side", "back", "top", "bottom")


@dataclass(frozen=True)
class FeatureSeq:
    """A token sequence (L x D) with a tag saying where it came from."""

    tokens: np.ndarray
    origin: str = "text"  # text | image | direction

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.float64)
        if tokens.ndim != 2 or tokens.shape[0] < 1:
            raise DimensionMismatchError(
                f"feature sequence must be (L >= 1, D), got {tokens.shape}"
            )
        if not np.isfinite(tokens).all():
            raise DimensionMismatchError("feature sequence contains non-finite values")
        object.__setattr__(self, "tokens", tokens)

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


@dataclass
class AttentionWeights:
    """Projections for one decoupled cross-attention block.

    ``w_q`` maps hidden tokens to queries; ``w_k``/``w_v`` project the
    text-and-direction context, ``w_k_img``/``w_v_img`` the image context.
    Both key projections must land in the query dimension, and both value
    projections in a common output width so the branches can be summed.
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_k_img: np.ndarray
    w_v_img: np.ndarray

    def __post_init__(self):
        self.w_q = np.asarray(self.w_q, dtype=np.float64)
        self.w_k = np.asarray(self.w_k, dtype=np.float64)
        self.w_v = np.asarray(self.w_v, dtype=np.float64)
        self.w_k_img = np.asarray(self.w_k_img, dtype=np.float64)
        self.w_v_img = np.asarray(self.w_v_img, dtype=np.float64)
        d = self.w_q.shape[1]
        if d < 1:
            raise DimensionMismatchError("query projection must have width >= 1")
        if self.w_k.shape[1] != d or self.w_k_img.shape[1] != d:
            raise DimensionMismatchError(
                "key projections must match the query width "
                f"(q {d}, k {self.w_k.shape[1]}, k_img {self.w_k_img.shape[1]})"
            )
        if self.w_v.shape[1] != self.w_v_img.shape[1]:
            raise DimensionMismatchError(
                "text and image value projections must agree so branch outputs sum"
            )

    @staticmethod
    def random(
        rng: np.random.Generator,
        hidden_dim: int,
        text_dim: int,
        image_dim: int,
        head_dim: int,
        out_dim: int | None = None,
    ) -> "AttentionWeights":
        out_dim = head_dim if out_dim is None else out_dim
        scale = 1.0 / np.sqrt(hidden_dim)
        return AttentionWeights(
            w_q=rng.standard_normal((hidden_dim, head_dim)) * scale,
            w_k=rng.standard_normal((text_dim, head_dim)) * scale,
            w_v=rng.standard_normal((text_dim, out_dim)) * scale,
            w_k_img=rng.standard_normal((image_dim, head_dim)) * scale,
            w_v_img=rng.standard_normal((image_dim, out_dim)) * scale,
        )


@dataclass
class GuidanceBundle:
    """Everything the sampler conditions on: shared image features, one
    direction sequence per view, and the two guidance scales."""

    c_img: FeatureSeq
    c_view: Sequence[FeatureSeq] = field(default_factory=list)
    image_scale: float = 0.6
    cfg_scale: float = 12.0

    def __post_init__(self):
        if self.image_scale < 0.0:
            raise DimensionMismatchError(
                f"image scale must be >= 0, got {self.image_scale}"
            )
        self.c_view = list(self.c_view)

    def view_features(self, view_index: int) -> FeatureSeq:
        return self.c_view[view_index]


def softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    """Row-stable softmax (max subtracted before exponentiation)."""
    scores = np.asarray(scores, dtype=np.float64)
    shifted = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def attention_scores(queries: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """softmax(Q K^T / sqrt(d)); every row sums to one."""
    queries = np.asarray(queries, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    if queries.shape[1] != keys.shape[1]:
        raise DimensionMismatchError(
            f"query width {queries.shape[1]} != key width {keys.shape[1]}"
        )
    d = queries.shape[1]
    return softmax(queries @ keys.T / np.sqrt(d), axis=1)


def cross_attention(
    z: np.ndarray,
    context: FeatureSeq,
    w_q: np.ndarray,
    w_k: np.ndarray,
    w_v: np.ndarray,
) -> np.ndarray:
    """One pass of ``z`` tokens attending over a context sequence."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise DimensionMismatchError(f"query sequence must be 2-d, got {z.shape}")
    if z.shape[1] != w_q.shape[0]:
        raise DimensionMismatchError(
            f"hidden width {z.shape[1]} != w_q input width {w_q.shape[0]}"
        )
    if context.dim != w_k.shape[0] or context.dim != w_v.shape[0]:
        raise DimensionMismatchError(
            f"context width {context.dim} does not fit key/value projections"
        )
    tokens = context.tokens
    return attention_scores(z @ w_q, tokens @ w_k) @ (tokens @ w_v)


def decoupled_attention(
    z: np.ndarray,
    c_view: FeatureSeq,
    c_img: FeatureSeq,
    weights: AttentionWeights,
    image_scale: float,
) -> np.ndarray:
    """Direction/text branch plus ``image_scale`` times the image branch.

    The image branch shares the query projection but has its own keys and
    values; the scale multiplies only that branch's output, so scale 0
    returns exactly the first branch.
    """
    view_out = cross_attention(z, c_view, weights.w_q, weights.w_k, weights.w_v)
    image_out = cross_attention(
        z, c_img, weights.w_q, weights.w_k_img, weights.w_v_img
    )
    return view_out + image_scale * image_out


def attend_for_view(
    z: np.ndarray,
    bundle: GuidanceBundle,
    view_index: int,
    weights: AttentionWeights,
) -> np.ndarray:
    """decoupled_attention with the bundle sliced to one view."""
    return decoupled_attention(
        z, bundle.view_features(view_index), bundle.c_img, weights, bundle.image_scale
    )


def direction_label(pose: CameraPose) -> str:
    """Coarse direction word for a camera pose.

    Elevation wins first (at or past +/-60 degrees the equatorial words
    stop meaning anything), then azimuth splits the band. Boundary angles
    stay with the inner bin: 45 reads "front", 135 reads "back".
    """
    if pose.elevation >= TOP_MIN_ELEVATION:
        return "top"
    if pose.elevation <= -TOP_MIN_ELEVATION:
        return "bottom"
    az = abs(pose.azimuth)
    if az <= FRONT_HALF_ANGLE:
        return "front"
    if az < BACK_MIN_ANGLE:
        return "side"
    return "back"


def build_direction_prompt(base_prompt: str, pose: CameraPose) -> str:
    """Append the per-view direction clause; byte layout is fixed because
    backends key caches on the exact prompt string."""
    if not base_prompt:
        raise ValueError("base prompt must be non-empty")
    return PROMPT_TEMPLATE.format(base=base_prompt, label=direction_label(pose))
