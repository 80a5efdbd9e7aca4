"""DDIM sampling synchronized across views through a shared latent atlas.

Timesteps are 1-based: t=0 is the clean boundary and ``alpha_bar(0) == 1``.
Diffusion math runs in float64 throughout; the x0 reconstruction divides
by sqrt(alpha_bar), which is ~6e-3 at the noisiest step, small enough
that float32 visibly loses digits.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .atlas import TextureAtlas, aggregate, atlas_for_mesh, backproject, voronoi_fill
from .camera import ViewSchedule
from .exceptions import (
    BadRangeError,
    BadTimestepOrderError,
    ShapeMismatchError,
    UnknownViewError,
)
from .geometry import Mesh
from .raster import RasterFrame, rasterize, sample_atlas

DEFAULT_TRAIN_STEPS = 1000
DEFAULT_BETA_START = 1.0e-4
DEFAULT_BETA_END = 0.02
DEFAULT_DDIM_COUNT = 30

# Hard ceiling on |latent| during sampling. States are noised mixtures of
# roughly unit-scale signals, so magnitudes past ten sigmas mean the loop
# is feeding on garbage (bad backend output, wrong schedule).
LATENT_ENVELOPE = 10.0


@dataclass(frozen=True)
class NoiseSchedule:
    """Forward-process constants plus the strided sampling timesteps.

    ``alpha_bars`` has length T+1 and is indexed directly by timestep;
    ``ddim_steps`` is strictly decreasing with the smallest step last.
    """

    betas: np.ndarray
    alpha_bars: np.ndarray
    ddim_steps: np.ndarray

    @property
    def num_train_steps(self) -> int:
        return self.betas.shape[0]

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.num_train_steps:
            raise BadRangeError(f"timestep {t} outside [0, {self.num_train_steps}]")
        return float(self.alpha_bars[t])


def ddim_timesteps(num_train_steps: int, count: int) -> np.ndarray:
    """Evenly strided timesteps t_i = 1 + i*(T//count), noisiest first."""
    if not 1 <= count <= num_train_steps:
        raise BadRangeError(f"step count {count} outside [1, {num_train_steps}]")
    stride = num_train_steps // count
    steps = 1 + stride * np.arange(count, dtype=np.int64)
    return steps[::-1].copy()


def make_schedule(
    num_train_steps: int = DEFAULT_TRAIN_STEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
    ddim_count: int = DEFAULT_DDIM_COUNT,
) -> NoiseSchedule:
    """Linear beta ramp with cumulative alpha products and DDIM stride."""
    if num_train_steps < 1:
        raise BadRangeError(f"need at least one train step, got {num_train_steps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise BadRangeError(
            f"betas must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
        )
    betas = np.linspace(beta_start, beta_end, num_train_steps, dtype=np.float64)
    alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(
        betas=betas,
        alpha_bars=alpha_bars,
        ddim_steps=ddim_timesteps(num_train_steps, ddim_count),
    )


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what}: {a.shape} vs {b.shape}")


def add_noise(
    x0: np.ndarray, eps: np.ndarray, t: int, sched: NoiseSchedule
) -> np.ndarray:
    """Forward process: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _check_same_shape(x0, eps, "add_noise x0 vs eps")
    ab = sched.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def ddim_sigma(sched: NoiseSchedule, t: int, t_prev: int, eta: float) -> float:
    """Stochasticity of one t -> t_prev transition; zero when eta is zero."""
    if eta == 0.0:
        return 0.0
    ab_t = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(t_prev)
    return float(
        eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_prev)
    )


def ddim_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    t_prev: int,
    sched: NoiseSchedule,
    eta: float = 0.0,
    noise: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One DDIM transition; returns (x_prev, x0_pred).

    x0_pred = (x_t - sqrt(1-ab_t) eps) / sqrt(ab_t)
    x_prev  = sqrt(ab_prev) x0_pred + sqrt(1 - ab_prev - sigma^2) eps + sigma z

    ``noise`` supplies z and is required exactly when sigma > 0; keeping
    the draw outside lets callers own RNG stream ordering.
    """
    if not (0 <= t_prev < t <= sched.num_train_steps):
        raise BadTimestepOrderError(
            f"need T >= t > t_prev >= 0, got t={t}, t_prev={t_prev}"
        )
    if not 0.0 <= eta <= 1.0:
        raise BadRangeError(f"eta must lie in [0, 1], got {eta}")
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    _check_same_shape(x_t, eps_hat, "ddim step x_t vs eps_hat")

    ab_t = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(t_prev)
    x0_pred = (x_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    sigma = ddim_sigma(sched, t, t_prev, eta)
    x_prev = np.sqrt(ab_prev) * x0_pred + np.sqrt(1.0 - ab_prev - sigma * sigma) * eps_hat
    if sigma > 0.0:
        if noise is None:
            raise BadRangeError("eta > 0 requires a noise array for the sigma term")
        noise = np.asarray(noise, dtype=np.float64)
        _check_same_shape(x_t, noise, "ddim step x_t vs noise")
        x_prev = x_prev + sigma * noise
    return x_prev, x0_pred


@dataclass(frozen=True)
class DenoiserOutput:
    """The two noise predictions one query returns."""

    eps_cond: np.ndarray
    eps_uncond: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "eps_cond", np.asarray(self.eps_cond, dtype=np.float64)
        )
        object.__setattr__(
            self, "eps_uncond", np.asarray(self.eps_uncond, dtype=np.float64)
        )
        _check_same_shape(self.eps_cond, self.eps_uncond, "eps_cond vs eps_uncond")


def cfg_combine(out: DenoiserOutput, scale: float) -> np.ndarray:
    """Classifier-free guidance: uncond + scale * (cond - uncond)."""
    return out.eps_uncond + scale * (out.eps_cond - out.eps_uncond)


@dataclass(frozen=True)
class ViewConditioning:
    """Per-view references the denoiser conditions on.

    ``depth_png`` and ``image_guidance_id`` are opaque to the sampler;
    remote backends consume them, the toy denoiser ignores everything
    but the view index.
    """

    view_index: int
    prompt: str = ""
    negative_prompt: str = ""
    depth_png: bytes | None = None
    image_guidance_id: str | None = None
    image_scale: float = 0.0


class Denoiser(Protocol):
    """Noise predictor; must tolerate concurrent queries."""

    def query(
        self, latent: np.ndarray, timestep: int, conditioning: ViewConditioning
    ) -> DenoiserOutput: ...


class ToyDenoiser:
    """Closed-form denoiser that always points at a fixed per-view target.

    eps = (x_t - sqrt(ab_t) target) / sqrt(1 - ab_t) makes the x0
    reconstruction recover the target exactly, and the same array is
    returned for both branches so guidance is neutral at any scale. A
    correct sampler must therefore converge to the targets from any
    starting noise, which is what makes this useful as an oracle.
    """

    def __init__(self, target_views: Sequence[np.ndarray], sched: NoiseSchedule):
        self.targets = [np.asarray(t, dtype=np.float64) for t in target_views]
        self.sched = sched

    def query(
        self, latent: np.ndarray, timestep: int, conditioning: ViewConditioning
    ) -> DenoiserOutput:
        v = conditioning.view_index
        if not 0 <= v < len(self.targets):
            raise UnknownViewError(f"view {v} has no target (have {len(self.targets)})")
        target = self.targets[v]
        latent = np.asarray(latent, dtype=np.float64)
        _check_same_shape(latent, target, "toy denoiser latent vs target")
        ab = self.sched.alpha_bar(timestep)
        eps = (latent - np.sqrt(ab) * target) / np.sqrt(1.0 - ab)
        return DenoiserOutput(eps_cond=eps, eps_uncond=eps)


@dataclass
class ViewLatent:
    """One view's grid at a given point of the trajectory."""

    view_id: int
    timestep: int
    grid: np.ndarray


@dataclass
class SyncSampleResult:
    """Final clean views, the last filled latent atlas, and the frames
    the run rasterized (reusable for an identity-decode pixel bake)."""

    views: list[ViewLatent]
    atlas: TextureAtlas | None
    frames: list[RasterFrame]


def _check_envelope(grid: np.ndarray, view: int, t: int) -> None:
    if not np.isfinite(grid).all() or np.abs(grid).max() > LATENT_ENVELOPE:
        raise BadRangeError(
            f"view {view} latents left the {LATENT_ENVELOPE}-sigma envelope "
            f"at t={t}; the denoiser output is diverging"
        )


def sync_sample(
    mesh: Mesh,
    views: ViewSchedule,
    sched: NoiseSchedule,
    denoiser: Denoiser,
    conditionings: Sequence[ViewConditioning] | None = None,
    warp_steps: int = 24,
    seed: int = 0,
    *,
    cfg_scale: float = 12.0,
    latent_size: int = 64,
    latent_atlas_size: int = 256,
    channels: int = 3,
    margin: int = 4,
    weight_exponent: float = 2.0,
    eta: float = 0.0,
    workers: int = 1,
    frames: Sequence[RasterFrame] | None = None,
) -> SyncSampleResult:
    """DDIM over all views with x0 shared through a latent atlas.

    Every view is rasterized once at latent resolution and seeded with
    its own noise stream (spawned from ``seed``, so runs are bitwise
    reproducible). Each step queries the denoiser per view, combines
    guidance, and takes a DDIM step; during the first ``warp_steps``
    steps the x0 predictions are additionally back-projected into a
    fresh latent atlas, blended, Voronoi-filled, resampled per view and
    re-noised to t_prev with the step's own eps_hat, replacing the
    foreground of the stepped latents. Background pixels always keep
    the plain DDIM update, and with warp_steps=0 the atlas is never
    touched so the run equals independent per-view DDIM exactly.

    Atlas reduction walks views in schedule order no matter how many
    workers run the denoiser queries, keeping parallel runs bitwise
    equal to serial ones.
    """
    n_views = len(views)
    if conditionings is None:
        conditionings = [ViewConditioning(view_index=v) for v in range(n_views)]
    if len(conditionings) != n_views:
        raise ShapeMismatchError(
            f"{n_views} views but {len(conditionings)} conditionings"
        )
    if not 0 <= warp_steps <= len(sched.ddim_steps):
        raise BadRangeError(
            f"warp_steps {warp_steps} outside [0, {len(sched.ddim_steps)}]"
        )
    if workers < 1:
        raise BadRangeError(f"workers must be >= 1, got {workers}")

    if frames is None:
        frames = [rasterize(mesh, pose, latent_size) for pose in views]
    else:
        frames = list(frames)
        if len(frames) != n_views or any(fr.size != latent_size for fr in frames):
            raise ShapeMismatchError(
                "precomputed frames must match the view count and latent size"
            )
    latent_atlas = atlas_for_mesh(
        mesh, latent_atlas_size, latent_atlas_size, channels, margin=margin
    )

    streams = np.random.SeedSequence(seed).spawn(n_views)
    rngs = [np.random.default_rng(s) for s in streams]
    x = [rng.standard_normal((latent_size, latent_size, channels)) for rng in rngs]

    timesteps = sched.ddim_steps
    prevs = np.concatenate([timesteps[1:], [0]])
    filled: TextureAtlas | None = None

    for i, (t, t_prev) in enumerate(zip(timesteps, prevs)):
        t, t_prev = int(t), int(t_prev)

        def query_one(v: int) -> DenoiserOutput:
            return denoiser.query(x[v], t, conditionings[v])

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outputs = list(pool.map(query_one, range(n_views)))
        else:
            outputs = [query_one(v) for v in range(n_views)]

        eps_hat = [cfg_combine(out, cfg_scale) for out in outputs]
        x_prev: list[np.ndarray] = []
        x0_pred: list[np.ndarray] = []
        for v in range(n_views):
            noise = None
            if eta > 0.0 and ddim_sigma(sched, t, t_prev, eta) > 0.0:
                noise = rngs[v].standard_normal(x[v].shape)
            xp, x0 = ddim_step(x[v], eps_hat[v], t, t_prev, sched, eta, noise)
            x_prev.append(xp)
            x0_pred.append(x0)

        if i < warp_steps:
            scatters = [
                backproject(
                    frames[v], x0_pred[v], weight_exponent,
                    latent_atlas.width, latent_atlas.height,
                )
                for v in range(n_views)
            ]
            filled = voronoi_fill(aggregate(latent_atlas.fresh(), scatters))
            for v in range(n_views):
                synced = sample_atlas(filled, frames[v], "nearest")
                renoised = add_noise(synced, eps_hat[v], t_prev, sched)
                x_prev[v] = np.where(
                    frames[v].mask[:, :, None], renoised, x_prev[v]
                )

        for v in range(n_views):
            _check_envelope(x_prev[v], v, t_prev)
            x[v] = x_prev[v]

    final = [ViewLatent(view_id=v, timestep=0, grid=x[v]) for v in range(n_views)]
    return SyncSampleResult(views=final, atlas=filled, frames=frames)
