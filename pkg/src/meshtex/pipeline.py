"""End-to-end texturing runs: load, sample, bake, export, report.

The pixel-space bake re-rasterizes at the decoded view resolution rather
than upsampling the latent atlas, so the exported texture is built from
what the decoder actually produced. Toy mode decodes by identity (the
latents are already RGB) and is the supported way to validate an install
without any backend.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from PIL import Image

from .atlas import (
    TextureAtlas,
    aggregate,
    atlas_for_mesh,
    backproject,
    export_debug_pngs,
    export_png,
    voronoi_fill,
)
from .backend import RemoteDenoiser, fetch_guidance_image, remote_denoiser
from .camera import ViewSchedule, stock_schedule
from .config import RunConfig
from .diffusion import ToyDenoiser, ViewConditioning, make_schedule, sync_sample
from .exceptions import ConfigError, MeshtexError
from .fixtures import atlas_from_values, builtin_mesh, checkerboard
from .geometry import (
    OrientationRemap,
    apply_orientation,
    export_obj,
    load_obj,
    normalize_to_unit_sphere,
)
from .guidance import build_direction_prompt
from .raster import (
    RasterFrame,
    depth_png_bytes,
    export_depth_png,
    rasterize,
    sample_atlas,
)

BUILTIN_PREFIX = "builtin:"


@dataclass
class RunReport:
    """What a run did: stage timings, coverage, artifacts, echoed config."""

    timings: dict = field(default_factory=dict)
    coverage: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    psnr_db: float | None = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)


def psnr(
    a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None, peak: float = 1.0
) -> float:
    """Peak signal-to-noise ratio in dB; inf when the inputs agree exactly."""
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if mask is not None:
        diff = diff[mask]
    if diff.size == 0:
        raise ValueError("psnr over an empty selection")
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def bake_views(
    frames: Sequence[RasterFrame],
    grids: Sequence[np.ndarray],
    template: TextureAtlas,
    weight_exponent: float,
) -> TextureAtlas:
    """Back-project every view into a fresh copy of ``template`` (no fill).

    The returned atlas's ``valid`` mask is exactly the texels visible from
    at least one view, which downstream comparisons mask by.
    """
    scatters = [
        backproject(fr, grid, weight_exponent, template.width, template.height)
        for fr, grid in zip(frames, grids)
    ]
    return aggregate(template.fresh(), scatters)


@contextmanager
def _stage(name: str, timings: dict):
    start = time.perf_counter()
    try:
        yield
    except (MeshtexError, OSError, ValueError) as exc:
        raise type(exc)(f"{name} stage: {exc}") from exc
    finally:
        timings[name] = time.perf_counter() - start


def _load_mesh(config: RunConfig):
    if config.mesh.startswith(BUILTIN_PREFIX):
        name = config.mesh[len(BUILTIN_PREFIX):]
        try:
            return builtin_mesh(name)
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc
    return load_obj(config.mesh)


def _save_view_png(grid: np.ndarray, path: str) -> None:
    img = np.floor(np.clip(grid, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(img).save(path)


def run(config: RunConfig) -> RunReport:
    """Execute one texturing run and write all artifacts under config.out.

    Stages: load/orient/normalize, view+noise schedule, conditioning
    (mode-dependent), synchronized sampling, decode, pixel bake, export.
    Toy mode additionally reports PSNR against a direct bake of the toy
    targets through the same raster/atlas path.
    """
    config.validate()
    report = RunReport(config=config.echo())
    timings = report.timings

    with _stage("load", timings):
        mesh = _load_mesh(config)
        remap = OrientationRemap.from_spec(config.orient)
        mesh = apply_orientation(mesh, remap)
        mesh, transform = normalize_to_unit_sphere(mesh)

    with _stage("schedule", timings):
        views = stock_schedule(
            distance=config.distance, fov_y=config.fov_y, angles=config.angles()
        )
        sched = make_schedule(ddim_count=config.ddim_count)
        latent_frames = [rasterize(mesh, pose, config.latent_size) for pose in views]

    targets: list[np.ndarray] | None = None
    client: RemoteDenoiser | None = None
    with _stage("conditioning", timings):
        if config.mode == "toy":
            board = checkerboard(config.latent_atlas)
            targets = [
                sample_atlas(atlas_from_values(board), fr, "nearest")
                for fr in latent_frames
            ]
            denoiser = ToyDenoiser(targets, sched)
            conditionings = [
                ViewConditioning(view_index=v) for v in range(len(views))
            ]
            channels = 3
            guidance_png = None
        else:
            client = remote_denoiser(config.endpoint)
            if config.mode == "text":
                handle, guidance_png = fetch_guidance_image(
                    client.transport, config.prompt, seed=config.seed
                )
            else:  # image mode: user image, no txt2img round trip
                with open(config.image, "rb") as fh:
                    guidance_png = fh.read()
                handle = client.register_image(guidance_png)
            conditionings = [
                ViewConditioning(
                    view_index=v,
                    prompt=build_direction_prompt(config.prompt, views[v]),
                    depth_png=depth_png_bytes(latent_frames[v]),
                    image_guidance_id=handle,
                    image_scale=config.image_scale,
                )
                for v in range(len(views))
            ]
            denoiser = client
            channels = 4

    with _stage("sample", timings):
        result = sync_sample(
            mesh,
            views,
            sched,
            denoiser,
            conditionings,
            warp_steps=config.warp_steps,
            seed=config.seed,
            cfg_scale=config.cfg_scale,
            latent_size=config.latent_size,
            latent_atlas_size=config.latent_atlas,
            channels=channels,
            margin=config.margin,
            weight_exponent=config.weight_exponent,
            eta=config.eta,
            workers=config.workers,
            frames=latent_frames,
        )

    with _stage("decode", timings):
        if config.mode == "toy":
            decoded = [view.grid for view in result.views]
        else:
            decoded = [client.decode_latent(view.grid) for view in result.views]

    with _stage("bake", timings):
        bake_size = decoded[0].shape[0]
        if bake_size == config.latent_size:
            bake_frames = result.frames
        else:
            bake_frames = [rasterize(mesh, pose, bake_size) for pose in views]
        template = atlas_for_mesh(
            mesh, config.pixel_atlas, config.pixel_atlas, 3, margin=config.margin
        )
        aggregated = bake_views(
            bake_frames, decoded, template, config.weight_exponent
        )
        filled = voronoi_fill(aggregated)
        report.coverage = {
            "view_foreground_px": [fr.foreground_count() for fr in bake_frames],
            "chart_texels": int(template.chart_mask.sum()),
            "baked_texels": int(aggregated.valid.sum()),
            "baked_chart_fraction": float(
                (aggregated.valid & template.chart_mask).sum()
                / max(1, template.chart_mask.sum())
            ),
        }

    if targets is not None:
        with _stage("verify", timings):
            oracle = voronoi_fill(
                bake_views(bake_frames, targets, template, config.weight_exponent)
            )
            report.psnr_db = psnr(
                filled.values, oracle.values, mask=aggregated.valid
            )

    with _stage("export", timings):
        out = config.out
        views_dir = os.path.join(out, "views")
        depth_dir = os.path.join(out, "depth")
        os.makedirs(views_dir, exist_ok=True)
        os.makedirs(depth_dir, exist_ok=True)

        texture_path = os.path.join(out, "texture.png")
        export_png(filled, texture_path)
        export_debug_pngs(filled, os.path.join(out, "debug"))
        obj_path = os.path.join(out, "mesh.obj")
        export_obj(mesh, obj_path, texture_filename="texture.png", transform=transform)

        view_paths = []
        for v, grid in enumerate(decoded):
            vp = os.path.join(views_dir, f"view_{v:02d}.png")
            _save_view_png(grid, vp)
            export_depth_png(bake_frames[v], os.path.join(depth_dir, f"view_{v:02d}.png"))
            view_paths.append(vp)

        report.outputs = {
            "texture": texture_path,
            "mesh": obj_path,
            "mtl": os.path.splitext(obj_path)[0] + ".mtl",
            "views": view_paths,
            "depth_dir": depth_dir,
            "report": os.path.join(out, "report.json"),
        }
        if config.mode == "text" and guidance_png is not None:
            gp = os.path.join(out, "guidance.png")
            with open(gp, "wb") as fh:
                fh.write(guidance_png)
            report.outputs["guidance"] = gp

        with open(report.outputs["report"], "w", encoding="utf-8") as fh:
            fh.write(report.to_json())

    return report
