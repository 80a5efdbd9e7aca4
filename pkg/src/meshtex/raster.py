"""Software rasterizer producing per-view buffers for warping and baking.

Pixel convention: integer pixel (px, py) has its center at (px + 0.5,
py + 0.5) in screen coordinates, row 0 at the top. Coverage uses the
top-left fill rule so shared edges are owned by exactly one triangle, and
the z-buffer keeps the nearest surface (eye-space depth, strict less-than,
so ties go to the lower face index). Attribute interpolation is
perspective-correct.
"""

from __future__ import annotations

import io
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from .camera import CameraPose, eye_transform
from .exceptions import EmptyFrameError, UnfilledAtlasError
from .geometry import Mesh

logger = logging.getLogger(__name__)

NO_TRIANGLE = -1


@dataclass
class RasterFrame:
    """Per-pixel buffers for one camera view.

    Background pixels carry depth=+inf, tri_id=-1, uv=0, cosine=0.
    ``point`` is the perspective-correct reconstructed world-space surface
    position (used for the cosine buffer and for reprojection checks).
    """

    size: int
    depth: np.ndarray
    uv: np.ndarray
    tri_id: np.ndarray
    mask: np.ndarray
    cosine: np.ndarray
    point: np.ndarray = field(repr=False, default=None)

    def foreground_count(self) -> int:
        return int(np.count_nonzero(self.mask))


def _pixel_range(lo: float, hi: float, size: int) -> tuple[int, int]:
    """Pixels whose centers fall inside [lo, hi]; half-open clamp to frame."""
    first = max(0, int(math.ceil(lo - 0.5)))
    last = min(size - 1, int(math.floor(hi - 0.5)))
    return first, last


def rasterize(
    mesh: Mesh,
    pose: CameraPose,
    size: int,
    cull_backfaces: bool = True,
) -> RasterFrame:
    """Z-buffered rasterization of the mesh under one camera pose.

    A pixel is covered iff its center lies inside a projected front-facing
    triangle (top-left rule on ties) and wins the depth test. Triangles
    with any corner behind the near plane are skipped (meshes are
    normalized well inside the camera orbit, so no clipping is needed).

    Raises EmptyFrameError when nothing is visible, which signals a bad
    camera or orientation remap.
    """
    if size < 8:
        raise ValueError("frame size must be at least 8 pixels")

    pe = eye_transform(mesh.positions, pose)
    depth_v = -pe[:, 2]
    tan_half = math.tan(math.radians(pose.fov_y) / 2.0)
    # Screen coords; guard the division for behind-camera vertices, their
    # faces are skipped below anyway.
    safe = np.where(np.abs(depth_v) > 1e-30, depth_v, 1e-30)
    sx = (pe[:, 0] / (safe * tan_half) + 1.0) * 0.5 * size
    sy = (1.0 - pe[:, 1] / (safe * tan_half)) * 0.5 * size

    depth_buf = np.full((size, size), np.inf)
    uv_buf = np.zeros((size, size, 2))
    tri_buf = np.full((size, size), NO_TRIANGLE, dtype=np.int32)
    normal_buf = np.zeros((size, size, 3))
    point_buf = np.zeros((size, size, 3))

    pos_idx = mesh.faces[:, :, 0]
    face_sx = sx[pos_idx]  # (F, 3)
    face_sy = sy[pos_idx]
    face_z = depth_v[pos_idx]
    face_uv = mesh.face_uvs()
    face_nrm = mesh.face_normals_per_corner()
    face_pos = mesh.face_positions()

    near = pose.near
    skipped_near = 0

    for f in range(mesh.num_faces):
        zs = face_z[f]
        if np.any(zs < near):
            skipped_near += 1
            continue

        xs, ys = face_sx[f], face_sy[f]
        # Shoelace in y-down pixel coords: world-CCW faces toward the camera
        # come out negative.
        area2 = (xs[1] - xs[0]) * (ys[2] - ys[0]) - (xs[2] - xs[0]) * (ys[1] - ys[0])
        if area2 == 0.0:
            continue
        if area2 < 0.0:
            order = (0, 2, 1)  # flip winding so interior edge math is positive
        elif cull_backfaces:
            continue
        else:
            order = (0, 1, 2)

        vx = xs[list(order)]
        vy = ys[list(order)]
        vz = zs[list(order)]
        vuv = face_uv[f][list(order)]
        vn = face_nrm[f][list(order)]
        vp = face_pos[f][list(order)]
        area = -float(area2) if area2 < 0.0 else float(area2)

        x_first, x_last = _pixel_range(float(vx.min()), float(vx.max()), size)
        y_first, y_last = _pixel_range(float(vy.min()), float(vy.max()), size)
        if x_first > x_last or y_first > y_last:
            continue

        cx = np.arange(x_first, x_last + 1) + 0.5
        cy = np.arange(y_first, y_last + 1) + 0.5
        px, py = np.meshgrid(cx, cy)

        covered = np.ones(px.shape, dtype=bool)
        bary = np.empty((3,) + px.shape)
        for i in range(3):
            a = (vx[(i + 1) % 3], vy[(i + 1) % 3])
            b = (vx[(i + 2) % 3], vy[(i + 2) % 3])
            e = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])
            dx, dy = b[0] - a[0], b[1] - a[1]
            top_or_left = (dy == 0.0 and dx > 0.0) or dy < 0.0
            covered &= (e > 0.0) | ((e == 0.0) & top_or_left)
            bary[i] = e / area
        if not covered.any():
            continue

        w = bary[:, covered]  # (3, K) affine barycentrics
        inv_z = w / vz[:, None]
        denom = inv_z.sum(axis=0)
        z = 1.0 / denom

        ys_idx, xs_idx = np.nonzero(covered)
        ys_idx = ys_idx + y_first
        xs_idx = xs_idx + x_first
        closer = z < depth_buf[ys_idx, xs_idx]
        if not closer.any():
            continue
        ys_idx, xs_idx = ys_idx[closer], xs_idx[closer]
        z, inv_z, denom = z[closer], inv_z[:, closer], denom[closer]

        persp = inv_z / denom  # perspective-correct weights, sum to 1
        depth_buf[ys_idx, xs_idx] = z
        tri_buf[ys_idx, xs_idx] = f
        uv_buf[ys_idx, xs_idx] = (persp[:, :, None] * vuv[:, None, :]).sum(axis=0)
        normal_buf[ys_idx, xs_idx] = (persp[:, :, None] * vn[:, None, :]).sum(axis=0)
        point_buf[ys_idx, xs_idx] = (persp[:, :, None] * vp[:, None, :]).sum(axis=0)

    mask = tri_buf != NO_TRIANGLE
    if not mask.any():
        raise EmptyFrameError(
            f"no triangle visible from pose (az={pose.azimuth}, el={pose.elevation}, "
            f"dist={pose.distance}); check camera distance and orientation remap"
        )
    if skipped_near:
        logger.warning("skipped %d faces crossing the near plane", skipped_near)

    eye = pose.position()
    to_cam = eye[None, :] - point_buf[mask]
    to_cam /= np.linalg.norm(to_cam, axis=1, keepdims=True)
    nrm = normal_buf[mask]
    lens = np.linalg.norm(nrm, axis=1, keepdims=True)
    lens[lens == 0.0] = 1.0
    nrm = nrm / lens
    cosine = np.zeros((size, size))
    cosine[mask] = np.clip((nrm * to_cam).sum(axis=1), 0.0, 1.0)

    np.clip(uv_buf, 0.0, 1.0, out=uv_buf)
    uv_buf[~mask] = 0.0

    return RasterFrame(
        size=size,
        depth=depth_buf,
        uv=uv_buf,
        tri_id=tri_buf,
        mask=mask,
        cosine=cosine,
        point=point_buf,
    )


def uv_to_texel(uv: np.ndarray, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Map uv in [0,1]^2 to integer texel indices (ix, iy), row iy=0 at v=0.

    The texel covering u is floor(u * W) (equivalently round-half-up of
    u*W - 0.5), clamped so u=1.0 stays on the last texel.
    """
    uv = np.asarray(uv, dtype=np.float64)
    ix = np.clip(np.floor(uv[..., 0] * width).astype(np.int64), 0, width - 1)
    iy = np.clip(np.floor(uv[..., 1] * height).astype(np.int64), 0, height - 1)
    return ix, iy


def sample_atlas(atlas, frame: RasterFrame, filter: str = "nearest") -> np.ndarray:
    """Read the atlas back into view space at the frame's per-pixel uvs.

    Foreground pixels carry atlas values; background pixels are zero.
    ``nearest`` is for latent-space work (no cross-chart bleeding),
    ``bilinear`` for final pixel-space rendering. Raises UnfilledAtlasError
    if any read touches a texel that never received a value.
    """
    out = np.zeros((frame.size, frame.size, atlas.channels))
    fg = frame.mask
    if not fg.any():
        return out
    uv = frame.uv[fg]
    values = atlas.values

    if filter == "nearest":
        ix, iy = uv_to_texel(uv, atlas.width, atlas.height)
        if not atlas.valid[iy, ix].all():
            raise UnfilledAtlasError("nearest sample hit an unfilled texel")
        out[fg] = values[iy, ix]
    elif filter == "bilinear":
        fx = uv[:, 0] * atlas.width - 0.5
        fy = uv[:, 1] * atlas.height - 0.5
        x0 = np.clip(np.floor(fx).astype(np.int64), 0, atlas.width - 1)
        y0 = np.clip(np.floor(fy).astype(np.int64), 0, atlas.height - 1)
        x1 = np.minimum(x0 + 1, atlas.width - 1)
        y1 = np.minimum(y0 + 1, atlas.height - 1)
        tx = np.clip(fx - x0, 0.0, 1.0)[:, None]
        ty = np.clip(fy - y0, 0.0, 1.0)[:, None]
        corners = atlas.valid[y0, x0] & atlas.valid[y0, x1] & atlas.valid[y1, x0] & atlas.valid[y1, x1]
        if not corners.all():
            raise UnfilledAtlasError("bilinear sample hit an unfilled texel")
        top = values[y0, x0] * (1.0 - tx) + values[y0, x1] * tx
        bot = values[y1, x0] * (1.0 - tx) + values[y1, x1] * tx
        out[fg] = top * (1.0 - ty) + bot * ty
    else:
        raise ValueError(f"unknown filter {filter!r}")
    return out


def depth_png_bytes(frame: RasterFrame) -> bytes:
    """Encode the depth buffer as a 16-bit grayscale PNG, returned as bytes.

    Foreground is normalized per-view: nearest depth maps to 65535 and the
    farthest to 0 (near = bright); background is 0. The eye-space min/max
    and the mapping direction are recorded as PNG text metadata.
    """
    if not frame.mask.any():
        raise EmptyFrameError("cannot export depth for an empty frame")
    fg_depth = frame.depth[frame.mask]
    dmin, dmax = float(fg_depth.min()), float(fg_depth.max())
    scaled = np.zeros((frame.size, frame.size), dtype=np.uint16)
    span = dmax - dmin
    # interpolation leaves ~1e-16 jitter even on planes square to the view
    # axis; a constant surface must not have that stretched to full range
    if span > 1e-9 * max(abs(dmax), 1.0):
        norm = (dmax - fg_depth) / span
    else:
        norm = np.ones_like(fg_depth)
    scaled[frame.mask] = np.floor(norm * 65535.0 + 0.5).astype(np.uint16)

    info = PngInfo()
    info.add_text("depth_min", repr(dmin))
    info.add_text("depth_max", repr(dmax))
    info.add_text("depth_mapping", "near=65535,far=0,background=0,eye_space")
    buf = io.BytesIO()
    Image.fromarray(scaled).save(buf, format="png", pnginfo=info)
    return buf.getvalue()


def export_depth_png(frame: RasterFrame, path: str | os.PathLike) -> None:
    """Write depth_png_bytes to a file."""
    with open(os.fspath(path), "wb") as fh:
        fh.write(depth_png_bytes(frame))
