"""Shared texture atlas: back-projection, blending, and Voronoi filling.

Atlas arrays are indexed ``[iy, ix]`` with iy=0 at v=0 (bottom of the UV
square); PNG export flips so image row 0 is v=1. Aggregation keeps running
weighted sums so the blend is independent of contribution order up to
float reassociation, and bitwise reproducible for a fixed order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage
from scipy.spatial import cKDTree

from .exceptions import (
    ChannelMismatchError,
    NoSeedsError,
    ShapeMismatchError,
    UnfilledAtlasError,
)
from .geometry import Mesh
from .raster import RasterFrame, uv_to_texel


@dataclass
class TextureAtlas:
    """W x H x C texel grid with accumulation weights and validity.

    ``value_sum`` holds weighted sums; the blended texel values are
    ``value_sum / weight`` wherever ``valid``. ``chart_mask`` marks texels
    inside some UV triangle (plus any dilation margin), which is the region
    Voronoi filling must cover.
    """

    width: int
    height: int
    channels: int
    value_sum: np.ndarray = None
    weight: np.ndarray = None
    valid: np.ndarray = None
    chart_mask: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        shape = (self.height, self.width)
        if self.value_sum is None:
            self.value_sum = np.zeros(shape + (self.channels,))
        if self.weight is None:
            self.weight = np.zeros(shape)
        if self.valid is None:
            self.valid = np.zeros(shape, dtype=bool)
        if self.chart_mask is None:
            self.chart_mask = np.ones(shape, dtype=bool)

    @property
    def values(self) -> np.ndarray:
        """Blended texel values (zero where nothing was written)."""
        w = np.where(self.weight > 0.0, self.weight, 1.0)
        return self.value_sum / w[:, :, None]

    def fresh(self) -> "TextureAtlas":
        """Empty atlas with the same dimensions and chart mask."""
        return TextureAtlas(
            self.width, self.height, self.channels, chart_mask=self.chart_mask
        )

    def copy(self) -> "TextureAtlas":
        return TextureAtlas(
            self.width,
            self.height,
            self.channels,
            value_sum=self.value_sum.copy(),
            weight=self.weight.copy(),
            valid=self.valid.copy(),
            chart_mask=self.chart_mask,
        )


@dataclass
class TexelScatter:
    """Per-view contributions: flat row-major texel indices, values, weights."""

    width: int
    height: int
    indices: np.ndarray
    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        n = self.indices.shape[0]
        if self.values.ndim != 2 or self.values.shape[0] != n or self.weights.shape[0] != n:
            raise ShapeMismatchError("scatter arrays disagree in length")
        if n and (self.indices.min() < 0 or self.indices.max() >= self.width * self.height):
            raise ShapeMismatchError("scatter texel index out of range")
        if n and self.weights.min() < 0.0:
            raise ShapeMismatchError("scatter weights must be non-negative")


def chart_mask_from_mesh(mesh: Mesh, width: int, height: int) -> np.ndarray:
    """Rasterize the mesh's UV triangles into a texel coverage mask.

    A texel belongs to the chart when its center lies inside (or exactly
    on the boundary of) any UV triangle, either winding.
    """
    mask = np.zeros((height, width), dtype=bool)
    face_uv = mesh.face_uvs()
    for f in range(face_uv.shape[0]):
        tx = face_uv[f, :, 0] * width
        ty = face_uv[f, :, 1] * height
        area2 = (tx[1] - tx[0]) * (ty[2] - ty[0]) - (tx[2] - tx[0]) * (ty[1] - ty[0])
        if area2 == 0.0:
            continue
        sign = 1.0 if area2 > 0.0 else -1.0
        x_first = max(0, int(np.ceil(tx.min() - 0.5)))
        x_last = min(width - 1, int(np.floor(tx.max() - 0.5)))
        y_first = max(0, int(np.ceil(ty.min() - 0.5)))
        y_last = min(height - 1, int(np.floor(ty.max() - 0.5)))
        if x_first > x_last or y_first > y_last:
            continue
        px, py = np.meshgrid(
            np.arange(x_first, x_last + 1) + 0.5,
            np.arange(y_first, y_last + 1) + 0.5,
        )
        inside = np.ones(px.shape, dtype=bool)
        for i in range(3):
            ax, ay = tx[(i + 1) % 3], ty[(i + 1) % 3]
            bx, by = tx[(i + 2) % 3], ty[(i + 2) % 3]
            e = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
            inside &= sign * e >= 0.0
        mask[y_first : y_last + 1, x_first : x_last + 1] |= inside
    return mask


def atlas_for_mesh(
    mesh: Mesh, width: int, height: int, channels: int, margin: int = 0
) -> TextureAtlas:
    """Empty atlas whose chart mask comes from the mesh's UV layout."""
    atlas = TextureAtlas(
        width,
        height,
        channels,
        chart_mask=chart_mask_from_mesh(mesh, width, height),
    )
    if margin > 0:
        atlas = dilate_chart_mask(atlas, margin)
    return atlas


def backproject(
    frame: RasterFrame,
    view_grid: np.ndarray,
    weight_exponent: float,
    width: int,
    height: int,
) -> TexelScatter:
    """Scatter one view's foreground pixels into atlas texel space.

    Each foreground pixel lands on the texel under its uv (round to the
    nearest texel center) with blend weight cosine**weight_exponent, so
    head-on views dominate grazing ones.
    """
    view_grid = np.asarray(view_grid, dtype=np.float64)
    if view_grid.shape[:2] != (frame.size, frame.size) or view_grid.ndim != 3:
        raise ShapeMismatchError(
            f"view grid {view_grid.shape} does not match frame size {frame.size}"
        )
    fg = frame.mask
    uv = frame.uv[fg]
    ix, iy = uv_to_texel(uv, width, height)
    return TexelScatter(
        width=width,
        height=height,
        indices=iy * width + ix,
        values=view_grid[fg],
        weights=frame.cosine[fg] ** weight_exponent,
    )


def aggregate(atlas: TextureAtlas, scatters: list[TexelScatter]) -> TextureAtlas:
    """Blend scatters into the atlas by weighted mean; returns a new atlas.

    Contributions are reduced in the given order (callers keep view order
    fixed, which makes parallel and serial runs agree bitwise).
    """
    out = atlas.copy()
    n_bins = atlas.width * atlas.height
    for scatter in scatters:
        if (scatter.width, scatter.height) != (atlas.width, atlas.height):
            raise ShapeMismatchError("scatter was built for different atlas dimensions")
        if scatter.values.shape[1] != atlas.channels:
            raise ShapeMismatchError(
                f"scatter has {scatter.values.shape[1]} channels, atlas {atlas.channels}"
            )
        if scatter.indices.size == 0:
            continue
        out.weight += np.bincount(
            scatter.indices, weights=scatter.weights, minlength=n_bins
        ).reshape(atlas.height, atlas.width)
        for c in range(atlas.channels):
            out.value_sum[:, :, c] += np.bincount(
                scatter.indices,
                weights=scatter.weights * scatter.values[:, c],
                minlength=n_bins,
            ).reshape(atlas.height, atlas.width)
    out.valid = out.weight > 0.0
    return out


def _nearest_seed_ranks(
    seed_xy: np.ndarray, target_xy: np.ndarray
) -> np.ndarray:
    """Exact nearest-seed rank per target under the row-major tie rule.

    Seeds are given in row-major order, so the rank in ``seed_xy`` orders
    ties. Distances are integer-exact; when the two nearest returned by the
    tree are equidistant, the full tie set is fetched with a radius query
    and the smallest rank wins.
    """
    if seed_xy.shape[0] == 1:
        return np.zeros(target_xy.shape[0], dtype=np.int64)

    tree = cKDTree(seed_xy.astype(np.float64))
    _, idx = tree.query(target_xy.astype(np.float64), k=2)
    diff = seed_xy[idx] - target_xy[:, None, :]
    d2 = (diff * diff).sum(axis=2)  # exact int64 squared distances
    best = np.minimum(idx[:, 0], idx[:, 1])  # for exact ties within the pair
    unique = d2[:, 0] != d2[:, 1]
    best[unique] = idx[unique, 0]

    ambiguous = np.nonzero(~unique)[0]
    if ambiguous.size:
        # The tie set may extend past k=2; sqrt(d2 + 0.25) includes exactly
        # the seeds at d2 (the next ring is at >= d2 + 1).
        radii = np.sqrt(d2[ambiguous, 0] + 0.25)
        balls = tree.query_ball_point(target_xy[ambiguous].astype(np.float64), radii)
        for row, cands in zip(ambiguous, balls):
            cands = np.asarray(cands, dtype=np.int64)
            cdiff = seed_xy[cands] - target_xy[row]
            cd2 = (cdiff * cdiff).sum(axis=1)
            best[row] = cands[cd2 == d2[row, 0]].min()
    return best


def voronoi_fill(atlas: TextureAtlas) -> TextureAtlas:
    """Fill every invalid chart texel from its nearest valid texel.

    Nearest is Euclidean distance between texel centers; exact ties go to
    the seed with the smaller row-major index. Valid texels are never
    modified, so the operation is idempotent.
    """
    if not atlas.valid.any():
        raise NoSeedsError("voronoi fill on an atlas with no valid texel")
    out = atlas.copy()
    targets = atlas.chart_mask & ~atlas.valid
    if not targets.any():
        return out

    seed_iy, seed_ix = np.nonzero(atlas.valid)  # row-major enumeration
    seed_xy = np.column_stack([seed_ix, seed_iy])
    tgt_iy, tgt_ix = np.nonzero(targets)
    tgt_xy = np.column_stack([tgt_ix, tgt_iy])

    ranks = _nearest_seed_ranks(seed_xy, tgt_xy)
    src_iy, src_ix = seed_iy[ranks], seed_ix[ranks]
    out.value_sum[tgt_iy, tgt_ix] = atlas.value_sum[src_iy, src_ix]
    out.weight[tgt_iy, tgt_ix] = atlas.weight[src_iy, src_ix]
    out.valid[tgt_iy, tgt_ix] = True
    return out


def dilate_chart_mask(atlas: TextureAtlas, margin: int) -> TextureAtlas:
    """Grow the chart mask by ``margin`` texels of 8-connected dilation.

    The grown ring becomes a fill target, which pads chart borders so
    bilinear sampling at seams does not read unrelated texels.
    """
    if margin < 0:
        raise ValueError("dilation margin must be >= 0")
    out = atlas.copy()
    if margin == 0:
        return out
    out.chart_mask = ndimage.binary_dilation(
        atlas.chart_mask, structure=np.ones((3, 3), dtype=bool), iterations=margin
    )
    return out


def export_png(atlas: TextureAtlas, path: str | os.PathLike) -> None:
    """Write the atlas as 8-bit RGB PNG (image row 0 = v 1.0).

    Values are clamped to [0,1] and quantized round-half-up, so 0.5 maps
    to pixel value 128.
    """
    if atlas.channels != 3:
        raise ChannelMismatchError(
            f"png export needs a 3-channel atlas, got {atlas.channels}"
        )
    holes = atlas.chart_mask & ~atlas.valid
    if holes.any():
        raise UnfilledAtlasError(
            f"{int(holes.sum())} chart texels are unfilled; run voronoi_fill first"
        )
    v = np.clip(atlas.values, 0.0, 1.0)
    img = np.floor(v * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(img[::-1]).save(os.fspath(path))


def load_png(path: str | os.PathLike) -> np.ndarray:
    """Read an RGB PNG back into atlas layout (row 0 = v 0, values in [0,1])."""
    img = np.asarray(Image.open(os.fspath(path)).convert("RGB"), dtype=np.float64)
    return img[::-1] / 255.0


def export_debug_pngs(atlas: TextureAtlas, directory: str | os.PathLike) -> None:
    """Dump validity mask and weight heatmap next to the texture."""
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    valid_img = (atlas.valid.astype(np.uint8) * 255)[::-1]
    Image.fromarray(valid_img).save(os.path.join(directory, "validity.png"))
    wmax = float(atlas.weight.max())
    heat = atlas.weight / wmax if wmax > 0 else atlas.weight
    Image.fromarray(np.floor(heat * 255.0 + 0.5).astype(np.uint8)[::-1]).save(
        os.path.join(directory, "weight.png")
    )
