"""Built-in geometry and target textures for toy runs and verification.

These ship in the package (not only in tests) because toy mode is a
user-facing way to validate an install: `meshtex --mesh builtin:sphere
--mode toy` must work without any assets on disk.
"""

from __future__ import annotations

import numpy as np

from .atlas import TextureAtlas
from .geometry import Mesh

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0


def checkerboard(
    size: int,
    cells: int = 8,
    low: float = 0.1,
    high: float = 0.9,
) -> np.ndarray:
    """(size, size, 3) checker pattern; cell (0,0) gets the high value."""
    if size % cells != 0:
        raise ValueError(f"cells ({cells}) must divide size ({size})")
    cell = size // cells
    iy, ix = np.mgrid[0:size, 0:size]
    board = np.where((ix // cell + iy // cell) % 2 == 0, high, low)
    return np.repeat(board[:, :, None], 3, axis=2)


def atlas_from_values(values: np.ndarray) -> TextureAtlas:
    """Fully valid atlas holding the given (H, W, C) values, unit weights."""
    values = np.asarray(values, dtype=np.float64)
    h, w, c = values.shape
    return TextureAtlas(
        width=w,
        height=h,
        channels=c,
        value_sum=values.copy(),
        weight=np.ones((h, w)),
        valid=np.ones((h, w), dtype=bool),
        chart_mask=np.ones((h, w), dtype=bool),
    )


def unit_quad() -> Mesh:
    """Square in the z=0 plane facing +Z, uv spanning the full chart."""
    positions = np.array(
        [[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [1.0, 1.0, 0.0], [-1.0, 1.0, 0.0]]
    )
    uvs = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    normals = np.array([[0.0, 0.0, 1.0]])
    faces = np.array(
        [
            [[0, 0, 0], [1, 1, 0], [2, 2, 0]],
            [[0, 0, 0], [2, 2, 0], [3, 3, 0]],
        ],
        dtype=np.int64,
    )
    return Mesh(positions=positions, uvs=uvs, normals=normals, faces=faces)


# Corner orderings below are counter-clockwise seen from outside; the
# accompanying normal is the face's axis.
_CUBE_FACES = [
    # +Z
    ([[-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]], [0, 0, 1]),
    # -Z
    ([[1, -1, -1], [-1, -1, -1], [-1, 1, -1], [1, 1, -1]], [0, 0, -1]),
    # +X
    ([[1, -1, 1], [1, -1, -1], [1, 1, -1], [1, 1, 1]], [1, 0, 0]),
    # -X
    ([[-1, -1, -1], [-1, -1, 1], [-1, 1, 1], [-1, 1, -1]], [-1, 0, 0]),
    # +Y
    ([[-1, 1, 1], [1, 1, 1], [1, 1, -1], [-1, 1, -1]], [0, 1, 0]),
    # -Y
    ([[-1, -1, -1], [1, -1, -1], [1, -1, 1], [-1, -1, 1]], [0, -1, 0]),
]


def unit_cube(chart_inset: float = 0.02) -> Mesh:
    """Axis-aligned cube spanning [-1, 1]^3 with per-face UV charts.

    The six charts tile a 3x2 grid; ``chart_inset`` (fraction of a cell)
    keeps neighbors from bleeding into each other when the atlas margin
    dilates. 12 triangles, 24 uv references.
    """
    position_list: list[list[float]] = []
    pos_index: dict[tuple[float, float, float], int] = {}
    uvs = np.zeros((24, 2))
    normals = np.zeros((6, 3))
    faces = np.zeros((12, 3, 3), dtype=np.int64)

    for f, (corners, normal) in enumerate(_CUBE_FACES):
        normals[f] = normal
        cx, cy = f % 3, f // 3
        u0 = (cx + chart_inset) / 3.0
        u1 = (cx + 1 - chart_inset) / 3.0
        v0 = (cy + chart_inset) / 2.0
        v1 = (cy + 1 - chart_inset) / 2.0
        uv_quad = [(u0, v0), (u1, v0), (u1, v1), (u0, v1)]
        pos_ids = []
        for corner in corners:
            key = tuple(float(c) for c in corner)
            if key not in pos_index:
                pos_index[key] = len(position_list)
                position_list.append(list(key))
            pos_ids.append(pos_index[key])
        uv_ids = []
        for k, uv in enumerate(uv_quad):
            uvs[4 * f + k] = uv
            uv_ids.append(4 * f + k)
        for k, (a, b, c) in enumerate([(0, 1, 2), (0, 2, 3)]):
            faces[2 * f + k] = [
                [pos_ids[a], uv_ids[a], f],
                [pos_ids[b], uv_ids[b], f],
                [pos_ids[c], uv_ids[c], f],
            ]

    return Mesh(
        positions=np.array(position_list),
        uvs=uvs,
        normals=normals,
        faces=faces,
    )


def uv_sphere(n_lat: int = 32, n_lon: int = 64) -> Mesh:
    """Unit sphere with an equirectangular chart covering the whole square.

    The vertex grid duplicates the u=0/u=1 seam column and keeps one
    vertex row per pole so every triangle gets proper UVs; degenerate
    pole-edge triangles are skipped.
    """
    if n_lat < 2 or n_lon < 3:
        raise ValueError("sphere needs n_lat >= 2 and n_lon >= 3")
    i, j = np.mgrid[0 : n_lat + 1, 0 : n_lon + 1]
    v = i / n_lat
    u = j / n_lon
    phi = np.pi * v  # 0 at the south pole
    lam = 2.0 * np.pi * u
    x = np.sin(phi) * np.sin(lam)
    y = -np.cos(phi)
    z = np.sin(phi) * np.cos(lam)
    positions = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    uvs = np.stack([u, v], axis=-1).reshape(-1, 2)

    def vid(ii: int, jj: int) -> int:
        return ii * (n_lon + 1) + jj

    tris: list[list[int]] = []
    for ii in range(n_lat):
        for jj in range(n_lon):
            v00, v10 = vid(ii, jj), vid(ii, jj + 1)
            v01, v11 = vid(ii + 1, jj), vid(ii + 1, jj + 1)
            if ii > 0:  # south cap rows collapse v00 == v10
                tris.append([v00, v10, v11])
            if ii < n_lat - 1:  # north cap rows collapse v01 == v11
                tris.append([v00, v11, v01])

    face_ids = np.asarray(tris, dtype=np.int64)
    faces = np.stack([face_ids, face_ids, face_ids], axis=-1)
    return Mesh(positions=positions, uvs=uvs, normals=positions.copy(), faces=faces)


_ICO_VERTS = [
    (-1, GOLDEN, 0), (1, GOLDEN, 0), (-1, -GOLDEN, 0), (1, -GOLDEN, 0),
    (0, -1, GOLDEN), (0, 1, GOLDEN), (0, -1, -GOLDEN), (0, 1, -GOLDEN),
    (GOLDEN, 0, -1), (GOLDEN, 0, 1), (-GOLDEN, 0, -1), (-GOLDEN, 0, 1),
]

_ICO_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def icosphere(subdivisions: int = 2) -> Mesh:
    """Subdivided icosahedron on the unit sphere (near-uniform triangles).

    UVs come from a spherical projection; the seam is wrong for texturing
    but the fixture exists for geometry-side checks where triangle shape
    uniformity matters, not the chart.
    """
    verts = [np.asarray(p, dtype=np.float64) for p in _ICO_VERTS]
    verts = [p / np.linalg.norm(p) for p in verts]
    faces = list(_ICO_FACES)

    for _ in range(subdivisions):
        midpoint_cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in midpoint_cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                midpoint_cache[key] = len(verts) - 1
            return midpoint_cache[key]

        next_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            next_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = next_faces

    positions = np.asarray(verts)
    u = 0.5 + np.arctan2(positions[:, 0], positions[:, 2]) / (2.0 * np.pi)
    v = 0.5 + np.arcsin(np.clip(positions[:, 1], -1.0, 1.0)) / np.pi
    uvs = np.stack([np.clip(u, 0.0, 1.0), np.clip(v, 0.0, 1.0)], axis=-1)
    face_ids = np.asarray(faces, dtype=np.int64)
    return Mesh(
        positions=positions,
        uvs=uvs,
        normals=positions.copy(),
        faces=np.stack([face_ids, face_ids, face_ids], axis=-1),
    )


BUILTIN_MESHES = {
    "sphere": uv_sphere,
    "cube": unit_cube,
    "quad": unit_quad,
}


def builtin_mesh(name: str) -> Mesh:
    """Look up a bundled mesh by name ("sphere", "cube", "quad")."""
    try:
        builder = BUILTIN_MESHES[name]
    except KeyError:
        raise KeyError(
            f"no builtin mesh {name!r}; choices: {sorted(BUILTIN_MESHES)}"
        ) from None
    return builder()
