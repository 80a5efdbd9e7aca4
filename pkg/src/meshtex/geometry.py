"""Triangle meshes with UV atlases: OBJ I/O, orientation remap, normals.

Conventions used throughout the package:

* positions are float64 in model units, +Z is the mesh's "front" after the
  orientation remap has been applied, +Y is up;
* uvs live in [0,1]^2 with v = 0 at the bottom of the atlas (OBJ convention);
* faces are triangles storing an (position, uv, normal) index triple per
  corner, counter-clockwise winding seen from outside.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ImproperRemapError, MalformedFaceError, MissingUVsError

logger = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12


@dataclass
class Mesh:
    """Indexed triangle mesh with per-vertex positions, normals and UVs.

    ``faces`` has shape (F, 3, 3): face corner c of face f references
    ``positions[faces[f, c, 0]]``, ``uvs[faces[f, c, 1]]`` and
    ``normals[faces[f, c, 2]]``.
    """

    positions: np.ndarray
    normals: np.ndarray
    uvs: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        self.uvs = np.asarray(self.uvs, dtype=np.float64).reshape(-1, 2)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3, 3)

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    def validate(self) -> None:
        """Check index ranges, UV bounds and normal lengths.

        Raises MalformedFaceError / MissingUVsError on violations.
        """
        if self.uvs.shape[0] == 0:
            raise MissingUVsError("mesh has no uv coordinates")
        limits = (self.positions.shape[0], self.uvs.shape[0], self.normals.shape[0])
        for axis, limit in enumerate(limits):
            idx = self.faces[:, :, axis]
            if idx.size and (idx.min() < 0 or idx.max() >= limit):
                bad = int(np.argwhere((idx < 0) | (idx >= limit))[0, 0])
                raise MalformedFaceError(
                    f"face {bad} references index out of range "
                    f"(axis {axis}, limit {limit})"
                )
        if self.uvs.size and (self.uvs.min() < 0.0 or self.uvs.max() > 1.0):
            raise MalformedFaceError("uv coordinates outside [0,1] after wrapping")
        if self.normals.size:
            lengths = np.linalg.norm(self.normals, axis=1)
            if not np.allclose(lengths, 1.0, atol=1e-6):
                raise MalformedFaceError("normals are not unit length")

    def face_positions(self) -> np.ndarray:
        """(F, 3, 3) corner positions."""
        return self.positions[self.faces[:, :, 0]]

    def face_uvs(self) -> np.ndarray:
        """(F, 3, 2) corner uvs."""
        return self.uvs[self.faces[:, :, 1]]

    def face_normals_per_corner(self) -> np.ndarray:
        """(F, 3, 3) corner normals."""
        return self.normals[self.faces[:, :, 2]]


@dataclass
class OrientationRemap:
    """Signed axis permutation applied to make the mesh front-facing (+Z).

    ``matrix`` is a 3x3 signed permutation with determinant +1; new
    coordinates are ``matrix @ old``.
    """

    matrix: np.ndarray
    applied: bool = False

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64).reshape(3, 3)
        abs_m = np.abs(self.matrix)
        if not (
            np.all(np.isin(self.matrix, (-1.0, 0.0, 1.0)))
            and np.all(abs_m.sum(axis=0) == 1.0)
            and np.all(abs_m.sum(axis=1) == 1.0)
        ):
            raise ImproperRemapError("remap is not a signed permutation")
        if round(float(np.linalg.det(self.matrix))) != 1:
            raise ImproperRemapError("remap is a reflection (determinant != +1)")

    @classmethod
    def identity(cls) -> "OrientationRemap":
        return cls(np.eye(3))

    @classmethod
    def from_spec(cls, spec: str) -> "OrientationRemap":
        """Parse a remap like ``"x,z,-y"``: new (x,y,z) in terms of old axes."""
        axes = {"x": 0, "y": 1, "z": 2}
        rows = []
        parts = [p.strip().lower() for p in spec.split(",")]
        if len(parts) != 3:
            raise ImproperRemapError(f"remap spec needs 3 axes, got {spec!r}")
        for part in parts:
            sign = 1.0
            if part.startswith("-"):
                sign, part = -1.0, part[1:]
            elif part.startswith("+"):
                part = part[1:]
            if part not in axes:
                raise ImproperRemapError(f"unknown axis {part!r} in remap spec")
            row = np.zeros(3)
            row[axes[part]] = sign
            rows.append(row)
        return cls(np.array(rows))


@dataclass
class NormalizeTransform:
    """Record of the unit-bounding-sphere normalization (for export)."""

    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (points - self.center) / self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return points * self.scale + self.center


def wrap_uvs(uvs: np.ndarray) -> np.ndarray:
    """Wrap out-of-range uvs by fractional part; values in [0,1] pass through.

    Tiling coordinates like 2.25 map to 0.25; exact 1.0 is preserved so
    charts touching the atlas border keep their extent.
    """
    uvs = np.asarray(uvs, dtype=np.float64)
    out = uvs.copy()
    outside = (uvs < 0.0) | (uvs > 1.0)
    out[outside] = uvs[outside] - np.floor(uvs[outside])
    return out


def _parse_face_corner(token: str, counts: tuple[int, int, int], line_no: int):
    """Resolve one ``p/t/n`` face token into 0-based indices (uv/n may be -1)."""

    def resolve(raw: str, count: int, what: str) -> int:
        if raw == "":
            return -1
        idx = int(raw)
        if idx < 0:
            idx = count + idx  # OBJ relative indexing
        else:
            idx = idx - 1
        if idx < 0 or idx >= count:
            raise MalformedFaceError(
                f"line {line_no}: {what} index {raw} out of range (have {count})"
            )
        return idx

    fields = token.split("/")
    pos = resolve(fields[0], counts[0], "vertex")
    uv = resolve(fields[1], counts[1], "uv") if len(fields) > 1 else -1
    normal = resolve(fields[2], counts[2], "normal") if len(fields) > 2 else -1
    return pos, uv, normal


def load_obj(path: str | os.PathLike) -> Mesh:
    """Load a Wavefront OBJ as a triangulated Mesh.

    Quads and larger polygons are fan-triangulated from their first vertex.
    Missing normals are recomputed (area-weighted). A mesh without ``vt``
    records raises MissingUVsError since texturing needs a UV atlas.
    """
    positions: list[list[float]] = []
    uvs: list[list[float]] = []
    normals: list[list[float]] = []
    corners: list[tuple[int, int, int]] = []
    face_sizes: list[int] = []

    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag, args = parts[0], parts[1:]
            if tag == "v":
                positions.append([float(x) for x in args[:3]])
            elif tag == "vt":
                uvs.append([float(x) for x in args[:2]])
            elif tag == "vn":
                normals.append([float(x) for x in args[:3]])
            elif tag == "f":
                if len(args) < 3:
                    raise MalformedFaceError(f"line {line_no}: face with <3 corners")
                counts = (len(positions), len(uvs), len(normals))
                face = [_parse_face_corner(tok, counts, line_no) for tok in args]
                corners.extend(face)
                face_sizes.append(len(face))

    if not uvs:
        raise MissingUVsError(f"{path}: no vt records; mesh cannot be textured")
    if not face_sizes:
        raise MalformedFaceError(f"{path}: no faces")

    # Fan-triangulate each polygon from its first corner.
    tris = []
    offset = 0
    for size in face_sizes:
        poly = corners[offset : offset + size]
        for k in range(1, size - 1):
            tris.append([poly[0], poly[k], poly[k + 1]])
        offset += size
    faces = np.array(tris, dtype=np.int64)

    if np.any(faces[:, :, 1] < 0):
        raise MissingUVsError(f"{path}: some faces have no uv reference")

    mesh = Mesh(
        positions=np.array(positions),
        normals=np.array(normals) if normals else np.zeros((0, 3)),
        uvs=wrap_uvs(np.array(uvs)),
        faces=faces,
    )

    if mesh.normals.shape[0] == 0 or np.any(faces[:, :, 2] < 0):
        mesh, skipped = compute_vertex_normals(mesh)
        if skipped:
            logger.warning("%s: skipped %d degenerate faces for normals", path, skipped)
    else:
        lengths = np.linalg.norm(mesh.normals, axis=1)
        lengths[lengths == 0.0] = 1.0
        mesh.normals = mesh.normals / lengths[:, None]

    mesh.validate()
    return mesh


def export_obj(
    mesh: Mesh,
    path: str | os.PathLike,
    texture_filename: str | None = None,
    transform: NormalizeTransform | None = None,
) -> None:
    """Write mesh as OBJ (+MTL referencing the texture PNG when given).

    ``transform`` is the normalization recorded at load time; positions are
    written back in the original model units.
    """
    path = os.fspath(path)
    positions = mesh.positions
    if transform is not None:
        positions = transform.invert(positions)

    mtl_path = os.path.splitext(path)[0] + ".mtl"
    lines = []
    if texture_filename is not None:
        lines.append(f"mtllib {os.path.basename(mtl_path)}")
    for p in positions:
        lines.append(f"v {p[0]:.8f} {p[1]:.8f} {p[2]:.8f}")
    for t in mesh.uvs:
        lines.append(f"vt {t[0]:.8f} {t[1]:.8f}")
    for n in mesh.normals:
        lines.append(f"vn {n[0]:.8f} {n[1]:.8f} {n[2]:.8f}")
    if texture_filename is not None:
        lines.append("usemtl textured")
    for face in mesh.faces:
        corner = " ".join(f"{c[0] + 1}/{c[1] + 1}/{c[2] + 1}" for c in face)
        lines.append(f"f {corner}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

    if texture_filename is not None:
        with open(mtl_path, "w", encoding="utf-8") as fh:
            fh.write(
                "newmtl textured\n"
                "Ka 1.0 1.0 1.0\nKd 1.0 1.0 1.0\nKs 0.0 0.0 0.0\n"
                f"map_Kd {texture_filename}\n"
            )


def apply_orientation(mesh: Mesh, remap: OrientationRemap) -> Mesh:
    """Rotate positions and normals by the signed permutation; UVs untouched."""
    rot = remap.matrix
    out = Mesh(
        positions=mesh.positions @ rot.T,
        normals=mesh.normals @ rot.T,
        uvs=mesh.uvs,
        faces=mesh.faces,
    )
    remap.applied = True
    return out


def face_areas(mesh: Mesh) -> np.ndarray:
    """(F,) triangle areas in model units^2."""
    pos = mesh.face_positions()
    cross = np.cross(pos[:, 1] - pos[:, 0], pos[:, 2] - pos[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def compute_vertex_normals(mesh: Mesh) -> tuple[Mesh, int]:
    """Recompute area-weighted per-vertex normals.

    Normals are averaged over every non-degenerate face sharing a position
    index; degenerate faces (area <= 1e-12) are skipped and counted. Returns
    the new mesh (normal index == position index) and the skip count.
    """
    pos = mesh.face_positions()
    cross = np.cross(pos[:, 1] - pos[:, 0], pos[:, 2] - pos[:, 0])
    area2 = np.linalg.norm(cross, axis=1)  # 2x area
    good = area2 > 2.0 * DEGENERATE_AREA
    skipped = int(np.count_nonzero(~good))

    accum = np.zeros_like(mesh.positions)
    idx = mesh.faces[good, :, 0]
    # cross norm is proportional to area, so adding raw crosses is the
    # area weighting.
    for corner in range(3):
        np.add.at(accum, idx[:, corner], cross[good])

    lengths = np.linalg.norm(accum, axis=1)
    zero = lengths < 1e-20
    accum[zero] = (0.0, 0.0, 1.0)
    lengths[zero] = 1.0
    normals = accum / lengths[:, None]

    faces = mesh.faces.copy()
    faces[:, :, 2] = faces[:, :, 0]
    return Mesh(mesh.positions, normals, mesh.uvs, faces), skipped


def normalize_to_unit_sphere(mesh: Mesh) -> tuple[Mesh, NormalizeTransform]:
    """Center the mesh and scale it into a unit bounding sphere.

    The recorded transform lets export write original model units.
    """
    lo = mesh.positions.min(axis=0)
    hi = mesh.positions.max(axis=0)
    center = 0.5 * (lo + hi)
    radius = float(np.linalg.norm(mesh.positions - center, axis=1).max())
    if radius <= 0.0:
        radius = 1.0
    transform = NormalizeTransform(center=center, scale=radius)
    out = Mesh(
        positions=transform.apply(mesh.positions),
        normals=mesh.normals,
        uvs=mesh.uvs,
        faces=mesh.faces,
    )
    return out, transform
