"""Mesh ingestion, normalization, BVH ray casting and camera sampling.

Geometry is fixed for the whole optimization: no gradients ever flow into
vertices or faces, so everything here is plain numpy. Meshes and their
BVHs are immutable after construction and safe for concurrent reads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

RAY_EPS = 1e-6          # minimal accepted hit distance
_LEAF_SIZE = 4
_GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0

__all__ = [
    "TriangleMesh",
    "Camera",
    "Ray",
    "RayHit",
    "HitBatch",
    "load_mesh",
    "save_obj",
    "normalize_mesh",
    "cast_ray",
    "cast_rays",
    "cast_rays_brute",
    "sample_cameras",
    "camera_rays",
    "make_cube",
    "make_icosphere",
]


class MeshError(ValueError):
    """Unparseable or empty mesh input."""


# ---------------------------------------------------------------------------
# mesh


def _face_data(vertices: np.ndarray, faces: np.ndarray):
    v0 = vertices[faces[:, 0]]
    e1 = vertices[faces[:, 1]] - v0
    e2 = vertices[faces[:, 2]] - v0
    cross = np.cross(e1, e2)
    double_area = np.linalg.norm(cross, axis=1)
    return cross, double_area


@dataclass(frozen=True)
class TriangleMesh:
    """Triangle soup: (e, 3) vertices, (u, 3) int faces, unit face normals."""

    vertices: np.ndarray
    faces: np.ndarray
    face_normals: np.ndarray = field(repr=False)
    dropped_face_count: int = 0

    @classmethod
    def from_arrays(cls, vertices, faces) -> "TriangleMesh":
        """Build a mesh, dropping zero-area faces with a warning count."""
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if len(vertices) == 0 or len(faces) == 0:
            raise MeshError("mesh has no vertices or no faces")
        if faces.min() < 0 or faces.max() >= len(vertices):
            raise MeshError("face index out of range")
        cross, double_area = _face_data(vertices, faces)
        extent = float(np.ptp(vertices, axis=0).max()) or 1.0
        keep = double_area > 1e-12 * extent * extent
        dropped = int((~keep).sum())
        if dropped:
            log.warning("dropped %d degenerate (zero-area) faces", dropped)
        faces = faces[keep]
        if len(faces) == 0:
            raise MeshError("all faces are degenerate")
        normals = cross[keep] / double_area[keep, None]
        return cls(vertices=vertices, faces=faces, face_normals=normals,
                   dropped_face_count=dropped)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def triangles(self) -> np.ndarray:
        """(u, 3, 3) vertex positions per face."""
        return self.vertices[self.faces]

    @cached_property
    def bvh(self) -> "_Bvh":
        return _build_bvh(self.triangles)


def normalize_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Center the vertex centroid at the origin and scale the farthest
    vertex onto the unit sphere. Idempotent."""
    v = mesh.vertices - mesh.vertices.mean(axis=0)
    radius = np.linalg.norm(v, axis=1).max()
    if radius == 0.0:
        raise MeshError("mesh vertices are all coincident")
    v = v / radius
    out = TriangleMesh.from_arrays(v, mesh.faces)
    return TriangleMesh(out.vertices, out.faces, out.face_normals,
                        dropped_face_count=mesh.dropped_face_count)


# ---------------------------------------------------------------------------
# loaders


def load_mesh(path) -> TriangleMesh:
    """Load an OBJ or PLY triangle file; polygons are fan-triangulated."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return _load_obj(path)
    if suffix == ".ply":
        return _load_ply(path)
    raise MeshError(f"unsupported mesh format: {path.name}")


def save_obj(mesh: TriangleMesh, path) -> None:
    """Write positions and faces as OBJ (1-based indices)."""
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def _fan(indices: list[int]) -> list[list[int]]:
    return [[indices[0], indices[i], indices[i + 1]]
            for i in range(1, len(indices) - 1)]


def _load_obj(path: Path) -> TriangleMesh:
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "v":
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif parts[0] == "f":
                idx = []
                for token in parts[1:]:
                    i = int(token.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise MeshError(f"{path.name}:{lineno}: face with <3 vertices")
                faces.extend(_fan(idx))
        except (ValueError, IndexError) as exc:
            raise MeshError(f"{path.name}:{lineno}: cannot parse {line!r}") from exc
    if not verts or not faces:
        raise MeshError(f"{path.name}: no geometry found")
    return TriangleMesh.from_arrays(np.array(verts), np.array(faces))


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _load_ply(path: Path) -> TriangleMesh:
    blob = path.read_bytes()
    try:
        header_end = blob.index(b"end_header\n") + len(b"end_header\n")
    except ValueError:
        raise MeshError(f"{path.name}: missing PLY end_header")
    header = blob[:header_end].decode("ascii", errors="replace").splitlines()
    if not header or header[0].strip() != "ply":
        raise MeshError(f"{path.name}: not a PLY file")

    fmt = None
    elements: list[tuple[str, int, list]] = []  # (name, count, props)
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshError(f"{path.name}: property before element")
            elements[-1][2].append(parts[1:])
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise MeshError(f"{path.name}: unsupported PLY format {fmt!r}")

    body = blob[header_end:]
    if fmt == "ascii":
        verts, faces = _parse_ply_ascii(body, elements, path)
    else:
        endian = "<" if fmt == "binary_little_endian" else ">"
        verts, faces = _parse_ply_binary(body, elements, endian, path)
    if verts is None or faces is None:
        raise MeshError(f"{path.name}: missing vertex or face element")
    tri_faces: list[list[int]] = []
    for f in faces:
        if len(f) < 3:
            raise MeshError(f"{path.name}: face with <3 vertices")
        tri_faces.extend(_fan(list(f)))
    return TriangleMesh.from_arrays(np.array(verts), np.array(tri_faces))


def _parse_ply_ascii(body: bytes, elements, path: Path):
    lines = body.decode("ascii").split("\n")
    verts = faces = None
    row = 0
    for name, count, props in elements:
        if name == "vertex":
            cols = [p[1] for p in props]
            xi, yi, zi = cols.index("x"), cols.index("y"), cols.index("z")
            verts = []
            for _ in range(count):
                vals = lines[row].split()
                verts.append([float(vals[xi]), float(vals[yi]), float(vals[zi])])
                row += 1
        elif name == "face":
            faces = []
            for _ in range(count):
                vals = lines[row].split()
                n = int(vals[0])
                faces.append([int(v) for v in vals[1:1 + n]])
                row += 1
        else:
            row += count
    return verts, faces


def _parse_ply_binary(body: bytes, elements, endian: str, path: Path):
    verts = faces = None
    offset = 0
    for name, count, props in elements:
        if name == "vertex":
            fields = []
            for i, p in enumerate(props):
                if p[0] == "list":
                    raise MeshError(f"{path.name}: list property in vertex element")
                fields.append((f"p{i}", endian + _PLY_TYPES[p[0]]))
            dtype = np.dtype(fields)
            data = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
            offset += dtype.itemsize * count
            cols = [p[1] for p in props]
            verts = np.stack([
                data[f"p{cols.index(c)}"].astype(np.float64) for c in "xyz"
            ], axis=1)
        elif name == "face":
            list_props = [p for p in props if p[0] == "list"]
            if len(props) != 1 or not list_props:
                raise MeshError(f"{path.name}: unsupported face properties")
            count_t = np.dtype(endian + _PLY_TYPES[props[0][1]])
            index_t = np.dtype(endian + _PLY_TYPES[props[0][2]])
            faces = []
            for _ in range(count):
                n = int(np.frombuffer(body, dtype=count_t, count=1, offset=offset)[0])
                offset += count_t.itemsize
                idx = np.frombuffer(body, dtype=index_t, count=n, offset=offset)
                offset += index_t.itemsize * n
                faces.append([int(i) for i in idx])
        else:
            # skip unknown fixed-size elements
            width = sum(np.dtype(_PLY_TYPES[p[0]]).itemsize
                        for p in props if p[0] != "list")
            offset += width * count
    return verts, faces


# ---------------------------------------------------------------------------
# primitives (fixtures for tests, demos and gradient checks)


def make_cube(half_extent: float = 0.5) -> TriangleMesh:
    """Axis-aligned cube, 8 vertices / 12 triangles, outward normals."""
    h = half_extent
    v = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    quads = [
        (0, 1, 3, 2), (4, 6, 7, 5),   # -x, +x
        (0, 4, 5, 1), (2, 3, 7, 6),   # -y, +y
        (0, 2, 6, 4), (1, 5, 7, 3),   # -z, +z
    ]
    faces = []
    for q in quads:
        faces.extend(_fan(list(q)))
    return TriangleMesh.from_arrays(v, np.array(faces))


def make_icosphere(subdivisions: int = 0, radius: float = 1.0) -> TriangleMesh:
    """Icosahedron subdivided ``subdivisions`` times, projected to a sphere.

    Face counts: 20, 80, 320, 1280, 5120, ...
    """
    t = _GOLDEN
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)

    for _ in range(subdivisions):
        verts_list = list(verts)
        midpoint: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                m = verts_list[a] + verts_list[b]
                m = m / np.linalg.norm(m)
                midpoint[key] = len(verts_list)
                verts_list.append(m)
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc],
                              [ab, bc, ca]])
        verts = np.array(verts_list)
        faces = np.array(new_faces, dtype=np.int64)

    return TriangleMesh.from_arrays(verts * radius, faces)


# ---------------------------------------------------------------------------
# rays and hits


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-6:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class RayHit:
    point: np.ndarray
    face_id: int
    normal: np.ndarray  # oriented toward the ray origin: n . dir < 0
    distance: float


@dataclass(frozen=True)
class HitBatch:
    """Vectorized raycast result for a block of rays."""

    t: np.ndarray          # (R,), inf where missed
    face_id: np.ndarray    # (R,), -1 where missed
    points: np.ndarray     # (R, 3), undefined where missed
    normals: np.ndarray    # (R, 3), oriented toward origins
    mask: np.ndarray       # (R,) bool

    @property
    def any_hit(self) -> bool:
        return bool(self.mask.any())


class _Bvh:
    def __init__(self, bmin, bmax, left, right, start, count, order):
        self.bmin = bmin
        self.bmax = bmax
        self.left = left
        self.right = right
        self.start = start
        self.count = count
        self.order = order


def _build_bvh(triangles: np.ndarray) -> _Bvh:
    tri_min = triangles.min(axis=1)
    tri_max = triangles.max(axis=1)
    centroids = triangles.mean(axis=1)

    bmin, bmax, left, right, start, count = [], [], [], [], [], []
    order = np.arange(len(triangles))

    def new_node():
        for lst in (bmin, bmax, left, right, start, count):
            lst.append(None)
        return len(bmin) - 1

    stack = [(new_node(), 0, len(order))]
    while stack:
        node, lo, hi = stack.pop()
        idx = order[lo:hi]
        bmin[node] = tri_min[idx].min(axis=0)
        bmax[node] = tri_max[idx].max(axis=0)
        spread = np.ptp(centroids[idx], axis=0)
        if hi - lo <= _LEAF_SIZE or spread.max() == 0.0:
            left[node] = right[node] = -1
            start[node], count[node] = lo, hi - lo
            continue
        axis = int(np.argmax(spread))
        key = np.argsort(centroids[idx, axis], kind="stable")
        order[lo:hi] = idx[key]
        mid = lo + (hi - lo) // 2
        start[node], count[node] = 0, 0
        left[node] = new_node()
        right[node] = new_node()
        stack.append((left[node], lo, mid))
        stack.append((right[node], mid, hi))

    return _Bvh(np.array(bmin), np.array(bmax),
                np.array(left), np.array(right),
                np.array(start), np.array(count), order)


def _ray_frames(dirs: np.ndarray):
    """Watertight-test precomputation: axis permutation and shear."""
    kz = np.argmax(np.abs(dirs), axis=1)
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    dz = dirs[np.arange(len(dirs)), kz]
    swap = dz < 0.0
    kx[swap], ky[swap] = ky[swap], kx[swap]
    dx = dirs[np.arange(len(dirs)), kx]
    dy = dirs[np.arange(len(dirs)), ky]
    sz = 1.0 / dz
    return kx, ky, kz, dx * sz, dy * sz, sz


def _intersect_tris(origins, frames, tri_pts, ray_rows):
    """Watertight ray/triangle tests for rays x triangles.

    origins: (R, 3); tri_pts: (T, 3, 3); returns (t (R, T), valid (R, T)).
    ``ray_rows`` indexes into the precomputed frames.
    """
    kx, ky, kz, sx, sy, sz = (f[ray_rows] for f in frames)
    rel = tri_pts[None, :, :, :] - origins[:, None, None, :]  # (R, T, 3, 3)

    def coord(k):  # (R, T, 3): per-vertex coordinate k of each ray frame
        return np.take_along_axis(rel, k[:, None, None, None], axis=3)[..., 0]

    ax, ay, az = coord(kx), coord(ky), coord(kz)
    px = ax - sx[:, None, None] * az
    py = ay - sy[:, None, None] * az
    pz = sz[:, None, None] * az

    u = (px[:, :, 2] * py[:, :, 1]) - (py[:, :, 2] * px[:, :, 1])
    v = (px[:, :, 0] * py[:, :, 2]) - (py[:, :, 0] * px[:, :, 2])
    w = (px[:, :, 1] * py[:, :, 0]) - (py[:, :, 1] * px[:, :, 0])

    same_sign = ((u >= 0) & (v >= 0) & (w >= 0)) | ((u <= 0) & (v <= 0) & (w <= 0))
    det = u + v + w
    t_scaled = u * pz[:, :, 0] + v * pz[:, :, 1] + w * pz[:, :, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = t_scaled / det
    valid = same_sign & (det != 0.0) & (t >= RAY_EPS)
    return np.where(valid, t, np.inf), valid


def cast_rays(mesh: TriangleMesh, origins: np.ndarray,
              dirs: np.ndarray) -> HitBatch:
    """First hit of each ray through the BVH; backfaces are accepted and
    the returned normals are flipped toward the ray origins."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n_rays = len(origins)
    bvh = mesh.bvh
    tris = mesh.triangles

    tiny = 1e-30
    safe = np.where(np.abs(dirs) < tiny, np.copysign(tiny, dirs), dirs)
    inv = 1.0 / safe
    frames = _ray_frames(dirs)

    best_t = np.full(n_rays, np.inf)
    best_face = np.full(n_rays, -1, dtype=np.int64)

    stack: list[tuple[int, np.ndarray]] = [(0, np.arange(n_rays))]
    while stack:
        node, rows = stack.pop()
        o = origins[rows]
        iv = inv[rows]
        t1 = (bvh.bmin[node] - o) * iv
        t2 = (bvh.bmax[node] - o) * iv
        tnear = np.minimum(t1, t2).max(axis=1)
        tfar = np.maximum(t1, t2).min(axis=1)
        sel = (tnear <= tfar) & (tfar >= RAY_EPS) & (tnear <= best_t[rows])
        rows = rows[sel]
        if rows.size == 0:
            continue
        if bvh.count[node] > 0:
            lo = bvh.start[node]
            tri_ids = bvh.order[lo:lo + bvh.count[node]]
            t, valid = _intersect_tris(origins[rows], frames, tris[tri_ids], rows)
            t_min = t.min(axis=1)
            arg = t.argmin(axis=1)
            better = t_min < best_t[rows]
            upd = rows[better]
            best_t[upd] = t_min[better]
            best_face[upd] = tri_ids[arg[better]]
        else:
            stack.append((bvh.left[node], rows))
            stack.append((bvh.right[node], rows))

    mask = np.isfinite(best_t)
    points = origins + best_t[:, None].clip(max=1e30) * dirs
    normals = np.zeros_like(dirs)
    if mask.any():
        n = mesh.face_normals[best_face[mask]]
        flip = np.sign(np.einsum("ij,ij->i", n, dirs[mask]))
        normals[mask] = n * np.where(flip > 0, -1.0, 1.0)[:, None]
    return HitBatch(t=best_t, face_id=best_face, points=points,
                    normals=normals, mask=mask)


def cast_rays_brute(mesh: TriangleMesh, origins, dirs) -> HitBatch:
    """Moller-Trumbore scan over every triangle: the reference oracle the
    BVH path is tested against. O(rays x faces); keep meshes small."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    tris = mesh.triangles
    v0 = tris[:, 0]
    e1 = tris[:, 1] - v0
    e2 = tris[:, 2] - v0

    best_t = np.full(len(origins), np.inf)
    best_face = np.full(len(origins), -1, dtype=np.int64)
    chunk = max(1, 2_000_000 // max(1, len(tris)))
    for lo in range(0, len(origins), chunk):
        o = origins[lo:lo + chunk, None, :]
        d = dirs[lo:lo + chunk, None, :]
        pvec = np.cross(d, e2[None])
        det = np.einsum("rtk,tk->rt", pvec, e1)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_det = 1.0 / det
        tvec = o - v0[None]
        u = np.einsum("rtk,rtk->rt", tvec, pvec) * inv_det
        qvec = np.cross(tvec, e1[None])
        v = np.einsum("rtk,rtk->rt", qvec, d) * inv_det
        t = np.einsum("rtk,tk->rt", qvec, e2) * inv_det
        ok = (np.abs(det) > 1e-14) & (u >= 0) & (v >= 0) & (u + v <= 1) \
            & (t >= RAY_EPS)
        t = np.where(ok, t, np.inf)
        rows = np.arange(t.shape[0])
        arg = t.argmin(axis=1)
        tm = t[rows, arg]
        best_t[lo:lo + chunk] = tm
        best_face[lo:lo + chunk] = np.where(np.isfinite(tm), arg, -1)

    mask = np.isfinite(best_t)
    points = origins + best_t[:, None].clip(max=1e30) * dirs
    normals = np.zeros_like(dirs)
    if mask.any():
        n = mesh.face_normals[best_face[mask]]
        flip = np.sign(np.einsum("ij,ij->i", n, dirs[mask]))
        normals[mask] = n * np.where(flip > 0, -1.0, 1.0)[:, None]
    return HitBatch(t=best_t, face_id=best_face, points=points,
                    normals=normals, mask=mask)


def cast_ray(mesh: TriangleMesh, ray: Ray) -> RayHit | None:
    """First intersection of a single ray, or None on a miss."""
    batch = cast_rays(mesh, ray.origin[None], ray.direction[None])
    if not batch.mask[0]:
        return None
    return RayHit(point=batch.points[0], face_id=int(batch.face_id[0]),
                  normal=batch.normals[0], distance=float(batch.t[0]))


# ---------------------------------------------------------------------------
# cameras


@dataclass(frozen=True)
class Camera:
    """Pinhole camera looking at ``look_at`` (the origin by default)."""

    position: np.ndarray
    look_at: np.ndarray = field(default_factory=lambda: np.zeros(3))
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    fov_deg: float = 45.0
    height: int = 224
    width: int = 224

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(3)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "look_at",
                           np.asarray(self.look_at, dtype=np.float64).reshape(3))
        object.__setattr__(self, "up",
                           np.asarray(self.up, dtype=np.float64).reshape(3))
        if self.height < 8 or self.width < 8:
            raise ValueError("image size must be at least 8x8")
        if np.linalg.norm(pos) <= 1.0:
            raise ValueError("camera must sit outside the unit sphere")


def camera_rays(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-center rays: returns (origins (H*W, 3), dirs (H*W, 3))."""
    forward = camera.look_at - camera.position
    forward = forward / np.linalg.norm(forward)
    up = camera.up
    if abs(forward @ up) / np.linalg.norm(up) > 0.999:
        up = np.array([0.0, 0.0, 1.0])
        if abs(forward @ up) > 0.999:
            up = np.array([1.0, 0.0, 0.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    true_up = np.cross(right, forward)

    h, w = camera.height, camera.width
    tan_y = np.tan(np.deg2rad(camera.fov_deg) / 2.0)
    tan_x = tan_y * (w / h)
    xs = ((np.arange(w) + 0.5) / w * 2.0 - 1.0) * tan_x
    ys = (1.0 - (np.arange(h) + 0.5) / h * 2.0) * tan_y
    gx, gy = np.meshgrid(xs, ys)
    dirs = (forward[None, None]
            + gx[..., None] * right[None, None]
            + gy[..., None] * true_up[None, None]).reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.position, dirs.shape).copy()
    return origins, dirs


def sample_cameras(anchor, radius: float, sigma: float, n: int,
                   rng: np.random.Generator, fov_deg: float = 45.0,
                   height: int = 224, width: int = 224) -> list[Camera]:
    """Gaussian-perturbed positions around ``anchor * radius``, re-projected
    onto the radius sphere, all looking at the origin."""
    if radius <= 1.0:
        raise ValueError("camera radius must exceed the unit sphere")
    if sigma < 0.0:
        raise ValueError("sigma must be non-negative")
    anchor = np.asarray(anchor, dtype=np.float64).reshape(3)
    anchor = anchor / np.linalg.norm(anchor)
    cams = []
    for _ in range(n):
        p = anchor * radius + sigma * rng.standard_normal(3)
        p = p / np.linalg.norm(p) * radius
        cams.append(Camera(position=p, fov_deg=fov_deg,
                           height=height, width=width))
    return cams
