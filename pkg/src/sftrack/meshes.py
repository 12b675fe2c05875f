"""Meshes, Delaunay triangulation, neighbor queries and barycentric transfer.

All types are immutable after construction and all operations are pure
functions, so values can be shared freely across threads.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay as _QhullDelaunay
from scipy.spatial import QhullError
from scipy.spatial.distance import pdist

from .errors import (
    DegenerateInput,
    DegenerateTriangle,
    IndexOutOfRange,
    ParseError,
)

_AREA_EPS = 1e-12  # px^2 (or m^2); below this a triangle is degenerate


def _as_points(points, dim: int, name: str) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"{name} must have shape (n, {dim}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def _as_triangles(triangles, n_vertices: int) -> np.ndarray:
    tri = np.asarray(triangles, dtype=np.int64)
    if tri.ndim != 2 or tri.shape[1] != 3:
        raise ValueError(f"triangles must have shape (t, 3), got {tri.shape}")
    if tri.size and (tri.min() < 0 or tri.max() >= n_vertices):
        raise IndexOutOfRange(
            f"triangle indices must lie in [0, {n_vertices}), got "
            f"[{tri.min()}, {tri.max()}]"
        )
    return tri


def triangle_edges(triangles: np.ndarray) -> np.ndarray:
    """Unique unordered vertex pairs appearing in a triangle list."""
    tri = np.asarray(triangles, dtype=np.int64)
    if tri.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


@dataclass(frozen=True)
class Mesh3D:
    """Triangle mesh in 3D (meters). Edges and rest lengths are derived.

    Invariants checked on construction: all indices valid, every triangle has
    nonzero area, every derived edge has positive rest length.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray = field(init=False, repr=False)
    rest_lengths: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = _as_points(self.vertices, 3, "vertices")
        t = _as_triangles(self.triangles, len(v))
        a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        if t.size and areas.min() <= _AREA_EPS:
            raise DegenerateTriangle(
                f"triangle {int(areas.argmin())} has near-zero area"
            )
        edges = triangle_edges(t)
        lengths = np.linalg.norm(v[edges[:, 0]] - v[edges[:, 1]], axis=1)
        if edges.size and lengths.min() <= 0.0:
            raise DegenerateInput("zero-length edge in mesh")
        v.setflags(write=False)
        t.setflags(write=False)
        edges.setflags(write=False)
        lengths.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "rest_lengths", lengths)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def with_vertices(self, vertices) -> "Mesh3D":
        """Same topology with replaced vertex positions."""
        return Mesh3D(np.asarray(vertices, dtype=np.float64), self.triangles)

    def diagonal(self) -> float:
        """Length of the bounding-box diagonal (meters)."""
        span = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(span))


@dataclass(frozen=True)
class Mesh2D:
    """Triangle mesh in 2D (pixels); topology is shared with a Mesh3D."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = _as_points(self.vertices, 2, "vertices")
        t = _as_triangles(self.triangles, len(v))
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def with_vertices(self, vertices) -> "Mesh2D":
        return Mesh2D(np.asarray(vertices, dtype=np.float64), self.triangles)

    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the vertex set."""
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])


def same_topology(a: Mesh2D | Mesh3D, b: Mesh2D | Mesh3D) -> bool:
    return a.triangles.shape == b.triangles.shape and bool(
        np.array_equal(a.triangles, b.triangles)
    )


@dataclass(frozen=True)
class BarycentricAnchor:
    """A point expressed as weights over one triangle of a mesh."""

    triangle_index: int
    weights: tuple[float, float, float]

    def __post_init__(self):
        s = self.weights[0] + self.weights[1] + self.weights[2]
        if abs(s - 1.0) > 1e-9:
            raise ValueError(f"barycentric weights must sum to 1, got {s!r}")


@dataclass(frozen=True)
class Triangulation:
    """Delaunay triangulation with per-point first-order neighbor sets."""

    n_points: int
    triangles: np.ndarray
    _indptr: np.ndarray = field(repr=False)
    _indices: np.ndarray = field(repr=False)

    def neighbor_array(self, i: int) -> np.ndarray:
        """Sorted array of first-order neighbors of point ``i``."""
        if not 0 <= i < self.n_points:
            raise IndexOutOfRange(f"point {i} not in [0, {self.n_points})")
        return self._indices[self._indptr[i] : self._indptr[i + 1]]


def delaunay(points) -> Triangulation:
    """Delaunay-triangulate 2D points.

    Raises DegenerateInput for fewer than 3 points or an all-collinear set.
    """
    pts = _as_points(points, 2, "points")
    if len(pts) < 3:
        raise DegenerateInput(f"need at least 3 points, got {len(pts)}")
    try:
        qh = _QhullDelaunay(pts)
    except QhullError as exc:
        raise DegenerateInput(f"degenerate point set: {exc}") from exc
    if qh.simplices.size == 0:
        raise DegenerateInput("triangulation produced no triangles")
    indptr, indices = qh.vertex_neighbor_vertices
    # sort each neighbor slice so lookups are order-independent
    indptr = indptr.astype(np.int64)
    indices = indices.astype(np.int64)
    rows = np.repeat(np.arange(len(pts)), np.diff(indptr))
    indices = indices[np.lexsort((indices, rows))]
    tri = np.sort(qh.simplices.astype(np.int64), axis=1)
    tri = tri[np.lexsort((tri[:, 2], tri[:, 1], tri[:, 0]))]
    tri.setflags(write=False)
    indptr.setflags(write=False)
    indices.setflags(write=False)
    return Triangulation(len(pts), tri, indptr, indices)


def first_order_neighbors(t: Triangulation, i: int) -> set[int]:
    """All points sharing a triangle edge with point ``i`` (never ``i``)."""
    return set(int(j) for j in t.neighbor_array(i))


# ---------------------------------------------------------------------------
# barycentric transfer


def _triangle_frames(mesh: Mesh2D):
    """Per-triangle origin, edge matrix and its inverse (2x2), plus |det|."""
    v = mesh.vertices
    t = mesh.triangles
    v0 = v[t[:, 0]]
    e1 = v[t[:, 1]] - v0
    e2 = v[t[:, 2]] - v0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    return v0, e1, e2, det


def _point_segment_distance(p, a, b):
    """Distance from points p (n,2) to segments a->b (m,2), result (n,m)."""
    ab = b - a
    denom = np.einsum("md,md->m", ab, ab)
    denom = np.where(denom == 0.0, 1.0, denom)
    ap = p[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("nmd,md->nm", ap, ab) / denom, 0.0, 1.0)
    closest = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    return np.linalg.norm(p[:, None, :] - closest, axis=2)


def barycentric_anchors(points, mesh: Mesh2D) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized anchor computation for many points at once.

    Returns (triangle_indices (n,), weights (n,3)). Points inside the mesh get
    their containing triangle (lowest index on ties) and convex weights; points
    outside get the nearest triangle with extrapolated weights that still
    reproduce the point exactly.
    """
    pts = _as_points(points, 2, "points")
    if mesh.triangles.size == 0:
        raise DegenerateInput("mesh has no triangles")
    v0, e1, e2, det = _triangle_frames(mesh)
    if np.any(np.abs(det) <= 2.0 * _AREA_EPS):
        # only an error if such a triangle ends up selected; mask it out of
        # the containment search and re-check on selection below
        pass
    d = pts[:, None, :] - v0[None, :, :]  # (n, t, 2)
    safe_det = np.where(det == 0.0, 1.0, det)
    w1 = (d[:, :, 0] * e2[None, :, 1] - d[:, :, 1] * e2[None, :, 0]) / safe_det
    w2 = (e1[None, :, 0] * d[:, :, 1] - e1[None, :, 1] * d[:, :, 0]) / safe_det
    w0 = 1.0 - w1 - w2
    tol = 1e-12
    inside = (
        (w0 >= -tol)
        & (w1 >= -tol)
        & (w2 >= -tol)
        & (np.abs(det)[None, :] > 2.0 * _AREA_EPS)
    )
    has_inside = inside.any(axis=1)
    chosen = np.empty(len(pts), dtype=np.int64)
    chosen[has_inside] = np.argmax(inside[has_inside], axis=1)
    if not has_inside.all():
        out_pts = pts[~has_inside]
        tv = mesh.vertices[mesh.triangles]  # (t, 3, 2)
        dist = np.minimum(
            _point_segment_distance(out_pts, tv[:, 0], tv[:, 1]),
            np.minimum(
                _point_segment_distance(out_pts, tv[:, 1], tv[:, 2]),
                _point_segment_distance(out_pts, tv[:, 2], tv[:, 0]),
            ),
        )
        chosen[~has_inside] = np.argmin(dist, axis=1)
    if np.any(np.abs(det[chosen]) <= 2.0 * _AREA_EPS):
        bad = int(chosen[np.abs(det[chosen]) <= 2.0 * _AREA_EPS][0])
        raise DegenerateTriangle(f"triangle {bad} has near-zero area")
    rows = np.arange(len(pts))
    weights = np.stack([w0[rows, chosen], w1[rows, chosen], w2[rows, chosen]], axis=1)
    return chosen, weights


def barycentric_coords(point, mesh: Mesh2D) -> BarycentricAnchor:
    """Anchor a single 2D point to a mesh triangle."""
    tri, w = barycentric_anchors(np.asarray(point, dtype=np.float64)[None, :], mesh)
    return BarycentricAnchor(int(tri[0]), (float(w[0, 0]), float(w[0, 1]), float(w[0, 2])))


def apply_anchors(
    tri_indices: np.ndarray, weights: np.ndarray, mesh: Mesh2D | Mesh3D
) -> np.ndarray:
    """Evaluate many anchors on a (2D or 3D) mesh sharing the topology."""
    tri_indices = np.asarray(tri_indices, dtype=np.int64)
    if tri_indices.size and (
        tri_indices.min() < 0 or tri_indices.max() >= len(mesh.triangles)
    ):
        raise IndexOutOfRange("anchor triangle index out of range")
    corners = mesh.vertices[mesh.triangles[tri_indices]]  # (n, 3, dim)
    return np.einsum("nk,nkd->nd", np.asarray(weights, dtype=np.float64), corners)


def apply_barycentric(anchor: BarycentricAnchor, mesh: Mesh2D | Mesh3D) -> np.ndarray:
    """Weighted sum of the anchored triangle's vertices."""
    out = apply_anchors(
        np.array([anchor.triangle_index]), np.array([anchor.weights]), mesh
    )
    return out[0]


def mean_pairwise_distance(mesh: Mesh2D) -> float:
    """Mean Euclidean distance over all unordered vertex pairs (pixels)."""
    if mesh.n_vertices < 2:
        raise DegenerateInput("need at least 2 vertices")
    return float(pdist(mesh.vertices).mean())


# ---------------------------------------------------------------------------
# regular grids (shared by the template builder and the synthetic bench)


def grid_triangles(rows: int, cols: int) -> np.ndarray:
    """Two triangles per quad with a fixed diagonal; vertices are row-major."""
    tris = []
    for r in range(rows - 1):
        for c in range(cols - 1):
            v00 = r * cols + c
            v01 = v00 + 1
            v10 = v00 + cols
            v11 = v10 + 1
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return np.asarray(tris, dtype=np.int64)


def grid_vertices_2d(rows: int, cols: int, dx: float, dy: float, centered: bool = True):
    """Row-major planar grid coordinates (x along columns, y along rows)."""
    c, r = np.meshgrid(np.arange(cols), np.arange(rows))
    x = c.ravel() * dx
    y = r.ravel() * dy
    if centered:
        x = x - (cols - 1) * dx / 2.0
        y = y - (rows - 1) * dy / 2.0
    return np.stack([x, y], axis=1).astype(np.float64)


def build_grid_mesh3d(rows: int, cols: int, dx: float, dy: float | None = None) -> Mesh3D:
    """Planar z=0 grid mesh centered on the origin."""
    if dy is None:
        dy = dx
    xy = grid_vertices_2d(rows, cols, dx, dy, centered=True)
    verts = np.column_stack([xy, np.zeros(len(xy))])
    return Mesh3D(verts, grid_triangles(rows, cols))


# ---------------------------------------------------------------------------
# file formats


def mesh_to_dict(mesh: Mesh2D | Mesh3D) -> dict:
    return {
        "vertices": [[float(x) for x in v] for v in mesh.vertices],
        "triangles": [[int(i) for i in t] for t in mesh.triangles],
    }


def mesh_from_dict(data: dict, path=None) -> Mesh2D | Mesh3D:
    try:
        vertices = np.asarray(data["vertices"], dtype=np.float64)
        triangles = data["triangles"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid mesh document: {exc}", path=path) from exc
    if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
        raise ParseError(
            f"mesh vertices must be [x,y] or [x,y,z], got shape {vertices.shape}",
            path=path,
        )
    cls = Mesh2D if vertices.shape[1] == 2 else Mesh3D
    return cls(vertices, np.asarray(triangles, dtype=np.int64))


def save_mesh_json(mesh: Mesh2D | Mesh3D, path) -> None:
    Path(path).write_text(json.dumps(mesh_to_dict(mesh), indent=1) + "\n")


def load_mesh_json(path) -> Mesh2D | Mesh3D:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc.msg), path=path, line=exc.lineno) from exc
    return mesh_from_dict(data, path=path)


def save_mesh_obj(mesh: Mesh3D, path) -> None:
    """Wavefront-style v/f text for a 3D mesh (1-based face indices)."""
    lines = [
        f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}" for v in mesh.vertices
    ]
    lines += [f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}" for t in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh_obj(path) -> Mesh3D:
    verts: list[list[float]] = []
    tris: list[list[int]] = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                # accept "f 1 2 3" and "f 1/1 2/2 3/3"
                tris.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
        except (ValueError, IndexError) as exc:
            raise ParseError(f"bad OBJ record {line!r}", path=path, line=lineno) from exc
    if not verts:
        raise ParseError("no vertices found", path=path)
    return Mesh3D(np.asarray(verts), np.asarray(tris, dtype=np.int64))


def load_mesh(path) -> Mesh2D | Mesh3D:
    """Dispatch on file suffix: .obj is Wavefront text, anything else JSON."""
    if str(path).lower().endswith(".obj"):
        return load_mesh_obj(path)
    return load_mesh_json(path)
