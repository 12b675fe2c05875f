"""Offline template: rest mesh, its texturemap alignment and camera prior."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, intrinsics_from_dict, load_intrinsics
from .errors import InvalidDimensions, ParseError, TopologyMismatch
from .meshes import (
    Mesh2D,
    Mesh3D,
    grid_triangles,
    grid_vertices_2d,
    load_mesh,
    mesh_from_dict,
    mesh_to_dict,
)

DEFAULT_POSE_DEPTH = 1.0  # meters; fronto-parallel initial pose


@dataclass(frozen=True)
class Template:
    """Rest mesh, aligned texturemap mesh, texturemap size and intrinsics."""

    rest_mesh: Mesh3D
    texture_mesh: Mesh2D
    texture_size: tuple[int, int]
    intrinsics: CameraIntrinsics
    initial_pose: Mesh3D

    def __post_init__(self):
        if not np.array_equal(self.rest_mesh.triangles, self.texture_mesh.triangles):
            raise TopologyMismatch("rest mesh and texture mesh topologies differ")
        if not np.array_equal(self.rest_mesh.triangles, self.initial_pose.triangles):
            raise TopologyMismatch("initial pose does not share the rest topology")
        w, h = self.texture_size
        if w <= 0 or h <= 0:
            raise InvalidDimensions(f"texture size must be positive, got {self.texture_size}")
        v = self.texture_mesh.vertices
        if v[:, 0].min() < -1e-9 or v[:, 1].min() < -1e-9 or v[:, 0].max() > w + 1e-9 or v[
            :, 1
        ].max() > h + 1e-9:
            raise InvalidDimensions("texture mesh vertices fall outside the texturemap")

    def to_dict(self) -> dict:
        return {
            "rest_mesh": mesh_to_dict(self.rest_mesh),
            "texture_mesh": mesh_to_dict(self.texture_mesh),
            "texture_size": [self.texture_size[0], self.texture_size[1]],
            "intrinsics": self.intrinsics.to_dict(),
            "initial_pose": mesh_to_dict(self.initial_pose),
        }


def build_template(
    width: float,
    height: float,
    rows: int,
    cols: int,
    texture_size: tuple[int, int],
    intrinsics: CameraIntrinsics,
    pose_depth: float = DEFAULT_POSE_DEPTH,
) -> Template:
    """Template for a planar rectangular surface of ``width`` x ``height`` m.

    The rest mesh is a regular rows x cols grid centered on the origin; the
    texture mesh is the same grid scaled to span the full texturemap
    rectangle; the initial pose floats the rest mesh fronto-parallel on the
    optical axis at ``pose_depth``.
    """
    if width <= 0 or height <= 0:
        raise InvalidDimensions(f"physical size must be positive, got {width}x{height}")
    if rows < 2 or cols < 2:
        raise InvalidDimensions(f"mesh grid must be at least 2x2, got {rows}x{cols}")
    tw, th = texture_size
    if tw <= 0 or th <= 0:
        raise InvalidDimensions(f"texture size must be positive, got {texture_size}")
    tris = grid_triangles(rows, cols)
    xy = grid_vertices_2d(rows, cols, width / (cols - 1), height / (rows - 1), centered=True)
    rest = Mesh3D(np.column_stack([xy, np.zeros(len(xy))]), tris)
    tex_xy = grid_vertices_2d(rows, cols, tw / (cols - 1), th / (rows - 1), centered=False)
    texture = Mesh2D(tex_xy, tris)
    pose = rest.with_vertices(rest.vertices + np.array([0.0, 0.0, pose_depth]))
    return Template(rest, texture, (int(tw), int(th)), intrinsics, pose)


def import_template(
    mesh3d_path,
    mesh2d_path,
    intrinsics_path,
    texture_size: tuple[int, int] | None = None,
    pose_depth: float = DEFAULT_POSE_DEPTH,
) -> Template:
    """Template from user-prepared mesh and intrinsics files.

    The 3D mesh may be JSON or OBJ; the 2D mesh is JSON. When no texturemap
    size is given, the smallest rectangle containing the 2D mesh is used.
    Raises TopologyMismatch when the meshes do not pair up and ParseError
    (with location) on malformed files.
    """
    mesh3d = load_mesh(mesh3d_path)
    if not isinstance(mesh3d, Mesh3D):
        raise ParseError("expected a 3D mesh", path=mesh3d_path)
    mesh2d = load_mesh(mesh2d_path)
    if not isinstance(mesh2d, Mesh2D):
        raise ParseError("expected a 2D mesh", path=mesh2d_path)
    if mesh3d.triangles.shape != mesh2d.triangles.shape or not np.array_equal(
        mesh3d.triangles, mesh2d.triangles
    ):
        raise TopologyMismatch(
            f"{mesh3d_path} and {mesh2d_path} do not share triangle topology"
        )
    intr = load_intrinsics(intrinsics_path)
    if texture_size is None:
        xmax, ymax = mesh2d.vertices.max(axis=0)
        texture_size = (int(np.ceil(xmax)), int(np.ceil(ymax)))
    center = mesh3d.vertices.mean(axis=0)
    pose = mesh3d.with_vertices(
        mesh3d.vertices - center + np.array([0.0, 0.0, pose_depth])
    )
    return Template(mesh3d, mesh2d, texture_size, intr, pose)


def template_from_dict(data: dict, path=None) -> Template:
    try:
        rest = mesh_from_dict(data["rest_mesh"], path)
        texture = mesh_from_dict(data["texture_mesh"], path)
        pose = mesh_from_dict(data["initial_pose"], path)
        size = (int(data["texture_size"][0]), int(data["texture_size"][1]))
        intr = intrinsics_from_dict(data["intrinsics"], path)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ParseError(f"invalid template document: {exc}", path=path) from exc
    if not isinstance(rest, Mesh3D) or not isinstance(texture, Mesh2D) or not isinstance(
        pose, Mesh3D
    ):
        raise ParseError("template meshes have wrong dimensions", path=path)
    return Template(rest, texture, size, intr, pose)


def save_template(template: Template, path) -> None:
    Path(path).write_text(json.dumps(template.to_dict(), indent=1) + "\n")


def load_template(path) -> Template:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc.msg), path=path, line=exc.lineno) from exc
    return template_from_dict(data, path)
