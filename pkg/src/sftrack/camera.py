"""Pinhole camera intrinsics: projection and pixel ray casting."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidDimensions, ParseError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidDimensions(f"focal lengths must be positive: {self.fx}, {self.fy}")

    def project(self, points3d) -> np.ndarray:
        """Perspective projection (u, v) = (fx*X/Z + cx, fy*Y/Z + cy)."""
        p = np.asarray(points3d, dtype=np.float64)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        if np.any(p[:, 2] <= 0):
            raise ValueError("cannot project points at or behind the camera (Z <= 0)")
        uv = np.empty((len(p), 2))
        uv[:, 0] = self.fx * p[:, 0] / p[:, 2] + self.cx
        uv[:, 1] = self.fy * p[:, 1] / p[:, 2] + self.cy
        return uv[0] if single else uv

    def ray_directions(self, pixels) -> np.ndarray:
        """Unit direction of the camera ray through each pixel."""
        px = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        d = np.empty((len(px), 3))
        d[:, 0] = (px[:, 0] - self.cx) / self.fx
        d[:, 1] = (px[:, 1] - self.cy) / self.fy
        d[:, 2] = 1.0
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d

    def to_dict(self) -> dict:
        out = {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}
        if self.width is not None:
            out["width"] = self.width
        if self.height is not None:
            out["height"] = self.height
        return out


DEFAULT_INTRINSICS = CameraIntrinsics(fx=800.0, fy=800.0, cx=320.0, cy=240.0,
                                      width=640, height=480)


def intrinsics_from_dict(data: dict, path=None) -> CameraIntrinsics:
    try:
        return CameraIntrinsics(
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            cx=float(data["cx"]),
            cy=float(data["cy"]),
            width=int(data["width"]) if "width" in data else None,
            height=int(data["height"]) if "height" in data else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid intrinsics document: {exc}", path=path) from exc


def save_intrinsics(intr: CameraIntrinsics, path) -> None:
    Path(path).write_text(json.dumps(intr.to_dict(), indent=1) + "\n")


def load_intrinsics(path) -> CameraIntrinsics:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc.msg), path=path, line=exc.lineno) from exc
    return intrinsics_from_dict(data, path=path)
