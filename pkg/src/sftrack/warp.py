"""Tensor-product bicubic B-spline warp between texturemap and image space.

The warp maps 2D texturemap pixels to 2D image pixels. Fitting minimizes

    sum_i |eval(s_i) - t_i|^2 + lambda * B(warp)

where B is the bending energy of the spline over the (normalized) domain.
The source domain is mapped to the unit square before fitting so that the
smoothing weight is independent of texturemap resolution.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import InvalidDimensions, ParseError, SingularSystem
from .meshes import Mesh2D

DEFAULT_GRID = (8, 8)
DEFAULT_SMOOTHING = 1e-4


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle with positive area."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise InvalidDimensions(f"rectangle has non-positive area: {self}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @classmethod
    def around(cls, points, margin: float = 0.0) -> "Rect":
        pts = np.asarray(points, dtype=np.float64)
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        pad_x = margin + (1.0 if hi[0] - lo[0] == 0 else 0.0)
        pad_y = margin + (1.0 if hi[1] - lo[1] == 0 else 0.0)
        return cls(lo[0] - pad_x, lo[1] - pad_y, hi[0] + pad_x, hi[1] + pad_y)


def _basis(t: np.ndarray) -> np.ndarray:
    """Uniform cubic B-spline basis values for local coordinates t in [0,1]."""
    t2 = t * t
    t3 = t2 * t
    w = np.empty(t.shape + (4,))
    w[..., 0] = (1.0 - 3.0 * t + 3.0 * t2 - t3) / 6.0
    w[..., 1] = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0
    w[..., 2] = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0
    w[..., 3] = t3 / 6.0
    return w


def _basis_d1(t: np.ndarray) -> np.ndarray:
    t2 = t * t
    w = np.empty(t.shape + (4,))
    w[..., 0] = -(1.0 - t) ** 2 / 2.0
    w[..., 1] = (3.0 * t2 - 4.0 * t) / 2.0
    w[..., 2] = (-3.0 * t2 + 2.0 * t + 1.0) / 2.0
    w[..., 3] = t2 / 2.0
    return w


def _basis_d2(t: np.ndarray) -> np.ndarray:
    w = np.empty(t.shape + (4,))
    w[..., 0] = 1.0 - t
    w[..., 1] = 3.0 * t - 2.0
    w[..., 2] = -3.0 * t + 1.0
    w[..., 3] = t
    return w


def _axis_cells(u: np.ndarray, n_ctrl: int) -> tuple[np.ndarray, np.ndarray]:
    """Map normalized coordinates to (cell index, local t) on one axis."""
    n_cells = n_ctrl - 3
    s = np.clip(u, 0.0, 1.0) * n_cells
    cell = np.minimum(s.astype(np.int64), n_cells - 1)
    return cell, s - cell


def _gauss_legendre4() -> tuple[np.ndarray, np.ndarray]:
    # nodes/weights on [0, 1]; exact for polynomials up to degree 7
    x, w = np.polynomial.legendre.leggauss(4)
    return (x + 1.0) / 2.0, w / 2.0


def _gram_1d(n_ctrl: int, deriv: int) -> np.ndarray:
    """Gram matrix of the B-spline basis (or a derivative) over [0, 1]."""
    n_cells = n_ctrl - 3
    nodes, weights = _gauss_legendre4()
    basis = {0: _basis, 1: _basis_d1, 2: _basis_d2}[deriv]
    vals = basis(nodes) * float(n_cells) ** deriv  # chain rule per derivative
    g = np.zeros((n_ctrl, n_ctrl))
    cell_block = np.einsum("q,qi,qj->ij", weights / n_cells, vals, vals)
    for c in range(n_cells):
        g[c : c + 4, c : c + 4] += cell_block
    return g


def bending_matrix(nu: int, nv: int) -> np.ndarray:
    """Quadratic form of int (f_uu^2 + 2 f_uv^2 + f_vv^2) over the unit square.

    Coefficient layout is row-major with the u index major: k = iu * nv + iv.
    """
    g0u, g1u, g2u = _gram_1d(nu, 0), _gram_1d(nu, 1), _gram_1d(nu, 2)
    g0v, g1v, g2v = _gram_1d(nv, 0), _gram_1d(nv, 1), _gram_1d(nv, 2)
    return np.kron(g2u, g0v) + 2.0 * np.kron(g1u, g1v) + np.kron(g0u, g2v)


@dataclass(frozen=True)
class BicubicWarp:
    """Fitted warp: domain rectangle, control grid and coefficients.

    ``coefficients`` has shape (nu*nv, 2), row-major in the control grid
    (u index major), one column per output coordinate. Immutable; evaluation
    is a pure function.
    """

    domain: Rect
    grid: tuple[int, int]
    coefficients: np.ndarray
    smoothing_lambda: float

    def __post_init__(self):
        nu, nv = self.grid
        if nu < 4 or nv < 4:
            raise InvalidDimensions(f"need at least 4 control points per axis, got {self.grid}")
        coeffs = np.asarray(self.coefficients, dtype=np.float64)
        if coeffs.shape != (nu * nv, 2):
            raise ValueError(f"coefficients must have shape ({nu * nv}, 2), got {coeffs.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("coefficients must be finite")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "grid", (int(nu), int(nv)))
        object.__setattr__(self, "smoothing_lambda", float(self.smoothing_lambda))

    def _normalize(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        u = (points[:, 0] - self.domain.xmin) / self.domain.width
        v = (points[:, 1] - self.domain.ymin) / self.domain.height
        return u, v

    def bending_energy(self) -> float:
        """Total bending energy of both output coordinates (normalized domain)."""
        b = bending_matrix(*self.grid)
        return float(sum(self.coefficients[:, k] @ b @ self.coefficients[:, k] for k in (0, 1)))

    def to_dict(self) -> dict:
        return {
            "domain": [self.domain.xmin, self.domain.ymin, self.domain.xmax, self.domain.ymax],
            "grid": [self.grid[0], self.grid[1]],
            "smoothing_lambda": self.smoothing_lambda,
            "coefficients": {
                "x": [float(c) for c in self.coefficients[:, 0]],
                "y": [float(c) for c in self.coefficients[:, 1]],
            },
        }

    @classmethod
    def from_dict(cls, data: dict, path=None) -> "BicubicWarp":
        try:
            dom = Rect(*[float(x) for x in data["domain"]])
            grid = (int(data["grid"][0]), int(data["grid"][1]))
            coeffs = np.stack(
                [
                    np.asarray(data["coefficients"]["x"], dtype=np.float64),
                    np.asarray(data["coefficients"]["y"], dtype=np.float64),
                ],
                axis=1,
            )
            return cls(dom, grid, coeffs, float(data["smoothing_lambda"]))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ParseError(f"invalid warp document: {exc}", path=path) from exc


def _design_matrix(u: np.ndarray, v: np.ndarray, nu: int, nv: int) -> np.ndarray:
    """Dense (n, nu*nv) collocation matrix of tensor basis weights."""
    cu, tu = _axis_cells(u, nu)
    cv, tv = _axis_cells(v, nv)
    wu = _basis(tu)
    wv = _basis(tv)
    n = len(u)
    a = np.zeros((n, nu * nv))
    rows = np.arange(n)
    for i in range(4):
        for j in range(4):
            a[rows, (cu + i) * nv + (cv + j)] = wu[:, i] * wv[:, j]
    return a


def fit_bbs(
    source,
    target,
    domain: Rect,
    grid: tuple[int, int] = DEFAULT_GRID,
    smoothing_lambda: float = DEFAULT_SMOOTHING,
    weights=None,
) -> BicubicWarp:
    """Least-squares fit of the warp mapping ``source`` points to ``target``.

    Source points are clamped into ``domain``; the bending-energy penalty is
    weighted by ``smoothing_lambda`` (computed on the normalized domain).
    Raises SingularSystem when the regularized normal equations cannot pin the
    coefficients (e.g. smoothing_lambda = 0 with too few points).
    """
    src = np.asarray(source, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 2 or src.shape != tgt.shape:
        raise ValueError(f"source/target must both be (n, 2), got {src.shape} and {tgt.shape}")
    if len(src) < 1:
        raise ValueError("need at least one correspondence")
    if smoothing_lambda < 0:
        raise ValueError("smoothing_lambda must be nonnegative")
    nu, nv = grid
    if nu < 4 or nv < 4:
        raise InvalidDimensions(f"need at least 4 control points per axis, got {grid}")
    u = np.clip((src[:, 0] - domain.xmin) / domain.width, 0.0, 1.0)
    v = np.clip((src[:, 1] - domain.ymin) / domain.height, 0.0, 1.0)
    a = _design_matrix(u, v, nu, nv)
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(src),) or np.any(w < 0):
            raise ValueError("weights must be nonnegative with one entry per pair")
    else:
        w = None
    if smoothing_lambda >= 1e-6:
        aw = a if w is None else a * w[:, None]
        gram = a.T @ aw + smoothing_lambda * bending_matrix(nu, nv)
        rhs = aw.T @ tgt
        try:
            factor = cho_factor(gram, lower=True, check_finite=False)
            coeffs = cho_solve(factor, rhs, check_finite=False)
        except LinAlgError as exc:
            raise SingularSystem(f"normal equations are singular: {exc}") from exc
    else:
        # near-zero smoothing: the normal equations lose too many digits, so
        # minimize the same functional as a stacked least-squares problem
        rows = a if w is None else a * np.sqrt(w)[:, None]
        tgt_rows = tgt if w is None else tgt * np.sqrt(w)[:, None]
        stacked = rows
        stacked_rhs = tgt_rows
        if smoothing_lambda > 0:
            evals, evecs = np.linalg.eigh(bending_matrix(nu, nv))
            root = (np.sqrt(np.clip(evals, 0.0, None)) * evecs).T
            stacked = np.vstack([rows, np.sqrt(smoothing_lambda) * root])
            stacked_rhs = np.vstack([tgt_rows, np.zeros((nu * nv, 2))])
        coeffs, _, rank, _ = np.linalg.lstsq(stacked, stacked_rhs, rcond=None)
        if rank < nu * nv:
            raise SingularSystem(
                f"fit is rank-deficient ({rank} < {nu * nv}); add smoothing or points"
            )
    if not np.all(np.isfinite(coeffs)):
        raise SingularSystem("fit produced non-finite coefficients")
    return BicubicWarp(domain, (nu, nv), coeffs, smoothing_lambda)


def eval_bbs(warp: BicubicWarp, points) -> np.ndarray:
    """Evaluate the warp at 2D points (clamped to the domain)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    nu, nv = warp.grid
    u, v = warp._normalize(pts)
    cu, tu = _axis_cells(u, nu)
    cv, tv = _axis_cells(v, nv)
    wu = _basis(tu)  # (n, 4)
    wv = _basis(tv)
    c = warp.coefficients.reshape(nu, nv, 2)
    gathered = c[(cu[:, None, None] + np.arange(4)[None, :, None]),
                 (cv[:, None, None] + np.arange(4)[None, None, :])]  # (n,4,4,2)
    return np.einsum("ni,nj,nijd->nd", wu, wv, gathered)


def transfer_mesh(warp: BicubicWarp, mesh: Mesh2D) -> Mesh2D:
    """Warp every vertex; topology is preserved."""
    return mesh.with_vertices(eval_bbs(warp, mesh.vertices))


def save_warp(warp: BicubicWarp, path) -> None:
    Path(path).write_text(json.dumps(warp.to_dict(), indent=1) + "\n")


def load_warp(path) -> BicubicWarp:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc.msg), path=path, line=exc.lineno) from exc
    return BicubicWarp.from_dict(data, path=path)
