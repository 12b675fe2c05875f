"""Pure-Python fallback for the compiled particle-solver kernels.

Mirrors sftrack._kernels operation-for-operation (Python floats are IEEE
doubles, math.sqrt is correctly rounded), so results are bit-identical to the
compiled backend. Markedly slower; selected only when the extension is
unavailable or SFTRACK_PURE_PYTHON is set.
"""
from __future__ import annotations

import math

import numpy as np

NAME = "python"


def distance_sweeps(pos, edges, rest, inv_mass, n_sweeps):
    """Gauss-Seidel sweeps over edge distance constraints, in place."""
    p = pos.tolist()
    e = edges.tolist()
    lengths = rest.tolist()
    w = inv_mass.tolist()
    for _ in range(n_sweeps):
        for k, (a, b) in enumerate(e):
            pa = p[a]
            pb = p[b]
            dx = pa[0] - pb[0]
            dy = pa[1] - pb[1]
            dz = pa[2] - pb[2]
            dist = math.sqrt(dx * dx + dy * dy + dz * dz)
            if dist < 1e-12:
                raise ValueError(f"edge {k} collapsed")
            wa = w[a]
            wb = w[b]
            wsum = wa + wb
            if wsum == 0.0:
                continue
            f = (dist - lengths[k]) / (dist * wsum)
            pa[0] = pa[0] - wa * f * dx
            pa[1] = pa[1] - wa * f * dy
            pa[2] = pa[2] - wa * f * dz
            pb[0] = pb[0] + wb * f * dx
            pb[1] = pb[1] + wb * f * dy
            pb[2] = pb[2] + wb * f * dz
    pos[:] = np.asarray(p, dtype=np.float64)


def project_sightlines(pos, idx, dirs, z_min):
    """Move each indexed particle to its closest point on the pixel ray."""
    z_min = float(z_min)
    for k in range(len(idx)):
        i = int(idx[k])
        ax = float(dirs[k, 0])
        ay = float(dirs[k, 1])
        az = float(dirs[k, 2])
        t = float(pos[i, 0]) * ax + float(pos[i, 1]) * ay + float(pos[i, 2]) * az
        if t < z_min:
            t = z_min
        pos[i, 0] = t * ax
        pos[i, 1] = t * ay
        pos[i, 2] = t * az


def absorb_to_spheres(pos, idx, centers, radii):
    """Pull particles outside their sphere onto the nearest surface point."""
    for k in range(len(idx)):
        i = int(idx[k])
        cx = float(centers[k, 0])
        cy = float(centers[k, 1])
        cz = float(centers[k, 2])
        dx = float(pos[i, 0]) - cx
        dy = float(pos[i, 1]) - cy
        dz = float(pos[i, 2]) - cz
        dist = math.sqrt(dx * dx + dy * dy + dz * dz)
        r = float(radii[k])
        if dist == 0.0:
            # degenerate direction: fixed +Z displacement keeps determinism
            pos[i, 0] = cx
            pos[i, 1] = cy
            pos[i, 2] = cz + r
        elif dist > r:
            scale = r / dist
            pos[i, 0] = cx + scale * dx
            pos[i, 1] = cy + scale * dy
            pos[i, 2] = cz + scale * dz
