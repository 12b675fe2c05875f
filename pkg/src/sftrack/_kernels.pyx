# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops of the particle solver.

Operation order must match sftrack._kernels_py exactly so that both backends
produce bit-identical results (no fused multiply-adds, no reassociation).
"""
from libc.math cimport sqrt

NAME = "compiled"


def distance_sweeps(double[:, ::1] pos, const long long[:, ::1] edges,
                    const double[::1] rest, const double[::1] inv_mass, Py_ssize_t n_sweeps):
    """Gauss-Seidel sweeps over edge distance constraints, in place."""
    cdef Py_ssize_t n_edges = edges.shape[0]
    cdef Py_ssize_t s, e, a, b
    cdef double dx, dy, dz, dist, wa, wb, wsum, f
    for s in range(n_sweeps):
        for e in range(n_edges):
            a = <Py_ssize_t>edges[e, 0]
            b = <Py_ssize_t>edges[e, 1]
            dx = pos[a, 0] - pos[b, 0]
            dy = pos[a, 1] - pos[b, 1]
            dz = pos[a, 2] - pos[b, 2]
            dist = sqrt(dx * dx + dy * dy + dz * dz)
            if dist < 1e-12:
                raise ValueError(f"edge {e} collapsed")
            wa = inv_mass[a]
            wb = inv_mass[b]
            wsum = wa + wb
            if wsum == 0.0:
                continue
            f = (dist - rest[e]) / (dist * wsum)
            pos[a, 0] = pos[a, 0] - wa * f * dx
            pos[a, 1] = pos[a, 1] - wa * f * dy
            pos[a, 2] = pos[a, 2] - wa * f * dz
            pos[b, 0] = pos[b, 0] + wb * f * dx
            pos[b, 1] = pos[b, 1] + wb * f * dy
            pos[b, 2] = pos[b, 2] + wb * f * dz


def project_sightlines(double[:, ::1] pos, const long long[::1] idx,
                       const double[:, ::1] dirs, double z_min):
    """Move each indexed particle to its closest point on the pixel ray."""
    cdef Py_ssize_t k, i
    cdef double ax, ay, az, t
    for k in range(idx.shape[0]):
        i = <Py_ssize_t>idx[k]
        ax = dirs[k, 0]
        ay = dirs[k, 1]
        az = dirs[k, 2]
        t = pos[i, 0] * ax + pos[i, 1] * ay + pos[i, 2] * az
        if t < z_min:
            t = z_min
        pos[i, 0] = t * ax
        pos[i, 1] = t * ay
        pos[i, 2] = t * az


def absorb_to_spheres(double[:, ::1] pos, const long long[::1] idx,
                      const double[:, ::1] centers, const double[::1] radii):
    """Pull particles outside their sphere onto the nearest surface point."""
    cdef Py_ssize_t k, i
    cdef double cx, cy, cz, dx, dy, dz, dist, r, scale
    for k in range(idx.shape[0]):
        i = <Py_ssize_t>idx[k]
        cx = centers[k, 0]
        cy = centers[k, 1]
        cz = centers[k, 2]
        dx = pos[i, 0] - cx
        dy = pos[i, 1] - cy
        dz = pos[i, 2] - cz
        dist = sqrt(dx * dx + dy * dy + dz * dz)
        r = radii[k]
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
