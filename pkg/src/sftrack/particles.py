"""Particle-based isometric shape inference from sightline constraints.

A particle system built from the template's rest mesh is driven by
alternating projections: each constrained particle is pulled onto its pixel
ray, particles with a known 3D location are absorbed into a small sphere
around it, and Gauss-Seidel sweeps restore the rest length of every mesh
edge. The loop repeats until the particles stop moving.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .backend import kernels
from .camera import CameraIntrinsics
from .errors import CollapsedEdge, UnderConstrained
from .meshes import Mesh2D, Mesh3D, barycentric_anchors

DEFAULT_DISTANCE_SWEEPS = 10
DEFAULT_MAX_OUTER = 500
DEFAULT_TOLERANCE = 1e-5  # meters
DEFAULT_Z_MIN = 1e-3  # meters
FAIL_FACTOR = 10.0  # residual displacement above FAIL_FACTOR*tol means failure
COLD_START_PX = 8.0  # auto mode: init reprojecting worse than this starts cold
WARM_ACCEPT_PX = 8.0  # warm result reprojecting worse than this retries cold


@dataclass(frozen=True)
class SightlineConstraint:
    """Vertex must lie on the camera ray through ``target`` (image px)."""

    vertex_index: int
    target: tuple[float, float]


@dataclass(frozen=True)
class KnownPointConstraint:
    """Vertex is absorbed into a sphere around a known 3D point (meters)."""

    vertex_index: int
    center: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class SolverParams:
    distance_sweeps: int = DEFAULT_DISTANCE_SWEEPS
    max_outer: int = DEFAULT_MAX_OUTER
    tolerance: float = DEFAULT_TOLERANCE
    z_min: float = DEFAULT_Z_MIN


@dataclass(frozen=True)
class ParticleSystem:
    """Solver state: positions plus the immutable rest-length constraints."""

    positions: np.ndarray
    edges: np.ndarray
    rest_lengths: np.ndarray
    intrinsics: CameraIntrinsics
    params: SolverParams = field(default_factory=SolverParams)

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        edges = np.ascontiguousarray(self.edges, dtype=np.int64)
        rest = np.ascontiguousarray(self.rest_lengths, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be (n, 3), got {pos.shape}")
        if edges.ndim != 2 or edges.shape[1] != 2:
            raise ValueError(f"edges must be (e, 2), got {edges.shape}")
        if rest.shape != (len(edges),) or (rest.size and rest.min() <= 0):
            raise ValueError("rest_lengths must be positive, one per edge")
        pos.setflags(write=False)
        edges.setflags(write=False)
        rest.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "rest_lengths", rest)

    @classmethod
    def from_mesh(
        cls,
        mesh: Mesh3D,
        intrinsics: CameraIntrinsics,
        params: SolverParams | None = None,
    ) -> "ParticleSystem":
        return cls(
            mesh.vertices,
            mesh.edges,
            mesh.rest_lengths,
            intrinsics,
            params or SolverParams(),
        )

    @property
    def n_particles(self) -> int:
        return len(self.positions)

    def max_edge_error(self) -> float:
        """Largest relative deviation of edge lengths from rest."""
        if not len(self.edges):
            return 0.0
        d = self.positions[self.edges[:, 0]] - self.positions[self.edges[:, 1]]
        lengths = np.linalg.norm(d, axis=1)
        return float((np.abs(lengths - self.rest_lengths) / self.rest_lengths).max())


def _sightline_arrays(ps: ParticleSystem, constraints) -> tuple[np.ndarray, np.ndarray]:
    if not constraints:
        return np.empty(0, dtype=np.int64), np.empty((0, 3))
    idx = np.array([c.vertex_index for c in constraints], dtype=np.int64)
    if idx.min() < 0 or idx.max() >= ps.n_particles:
        raise ValueError("sightline vertex index out of range")
    targets = np.array([c.target for c in constraints], dtype=np.float64)
    if not np.all(np.isfinite(targets)):
        raise ValueError("sightline targets must be finite")
    return idx, np.ascontiguousarray(ps.intrinsics.ray_directions(targets))


def _known_arrays(ps: ParticleSystem, constraints):
    if not constraints:
        return (
            np.empty(0, dtype=np.int64),
            np.empty((0, 3)),
            np.empty(0),
        )
    idx = np.array([c.vertex_index for c in constraints], dtype=np.int64)
    if idx.min() < 0 or idx.max() >= ps.n_particles:
        raise ValueError("known-point vertex index out of range")
    centers = np.ascontiguousarray([c.center for c in constraints], dtype=np.float64)
    radii = np.ascontiguousarray([c.radius for c in constraints], dtype=np.float64)
    return idx, centers, radii


def project_sightlines(ps: ParticleSystem, constraints) -> ParticleSystem:
    """Project each constrained particle onto its pixel ray (closest point)."""
    idx, dirs = _sightline_arrays(ps, constraints)
    pos = ps.positions.copy()
    kernels.project_sightlines(pos, idx, dirs, ps.params.z_min)
    return replace(ps, positions=pos)


def project_distance_constraints(ps: ParticleSystem, sweeps: int = 1) -> ParticleSystem:
    """Run Gauss-Seidel edge-length sweeps (equal particle masses)."""
    pos = ps.positions.copy()
    inv_mass = np.ones(ps.n_particles)
    try:
        kernels.distance_sweeps(pos, ps.edges, ps.rest_lengths, inv_mass, sweeps)
    except ValueError as exc:
        raise CollapsedEdge(str(exc)) from exc
    return replace(ps, positions=pos)


def apply_known_points(ps: ParticleSystem, constraints) -> ParticleSystem:
    """Absorb out-of-sphere particles onto their sphere surface."""
    idx, centers, radii = _known_arrays(ps, constraints)
    pos = ps.positions.copy()
    kernels.absorb_to_spheres(pos, idx, centers, radii)
    return replace(ps, positions=pos)


@dataclass(frozen=True)
class SolveInfo:
    converged: bool
    outer_iterations: int
    final_displacement: float
    max_edge_error: float
    sightline_count: int
    cold_started: bool = False


# ---------------------------------------------------------------------------
# cold-start depth initialization
#
# The alternating projections converge reliably only within a few millimeters
# of the solution; from a far initialization (the fronto-parallel rest pose)
# they settle into depth-folded equilibria. The cold start solves for the
# sighted vertices' depths along their rays directly: an inextensibility
# upper bound seeds a clamped Gauss-Newton refinement of the edge-length
# residuals, wrongly-folded regions are detected by their residuals and
# re-marched vertex by vertex (both roots of each neighbor sphere are
# enumerated, so the fold branch is chosen by evidence rather than by the
# iteration's bias), and single stubborn vertices get a flip-and-test pass.
# Everything is deterministic and touches only sighted vertices.


def _depth_upper_bound(dirs: np.ndarray, sighted: np.ndarray, mesh: Mesh3D) -> np.ndarray:
    """Max depth of each sighted vertex along its ray: min over pairs of
    geodesic distance / sin(ray angle)."""
    n = mesh.n_vertices
    graph = csr_matrix(
        (mesh.rest_lengths, (mesh.edges[:, 0], mesh.edges[:, 1])), shape=(n, n)
    )
    geo = dijkstra(graph, directed=False, indices=sighted)[:, sighted]
    cos = np.clip(dirs @ dirs.T, -1.0, 1.0)
    sin = np.sqrt(np.maximum(1.0 - cos * cos, 1e-18))
    ratio = np.where(np.eye(len(sighted)) > 0, np.inf, geo / sin)
    return ratio.min(axis=1)


def _depth_residuals(t, dirs, edges, rest):
    e = t[edges[:, 0], None] * dirs[edges[:, 0]] - t[edges[:, 1], None] * dirs[edges[:, 1]]
    return np.linalg.norm(e, axis=1) - rest


def _depth_gauss_newton(t, dirs, edges, rest, z_min, iters=30, t_ub=None):
    a, b = edges[:, 0], edges[:, 1]
    rows = np.arange(len(edges))
    n = len(t)
    for _ in range(iters):
        e = t[a, None] * dirs[a] - t[b, None] * dirs[b]
        norm = np.linalg.norm(e, axis=1)
        norm = np.maximum(norm, 1e-12)
        r = norm - rest
        jac = np.zeros((len(edges), n))
        jac[rows, a] = (e * dirs[a]).sum(axis=1) / norm
        jac[rows, b] = -(e * dirs[b]).sum(axis=1) / norm
        h = jac.T @ jac + 1e-10 * np.eye(n)
        step = np.linalg.solve(h, jac.T @ r)
        t = np.maximum(t - step, z_min)
        if t_ub is not None:
            t = np.minimum(t, t_ub)
        if np.abs(step).max() < 1e-10:
            break
    return t, _depth_residuals(t, dirs, edges, rest)


def _sphere_roots(d, p, length):
    """Ray parameters where |t*d - p| equals ``length`` (may be empty)."""
    dp = d @ p
    disc = dp * dp - p @ p + length * length
    if disc < 0:
        return []
    root = np.sqrt(disc)
    return [dp - root, dp + root]


def _march_region(t, dirs, edges, rest, bad, z_min):
    """Re-place flagged vertices one by one from their placed neighbors,
    choosing among all sphere-intersection branches by residual."""
    n = len(t)
    adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for k in range(len(edges)):
        a, b = edges[k]
        adj[a].append((b, rest[k]))
        adj[b].append((a, rest[k]))
    placed = ~bad
    pos = t[:, None] * dirs
    pending = set(np.flatnonzero(bad))
    while pending:
        counts = {v: sum(1 for u, _ in adj[v] if placed[u]) for v in pending}
        v = max(pending, key=lambda u: (counts[u], -u))
        nbrs = [(u, length) for u, length in adj[v] if placed[u]]
        d = dirs[v]
        candidates = [c for u, length in nbrs for c in _sphere_roots(d, pos[u], length)]
        if not candidates:
            candidates = [float(np.mean([t[u] for u, _ in nbrs]))] if nbrs else [t[v]]
        candidates = [max(c, z_min) for c in candidates]

        def cost(tv: float) -> float:
            return sum(
                (np.linalg.norm(tv * d - pos[u]) - length) ** 2 for u, length in nbrs
            )

        # among near-tied branches (weakly determined boundary vertices),
        # prefer the depth closest to the placed neighborhood; greedy
        # lowest-cost picks otherwise zig-zag along boundary columns
        costs = [cost(c) for c in candidates]
        floor = min(costs)
        t_near = float(np.mean([t[u] for u, _ in nbrs])) if nbrs else t[v]
        tied = [c for c, q in zip(candidates, costs) if q <= 1.25 * floor + 1e-15]
        t[v] = min(tied, key=lambda c: abs(c - t_near))
        pos[v] = t[v] * d
        placed[v] = True
        pending.remove(v)
    return t


def _vertex_candidates(t, pos, dirs, edges, rest, incident, v, z_min):
    candidates = []
    for k in incident[v]:
        a, b = edges[k]
        u = b if a == v else a
        candidates += _sphere_roots(dirs[v], pos[u], rest[k])
    return [c for c in candidates if c > z_min]


def _flip_polish(t, r, dirs, edges, rest, z_min, attempts=15, probe_worst=4):
    """Re-seat the worst vertices on alternate sphere branches.

    Single-vertex flips are tried first; if none improves, the worst vertex
    is flipped jointly with its worst neighbor (boundary zig-zags only
    improve under coordinated flips)."""
    n = len(t)
    incident: list[list[int]] = [[] for _ in range(n)]
    neighbors: list[list[int]] = [[] for _ in range(n)]
    for k in range(len(edges)):
        a, b = edges[k]
        incident[a].append(k)
        incident[b].append(k)
        neighbors[a].append(b)
        neighbors[b].append(a)

    def vertex_residuals(res):
        return np.array(
            [max((abs(res[k]) for k in incident[v]), default=0.0) for v in range(n)]
        )

    for _ in range(attempts):
        if np.abs(r).max() < 0.01 * rest.min():
            break
        vres = vertex_residuals(r)
        order = np.argsort(vres)[::-1][:probe_worst]
        pos = t[:, None] * dirs
        best_t, best_r = t, r
        improved = False
        for v in (int(u) for u in order):
            for c in _vertex_candidates(t, pos, dirs, edges, rest, incident, v, z_min):
                t_try = t.copy()
                t_try[v] = c
                t_try, r_try = _depth_gauss_newton(
                    t_try, dirs, edges, rest, z_min, iters=10
                )
                if np.abs(r_try).max() < np.abs(best_r).max() - 1e-12:
                    best_t, best_r = t_try, r_try
                    improved = True
            if improved:
                break
        if not improved:
            v = int(np.argmax(vres))
            w = max(neighbors[v], key=lambda u: vres[u], default=None)
            if w is not None:
                for cv in _vertex_candidates(t, pos, dirs, edges, rest, incident, v, z_min):
                    for cw in _vertex_candidates(t, pos, dirs, edges, rest, incident, w, z_min):
                        t_try = t.copy()
                        t_try[v] = cv
                        t_try[w] = cw
                        t_try, r_try = _depth_gauss_newton(
                            t_try, dirs, edges, rest, z_min, iters=8
                        )
                        if np.abs(r_try).max() < np.abs(best_r).max() - 1e-12:
                            best_t, best_r = t_try, r_try
                            improved = True
        if not improved:
            break
        t, r = best_t, best_r
    return t, r


def _smooth_ambiguity_sweep(t, dirs, edges, rest, z_min):
    """Resolve evidence-free branch choices toward the smooth continuation.

    A vertex whose alternate sphere branch fits its incident edges equally
    well (dangling corners) keeps the branch closest to its neighbors' mean
    depth; determined vertices are left alone."""
    n = len(t)
    incident: list[list[int]] = [[] for _ in range(n)]
    neighbors: list[list[int]] = [[] for _ in range(n)]
    for k in range(len(edges)):
        a, b = edges[k]
        incident[a].append(k)
        incident[b].append(k)
        neighbors[a].append(b)
        neighbors[b].append(a)
    pos = t[:, None] * dirs
    slack = (0.015 * rest.min()) ** 2  # alternates fitting within ~1.5% pass
    for v in range(n):
        # interior vertices are pinned by their full edge ring; only sparsely
        # connected boundary vertices have evidence-free branches
        if not neighbors[v] or len(neighbors[v]) > 4:
            continue
        dv = dirs[v]
        spheres = []
        for k in incident[v]:
            a, b = edges[k]
            u = b if a == v else a
            spheres.append((pos[u, 0], pos[u, 1], pos[u, 2], float(rest[k])))

        def cost(tv: float) -> float:
            total = 0.0
            for px, py, pz, length in spheres:
                dx = tv * dv[0] - px
                dy = tv * dv[1] - py
                dz = tv * dv[2] - pz
                total += ((dx * dx + dy * dy + dz * dz) ** 0.5 - length) ** 2
            return total

        current = cost(t[v])
        t_near = float(np.mean([t[u] for u in neighbors[v]]))
        options = [t[v]] + _vertex_candidates(t, pos, dirs, edges, rest, incident, v, z_min)
        viable = [c for c in options if cost(c) <= current + slack]
        chosen = min(viable, key=lambda c: abs(c - t_near))
        if chosen != t[v]:
            t[v] = chosen
            pos[v] = t[v] * dirs[v]
    return t


def _fold_region(abs_r, edges, neighbors, n, cap=14):
    """Connected vertex set covering the high-residual edges.

    A fold's residual signature can straddle vertices whose own edges fit,
    so the high-residual components are bridged via shortest graph paths
    before a one-ring anchor grow."""
    vres = np.zeros(n)
    np.maximum.at(vres, edges[:, 0], abs_r)
    np.maximum.at(vres, edges[:, 1], abs_r)
    cutoff = 0.15 * vres.max()
    comps: list[list[int]] = []
    seen: set[int] = set()
    for start in (int(v) for v in np.argsort(vres)[::-1]):
        if vres[start] <= cutoff:
            break
        if start in seen:
            continue
        comp = [start]
        seen.add(start)
        frontier = [start]
        while frontier:
            nxt = []
            for v in frontier:
                for u in neighbors[v]:
                    if u not in seen and vres[u] > cutoff:
                        seen.add(u)
                        comp.append(u)
                        nxt.append(u)
            frontier = nxt
        comps.append(comp)
    region = list(comps[0][:cap])
    in_region = set(region)
    for comp in comps[1:]:
        # shortest bridge from the region to this component, any vertices
        prev = {v: v for v in in_region}
        frontier = list(in_region)
        found = None
        while frontier and found is None:
            nxt = []
            for v in frontier:
                for u in neighbors[v]:
                    if u in prev:
                        continue
                    prev[u] = v
                    if u in set(comp):
                        found = u
                        break
                    nxt.append(u)
                if found is not None:
                    break
            frontier = nxt
        if found is None:
            continue
        path = []
        v = found
        while v not in in_region:
            path.append(v)
            v = prev[v]
        addition = path + [c for c in comp if c not in in_region]
        if len(region) + len(addition) > cap:
            continue
        region += addition
        in_region.update(addition)
    for v in list(region):  # one anchor ring keeps candidates grounded
        for u in neighbors[v]:
            if u not in in_region and len(region) < cap:
                in_region.add(u)
                region.append(u)
    return region


def _enumerate_region(t, dirs, edges, rest, z_min, region):
    """Exhaust branch combinations over a small residual region.

    Coupled boundary folds (alternating zig-zags) only improve under joint
    flips, so greedy repair cannot leave them. Each region vertex gets at
    most two representative depths (cheapest below and above its settled
    neighborhood); a pruned depth-first search picks the joint assignment
    with the least edge residual."""
    n = len(t)
    incident: list[list[int]] = [[] for _ in range(n)]
    for k in range(len(edges)):
        incident[edges[k, 0]].append(k)
        incident[edges[k, 1]].append(k)
    region = list(region)
    in_region = np.zeros(n, dtype=bool)
    in_region[region] = True
    # order by connectivity to settled vertices so candidates stay anchored
    order = []
    anchored = ~in_region
    pending = set(region)
    while pending:
        v = max(
            pending,
            key=lambda u: (sum(anchored[edges[k, 0] ^ edges[k, 1] ^ u] for k in incident[u]), -u),
        )
        order.append(v)
        anchored[v] = True
        pending.remove(v)

    best = {"cost": np.inf, "assign": None}
    pos = t[:, None] * dirs

    def local_cost(v, tv, assigned):
        total = 0.0
        for k in incident[v]:
            a, b = edges[k]
            u = b if a == v else a
            if in_region[u] and u not in assigned:
                continue
            pu = assigned[u] * dirs[u] if u in assigned else pos[u]
            total += (np.linalg.norm(tv * dirs[v] - pu) - rest[k]) ** 2
        return total

    def reps(v, assigned):
        candidates = []
        for k in incident[v]:
            a, b = edges[k]
            u = b if a == v else a
            if in_region[u] and u not in assigned:
                continue
            pu = assigned[u] * dirs[u] if u in assigned else pos[u]
            candidates += _sphere_roots(dirs[v], pu, rest[k])
        candidates = [c for c in candidates if c > z_min] or [t[v]]
        anchor_depths = [
            assigned[u] if u in assigned else t[u]
            for k in incident[v]
            for u in (edges[k, 0] ^ edges[k, 1] ^ v,)
            if not in_region[u] or u in assigned
        ]
        pivot = float(np.mean(anchor_depths)) if anchor_depths else t[v]
        lower = [c for c in candidates if c < pivot]
        upper = [c for c in candidates if c >= pivot]
        out = []
        for side in (lower, upper):
            if side:
                out.append(min(side, key=lambda c: local_cost(v, c, assigned)))
        return out

    def search(i, assigned, cost_so_far):
        if cost_so_far >= best["cost"]:
            return
        if i == len(order):
            best["cost"] = cost_so_far
            best["assign"] = dict(assigned)
            return
        v = order[i]
        for c in reps(v, assigned):
            assigned[v] = c
            search(i + 1, assigned, cost_so_far + local_cost(v, c, assigned))
            del assigned[v]

    search(0, {}, 0.0)
    if best["assign"]:
        out = t.copy()
        for v, tv in best["assign"].items():
            out[v] = tv
        return out
    return t


def _cold_start_positions(
    mesh: Mesh3D,
    init_positions: np.ndarray,
    sl_idx: np.ndarray,
    sl_dirs: np.ndarray,
    known,
    z_min: float,
    rounds: int = 6,
) -> np.ndarray:
    """Initial particle positions with sighted vertices solved along rays."""
    sub = -np.ones(mesh.n_vertices, dtype=np.int64)
    sub[sl_idx] = np.arange(len(sl_idx))
    in_sub = (sub[mesh.edges[:, 0]] >= 0) & (sub[mesh.edges[:, 1]] >= 0)
    edges = sub[mesh.edges[in_sub]]
    rest = mesh.rest_lengths[in_sub]
    if len(edges) < 3:
        return init_positions
    neighbors: list[list[int]] = [[] for _ in range(len(sl_idx))]
    for a, b in edges:
        neighbors[a].append(b)
        neighbors[b].append(a)
    t_ub = _depth_upper_bound(sl_dirs, sl_idx, mesh)
    known_depth = {}
    for c in known:
        k = sub[c.vertex_index]
        if k >= 0:
            center = np.asarray(c.center, dtype=np.float64)
            known_depth[int(k)] = max(float(center @ sl_dirs[k]), z_min)
            t_ub[k] = min(t_ub[k], known_depth[int(k)] + c.radius)
    t, r = _depth_gauss_newton(t_ub.copy(), sl_dirs, edges, rest, z_min, t_ub=t_ub)
    for rnd in range(rounds):
        if np.abs(r).max() < 1e-3 * rest.min():
            break
        # keep the flag floor above the stop threshold but below any
        # fold-level residual, or rounds idle in between
        flag = np.abs(r) > max(3e-3 * rest.min(), 0.25 * np.abs(r).max())
        bad = np.zeros(len(sl_idx), dtype=bool)
        bad[edges[flag].ravel()] = True
        for _ in range(min(rnd, 3)):
            grown = bad.copy()
            for v in np.flatnonzero(bad):
                grown[neighbors[v]] = True
            bad = grown
        if bad.all():
            break
        t = _march_region(t.copy(), sl_dirs, edges, rest, bad, z_min)
        t, r = _depth_gauss_newton(t, sl_dirs, edges, rest, z_min)
    t, r = _flip_polish(t, r, sl_dirs, edges, rest, z_min)
    if np.abs(r).max() > 5e-3 * rest.min():
        # a coupled fold survived the greedy repairs: enumerate the connected
        # high-residual component around the worst vertex
        region = _fold_region(np.abs(r), edges, neighbors, len(sl_idx))
        t_enum = _enumerate_region(t, sl_dirs, edges, rest, z_min, region)
        t_enum, r_enum = _depth_gauss_newton(t_enum, sl_dirs, edges, rest, z_min, iters=15)
        if np.abs(r_enum).max() < np.abs(r).max():
            t, r = t_enum, r_enum
    t = _smooth_ambiguity_sweep(t, sl_dirs, edges, rest, z_min)
    t, r = _depth_gauss_newton(t, sl_dirs, edges, rest, z_min, iters=10)
    for k, depth in known_depth.items():
        t[k] = depth
    positions = init_positions.copy()
    positions[sl_idx] = t[:, None] * sl_dirs
    return positions


def _check_constrained(sightlines, known) -> None:
    if known and len(sightlines) >= 1:
        return
    if len(sightlines) >= 3:
        targets = np.array([c.target for c in sightlines], dtype=np.float64)
        targets = np.unique(targets, axis=0)
        if len(targets) >= 3:
            d = targets[1:] - targets[0]
            cross = d[:, None, 0] * d[None, :, 1] - d[:, None, 1] * d[None, :, 0]
            if np.abs(cross).max() > 1e-9:
                return
    raise UnderConstrained(
        "need >= 3 non-collinear sightline targets, or a known 3D point plus "
        "at least one sightline"
    )


def infer_shape(
    rest_mesh: Mesh3D,
    intrinsics: CameraIntrinsics,
    sightlines,
    known=(),
    init: Mesh3D | None = None,
    params: SolverParams | None = None,
    warm_start: bool | None = None,
) -> tuple[Mesh3D, SolveInfo]:
    """Infer the deformed 3D shape matching the sightline constraints.

    ``init`` seeds the particle positions (the previous frame's shape during
    tracking); it defaults to the rest mesh itself. ``warm_start`` declares
    whether the seed is a tracking estimate (True: try it directly), an
    arbitrary pose (False: run the ray-depth cold-start initializer first) or
    unknown (None: decide by the seed's reprojection error). A warm attempt
    whose result cannot satisfy the sightlines is retried cold and the better
    result kept. Returns the shape with the rest mesh's topology plus a
    SolveInfo record. ``converged`` is False only when the iteration budget is
    exhausted with the particles still moving more than FAIL_FACTOR times the
    tolerance (the best-seen positions are returned in that case).
    """
    sightlines = list(sightlines)
    known = list(known)
    params = params or SolverParams()
    _check_constrained(sightlines, known)
    start = init if init is not None else rest_mesh
    if len(start.vertices) != len(rest_mesh.vertices):
        raise ValueError("init mesh must have one position per template vertex")
    ps = ParticleSystem.from_mesh(rest_mesh, intrinsics, params)
    sl_idx, sl_dirs = _sightline_arrays(ps, sightlines)
    kp_idx, kp_centers, kp_radii = _known_arrays(ps, known)
    inv_mass = np.ones(ps.n_particles)
    targets = (
        np.array([c.target for c in sightlines], dtype=np.float64)
        if sightlines
        else np.empty((0, 2))
    )

    def _reprojection(positions: np.ndarray) -> float:
        if not len(sl_idx):
            return 0.0
        safe = np.maximum(positions[sl_idx], [-np.inf, -np.inf, params.z_min])
        return float(np.linalg.norm(intrinsics.project(safe) - targets, axis=1).max())

    def _alternate(positions: np.ndarray):
        pos = positions.copy()
        best = pos.copy()
        best_disp = np.inf
        disp = np.inf
        outer = 0
        converged = False
        for outer in range(1, params.max_outer + 1):
            prev = pos.copy()
            kernels.project_sightlines(pos, sl_idx, sl_dirs, params.z_min)
            kernels.absorb_to_spheres(pos, kp_idx, kp_centers, kp_radii)
            try:
                kernels.distance_sweeps(
                    pos, ps.edges, ps.rest_lengths, inv_mass, params.distance_sweeps
                )
            except ValueError as exc:
                raise CollapsedEdge(str(exc)) from exc
            disp = float(np.sqrt(((pos - prev) ** 2).sum(axis=1)).max())
            if disp < best_disp:
                best_disp = disp
                best = pos.copy()
            if disp < params.tolerance:
                converged = True
                break
        if not converged:
            if disp <= FAIL_FACTOR * params.tolerance:
                converged = True  # budget exhausted but effectively settled
            else:
                pos = best
                disp = best_disp
        return pos, outer, disp, converged

    start_pos = np.ascontiguousarray(start.vertices, dtype=np.float64).copy()
    cold_started = False
    go_cold = (
        warm_start is False
        or (warm_start is None and _reprojection(start_pos) > COLD_START_PX)
    )
    if len(sl_idx) and go_cold:
        start_pos = _cold_start_positions(
            rest_mesh, start_pos, sl_idx, sl_dirs, known, params.z_min
        )
        cold_started = True
    pos, outer, disp, converged = _alternate(start_pos)
    if len(sl_idx) and not cold_started and _reprojection(pos) > WARM_ACCEPT_PX:
        # the warm seed settled somewhere that cannot satisfy the sightlines;
        # re-solve from the cold-start initializer and keep the better result
        retry_start = _cold_start_positions(
            rest_mesh,
            np.ascontiguousarray(start.vertices, dtype=np.float64).copy(),
            sl_idx,
            sl_dirs,
            known,
            params.z_min,
        )
        pos2, outer2, disp2, converged2 = _alternate(retry_start)
        if _reprojection(pos2) < _reprojection(pos):
            pos, outer, disp, converged = pos2, outer2, disp2, converged2
            cold_started = True
    shape = rest_mesh.with_vertices(pos)
    diff = pos[rest_mesh.edges[:, 0]] - pos[rest_mesh.edges[:, 1]]
    lengths = np.linalg.norm(diff, axis=1)
    edge_err = float(
        (np.abs(lengths - rest_mesh.rest_lengths) / rest_mesh.rest_lengths).max()
    ) if len(lengths) else 0.0
    info = SolveInfo(
        converged=converged,
        outer_iterations=outer,
        final_displacement=disp,
        max_edge_error=edge_err,
        sightline_count=len(sightlines),
        cold_started=cold_started,
    )
    return shape, info


def select_salient_points(
    template_mesh: Mesh2D, transferred: Mesh2D, inlier_template_points, anchors=None
) -> list[SightlineConstraint]:
    """Sightline constraints for vertices of cells holding >= 1 inlier match.

    A template triangle qualifies when it contains at least one inlier
    template point; each qualified vertex is emitted once, targeting its
    position in the transferred mesh. ``anchors`` may carry precomputed
    (triangle index, weights) arrays for the inlier points.
    """
    if template_mesh.triangles.shape != transferred.triangles.shape or not np.array_equal(
        template_mesh.triangles, transferred.triangles
    ):
        raise ValueError("template and transferred meshes must share topology")
    pts = np.asarray(inlier_template_points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return []
    tri_idx, weights = anchors if anchors is not None else barycentric_anchors(
        pts, template_mesh
    )
    contained = weights.min(axis=1) >= -1e-9  # extrapolated anchors do not count
    qualified = np.unique(template_mesh.triangles[tri_idx[contained]])
    return [
        SightlineConstraint(int(v), (float(transferred.vertices[v, 0]),
                                     float(transferred.vertices[v, 1])))
        for v in qualified
    ]
