"""Seeded synthetic benchmark: ground-truthed deforming scenes and metrics.

Generates a regular grid mesh, deforms it isometrically with position-based
dynamics (two randomly rigid-transformed cells pinned at the lateral sides),
synthesizes match sets with a controlled mismatch rate, and scores mismatch
classifications with TPR/FPR/selection metrics. Every quantity is derived
from a named PCG64 stream, so identical configs reproduce bit-identical
frames and metrics. Trial t of a scenario seeded with s draws from
``numpy.random.default_rng(SeedSequence((s, t)))``.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .backend import kernels
from .camera import DEFAULT_INTRINSICS, CameraIntrinsics, intrinsics_from_dict
from .errors import ConfigError, InsufficientMatches, NoConvergence
from .meshes import (
    Mesh2D,
    Mesh3D,
    apply_anchors,
    barycentric_anchors,
    grid_triangles,
    grid_vertices_2d,
)
from .mismatch import (
    DEFAULT_ALPHA,
    Classification,
    MatchLabels,
    MatchSet,
    filter_matches,
    step1_select,
    step2_purify,
    step3_classify,
)
from .template import Template

SCENARIO_SIZES = {"Dense": 1000, "Moderate": 200, "Sparse": 50}

DEFAULT_MAGNITUDE = 0.6
DEFAULT_DEPTH = 1.0  # meters from camera to the rest surface
_COINCIDENCE_EPS = 1e-9  # px; a corrupted point this close to truth is correct

# deformation sampling scales (meters / radians at magnitude 1).
# the inward floor must exceed the slack consumed by the cells' rotation
# reach and relative y/z offsets, or the pin targets become unreachable
# without stretch and the relaxation cannot settle
_ANGLE_RANGE = 0.9
_INWARD_FLOOR = 0.03
_INWARD_SPAN = 0.03
_LATERAL_SCALE = 0.02
_DEPTH_SCALE = 0.03


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """The documented per-trial stream: PCG64 over SeedSequence((seed, trial))."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(trial))))


@dataclass(frozen=True)
class ScenarioConfig:
    """Parameters of one synthetic experiment family."""

    name: str = "custom"
    n_matches: int = 1000
    correct_rate: float = 0.8
    trials: int = 100
    seed: int = 0
    deformation_magnitude: float = DEFAULT_MAGNITUDE
    image_size: tuple[int, int] = (640, 480)
    intrinsics: CameraIntrinsics = field(default_factory=lambda: DEFAULT_INTRINSICS)
    mesh_rows: int = 6
    mesh_cols: int = 10
    mesh_spacing: float = 0.04
    depth: float = DEFAULT_DEPTH

    def __post_init__(self):
        if self.n_matches < 3:
            raise ConfigError(f"n_matches must be >= 3, got {self.n_matches}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if not 0.0 < self.correct_rate <= 1.0:
            raise ConfigError(f"correct_rate must be in (0, 1], got {self.correct_rate}")

    @classmethod
    def named(cls, name: str, **overrides) -> "ScenarioConfig":
        """Dense/Moderate/Sparse presets (1000/200/50 matches)."""
        if name in SCENARIO_SIZES:
            overrides.setdefault("n_matches", SCENARIO_SIZES[name])
        return cls(name=name, **overrides)


@dataclass(frozen=True)
class SyntheticFrame:
    """One ground-truthed scene: meshes, matches, labels and true transfers."""

    rest_mesh: Mesh3D
    flat_mesh: Mesh2D
    deformed_mesh: Mesh3D  # camera frame, at scene depth
    matches: MatchSet
    labels: MatchLabels
    gt_image_points: np.ndarray  # true 2D transfer of every template point
    gt_points_3d: np.ndarray  # true 3D surface point of every template point
    intrinsics: CameraIntrinsics
    image_size: tuple[int, int]


@dataclass(frozen=True)
class MetricsRecord:
    """Percentages per the benchmark definitions; distances in meters."""

    tpr: float
    fpr: float
    aos: float
    ns: float
    err_mean: float | None = None
    err_median: float | None = None
    runtime: float | None = None


# ---------------------------------------------------------------------------
# mesh generation


def generate_rest_mesh(
    rows: int = 6,
    cols: int = 10,
    spacing: float = 0.04,
    pixel_scale: float = 800.0,
    origin: tuple[float, float] = (320.0, 240.0),
) -> tuple[Mesh3D, Mesh2D]:
    """Regular planar grid mesh plus its flat-image 2D counterpart.

    The 3D mesh lies in the z=0 plane centered on the origin; the 2D mesh is
    the same grid at ``pixel_scale`` px/m around ``origin``.
    """
    if rows < 2 or cols < 2:
        raise ConfigError(f"grid must be at least 2x2, got {rows}x{cols}")
    if spacing <= 0:
        raise ConfigError(f"spacing must be positive, got {spacing}")
    xy = grid_vertices_2d(rows, cols, spacing, spacing, centered=True)
    tris = grid_triangles(rows, cols)
    mesh3d = Mesh3D(np.column_stack([xy, np.zeros(len(xy))]), tris)
    mesh2d = Mesh2D(xy * pixel_scale + np.asarray(origin, dtype=np.float64), tris)
    return mesh3d, mesh2d


def default_pinned_cells(rows: int, cols: int) -> tuple[np.ndarray, np.ndarray]:
    """Vertex indices of the middle-row boundary quad on each lateral side."""
    qr = (rows - 1) // 2
    left = [qr * cols, qr * cols + 1, (qr + 1) * cols, (qr + 1) * cols + 1]
    right = [qr * cols + cols - 2, qr * cols + cols - 1,
             (qr + 1) * cols + cols - 2, (qr + 1) * cols + cols - 1]
    return np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64)


def _rotation_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    x, y, z = axis / np.linalg.norm(axis)
    c, s = np.cos(angle), np.sin(angle)
    cc = 1.0 - c
    return np.array(
        [
            [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
            [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
            [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc],
        ]
    )


def _sample_pin_targets(rest_vertices, pins, inward_sign, rng, magnitude):
    centroid = rest_vertices[pins].mean(axis=0)
    axis = rng.normal(size=3)
    # damp the sheet-normal component: spinning a patch within the sheet
    # plane demands shear, which an isometric sheet cannot absorb
    axis[2] *= 0.25
    axis /= np.linalg.norm(axis)
    angle = magnitude * rng.uniform(-_ANGLE_RANGE, _ANGLE_RANGE)
    rot = _rotation_matrix(axis, angle)
    shift = np.array(
        [
            inward_sign * magnitude * (_INWARD_FLOOR + _INWARD_SPAN * rng.uniform(0.0, 1.0)),
            magnitude * _LATERAL_SCALE * rng.uniform(-1.0, 1.0),
            magnitude * _DEPTH_SCALE * rng.uniform(-1.0, 1.0),
        ]
    )
    return (rest_vertices[pins] - centroid) @ rot.T + centroid + shift


def _relax_to_pins(
    mesh: Mesh3D,
    start_positions: np.ndarray,
    pinned: np.ndarray,
    pin_targets: np.ndarray,
    edge_tol: float,
    max_sweeps: int,
    batch: int = 50,
) -> np.ndarray:
    """PBD sweeps with pinned vertices held fixed, until edges are isometric."""
    pos = np.ascontiguousarray(start_positions, dtype=np.float64).copy()
    pos[pinned] = pin_targets
    inv_mass = np.ones(len(pos))
    inv_mass[pinned] = 0.0
    rest = mesh.rest_lengths
    edges = mesh.edges
    done = 0
    while True:
        err = np.abs(
            np.linalg.norm(pos[edges[:, 0]] - pos[edges[:, 1]], axis=1) - rest
        ) / rest
        if float(err.max()) < edge_tol:
            return pos
        if done >= max_sweeps:
            raise NoConvergence(
                f"deformation did not reach {edge_tol:.1%} edge error within "
                f"{max_sweeps} sweeps (at {err.max():.2%})"
            )
        kernels.distance_sweeps(pos, edges, rest, inv_mass, batch)
        done += batch


def deform_mesh(
    rest: Mesh3D,
    seed,
    magnitude: float = DEFAULT_MAGNITUDE,
    grid: tuple[int, int] = (6, 10),
    edge_tol: float = 0.002,
    max_sweeps: int = 60000,
) -> Mesh3D:
    """Random isometric deformation: pin one cell per lateral side, relax.

    Each pinned cell gets a rigid transform whose rotation angle and
    translation norm scale with ``magnitude``; the translation is biased
    inward so the pin targets stay reachable without stretch. Deterministic
    per seed; the result keeps every edge within ``edge_tol`` of rest length.
    """
    rows, cols = grid
    if rows * cols != rest.n_vertices:
        raise ValueError(
            f"grid {rows}x{cols} does not match mesh with {rest.n_vertices} vertices"
        )
    rng = np.random.default_rng(seed)
    left, right = default_pinned_cells(rows, cols)
    pinned = np.concatenate([left, right])
    last_error: NoConvergence | None = None
    # rare target draws are unreachable without stretch (rotation reach plus
    # relative offsets exceed the inward slack); redraw deterministically
    for _ in range(5):
        targets = rest.vertices.copy()
        targets[left] = _sample_pin_targets(rest.vertices, left, +1.0, rng, magnitude)
        targets[right] = _sample_pin_targets(rest.vertices, right, -1.0, rng, magnitude)
        # nucleate out-of-plane buckling: a perfectly flat sheet under
        # in-plane compression is a (degenerate) equilibrium of the
        # distance projections
        start = rest.vertices + magnitude * 0.02 * rest.rest_lengths.min() * rng.normal(
            size=rest.vertices.shape
        )
        try:
            pos = _relax_to_pins(rest, start, pinned, targets[pinned], edge_tol, max_sweeps)
        except NoConvergence as exc:
            last_error = exc
            continue
        return rest.with_vertices(pos)
    raise last_error


# ---------------------------------------------------------------------------
# match generation


def _sample_in_mesh(mesh: Mesh2D, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Uniform points inside the mesh: (triangle index, barycentric weights)."""
    v = mesh.vertices[mesh.triangles]
    areas = 0.5 * np.abs(
        (v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1])
        - (v[:, 1, 1] - v[:, 0, 1]) * (v[:, 2, 0] - v[:, 0, 0])
    )
    cum = np.cumsum(areas)
    cum /= cum[-1]
    tri_idx = np.searchsorted(cum, rng.random(n), side="right").astype(np.int64)
    tri_idx = np.minimum(tri_idx, len(areas) - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    weights = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    return tri_idx, weights


def generate_matches(
    flat_mesh: Mesh2D,
    deformed_mesh: Mesh3D,
    intrinsics: CameraIntrinsics,
    image_size: tuple[int, int],
    n_matches: int,
    correct_rate: float,
    rng: np.random.Generator,
) -> tuple[MatchSet, MatchLabels, np.ndarray, np.ndarray]:
    """Template points uniform in the flat mesh; image side projected truth.

    Exactly round(n*(1-correct_rate)) points are relocated uniformly over the
    image rectangle and labeled mismatches; a relocated point that lands on
    its true position (within 1e-9 px) is relabeled correct so the labels
    match the membership definition rather than the corruption mechanism.
    Returns (matches, labels, true 2D transfer, true 3D points).
    """
    tri_idx, weights = _sample_in_mesh(flat_mesh, n_matches, rng)
    template_pts = apply_anchors(tri_idx, weights, flat_mesh)
    gt_3d = apply_anchors(tri_idx, weights, deformed_mesh)
    gt_2d = intrinsics.project(gt_3d)
    image_pts = gt_2d.copy()
    n_bad = int(np.rint(n_matches * (1.0 - correct_rate)))
    labels = np.ones(n_matches, dtype=bool)
    if n_bad:
        corrupt = rng.choice(n_matches, size=n_bad, replace=False)
        w, h = image_size
        image_pts[corrupt, 0] = rng.random(n_bad) * w
        image_pts[corrupt, 1] = rng.random(n_bad) * h
        labels[corrupt] = False
        dist = np.linalg.norm(image_pts[corrupt] - gt_2d[corrupt], axis=1)
        labels[corrupt[dist < _COINCIDENCE_EPS]] = True
    return MatchSet(template_pts, image_pts), MatchLabels(labels), gt_2d, gt_3d


def synthetic_template(config: ScenarioConfig) -> Template:
    """Template matching the generator's geometry.

    The flat image doubles as the texturemap, so the texture mesh is the flat
    mesh itself and the texture rectangle is the full image.
    """
    intr = config.intrinsics
    rest3d, flat2d = generate_rest_mesh(
        config.mesh_rows,
        config.mesh_cols,
        config.mesh_spacing,
        pixel_scale=intr.fx / config.depth,
        origin=(intr.cx, intr.cy),
    )
    pose = rest3d.with_vertices(rest3d.vertices + np.array([0.0, 0.0, config.depth]))
    return Template(rest3d, flat2d, config.image_size, intr, pose)


def generate_frame(config: ScenarioConfig, trial: int = 0) -> SyntheticFrame:
    """Deterministic frame for (config.seed, trial)."""
    rng = trial_rng(config.seed, trial)
    intr = config.intrinsics
    rest3d, flat2d = generate_rest_mesh(
        config.mesh_rows,
        config.mesh_cols,
        config.mesh_spacing,
        pixel_scale=intr.fx / config.depth,
        origin=(intr.cx, intr.cy),
    )
    deformed = deform_mesh(
        rest3d,
        rng,
        config.deformation_magnitude,
        grid=(config.mesh_rows, config.mesh_cols),
    )
    placed = deformed.with_vertices(
        deformed.vertices + np.array([0.0, 0.0, config.depth])
    )
    matches, labels, gt2d, gt3d = generate_matches(
        flat2d, placed, intr, config.image_size, config.n_matches,
        config.correct_rate, rng,
    )
    return SyntheticFrame(
        rest_mesh=rest3d,
        flat_mesh=flat2d,
        deformed_mesh=placed,
        matches=matches,
        labels=labels,
        gt_image_points=gt2d,
        gt_points_3d=gt3d,
        intrinsics=intr,
        image_size=config.image_size,
    )


# ---------------------------------------------------------------------------
# metrics


def _rates(flagged: np.ndarray, correct: np.ndarray) -> tuple[float, float]:
    """(TPR, FPR) of a flagged-as-mismatch mask against ground truth."""
    n_mis = int((~correct).sum())
    n_cor = int(correct.sum())
    tpr = 100.0 * int((flagged & ~correct).sum()) / n_mis if n_mis else 100.0
    fpr = 100.0 * int((flagged & correct).sum()) / n_cor if n_cor else 0.0
    return tpr, fpr


def selection_metrics(selected_indices, labels: MatchLabels) -> tuple[float, float]:
    """(accuracy of selection, selected percentage) for a selected subset."""
    sel = np.asarray(selected_indices, dtype=np.int64)
    n = len(labels)
    ns = 100.0 * len(sel) / n if n else 0.0
    aos = 100.0 * float(labels.is_correct[sel].mean()) if len(sel) else 0.0
    return aos, ns


def evaluate_classification(
    predicted: Classification, labels: MatchLabels
) -> MetricsRecord:
    """TPR/FPR of the outlier flags plus AoS and n_s of the inlier set.

    Empty-denominator conventions: TPR=100 with no true mismatches, FPR=0
    with no true correct matches, AoS=0 with an empty inlier set.
    """
    if predicted.n_matches != len(labels):
        raise ValueError("classification and labels cover different match counts")
    correct = labels.is_correct
    flagged = ~predicted.is_inlier()
    tpr, fpr = _rates(flagged, correct)
    aos, ns = selection_metrics(predicted.inlier_indices, labels)
    return MetricsRecord(tpr=tpr, fpr=fpr, aos=aos, ns=ns)


def shape_error(
    inferred: Mesh3D,
    frame: SyntheticFrame,
    at: str = "vertices",
    match_indices=None,
) -> tuple[float, float]:
    """(mean, median) 3D distance to ground truth, in meters.

    ``at="vertices"`` compares mesh vertices; ``at="matches"`` transfers the
    (optionally restricted) template match points onto the inferred mesh via
    barycentric anchors and compares against their true 3D locations.
    """
    if at == "vertices":
        if inferred.vertices.shape != frame.deformed_mesh.vertices.shape:
            raise ValueError("inferred mesh does not match ground-truth topology")
        d = np.linalg.norm(inferred.vertices - frame.deformed_mesh.vertices, axis=1)
    elif at == "matches":
        idx = (
            np.arange(len(frame.matches))
            if match_indices is None
            else np.asarray(match_indices, dtype=np.int64)
        )
        tri_idx, weights = barycentric_anchors(
            frame.matches.template_points[idx], frame.flat_mesh
        )
        recon = apply_anchors(tri_idx, weights, inferred)
        d = np.linalg.norm(recon - frame.gt_points_3d[idx], axis=1)
    else:
        raise ValueError(f"unknown evaluation mode {at!r}")
    return float(d.mean()), float(np.median(d))


# ---------------------------------------------------------------------------
# trial runners


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    seed: int
    metrics: MetricsRecord


def run_scenario(
    config: ScenarioConfig, alpha_s: float = DEFAULT_ALPHA
) -> list[TrialRecord]:
    """Classify every seeded trial at one threshold; runtime is the filter time."""
    records = []
    for trial in range(config.trials):
        frame = generate_frame(config, trial)
        t0 = time.perf_counter()
        result = filter_matches(frame.matches, frame.flat_mesh, alpha_s=alpha_s)
        elapsed = time.perf_counter() - t0
        metrics = replace(
            evaluate_classification(result, frame.labels), runtime=elapsed
        )
        records.append(TrialRecord(trial=trial, seed=config.seed, metrics=metrics))
    return records


def summarize(records: list[TrialRecord]) -> dict:
    def mean(attr):
        vals = [getattr(r.metrics, attr) for r in records]
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    return {
        "trials": len(records),
        "mean_tpr": mean("tpr"),
        "mean_fpr": mean("fpr"),
        "mean_aos": mean("aos"),
        "mean_ns": mean("ns"),
        "mean_runtime": mean("runtime"),
    }


def _trial_stage2(config: ScenarioConfig, trial: int):
    """Frame plus the threshold-independent part of the mismatch filter."""
    frame = generate_frame(config, trial)
    try:
        sel1 = step1_select(frame.matches, frame.flat_mesh)
        sel2 = step2_purify(sel1, frame.matches, frame.flat_mesh)
    except InsufficientMatches as exc:
        raise InsufficientMatches(
            f"trial {trial} (seed ({config.seed}, {trial})): {exc}", stage=exc.stage
        ) from exc
    probe = step3_classify(frame.matches, sel2, frame.flat_mesh, alpha_s=1.0)
    return frame, sel1, sel2, probe.d3_values, probe.sample_length


def roc_sweep(
    config: ScenarioConfig, alpha_values
) -> list[tuple[float, float, float]]:
    """Mean (TPR, FPR) per threshold coefficient over the scenario's trials.

    Steps I-II run once per trial; only the final threshold is swept, so the
    per-trial-set monotonicity in alpha is exact. Output rows are sorted by
    alpha ascending.
    """
    alphas = sorted(float(a) for a in alpha_values)
    if not alphas or alphas[0] <= 0:
        raise ValueError("alpha values must be positive")
    sums = np.zeros((len(alphas), 2))
    for trial in range(config.trials):
        frame, _, _, d3, sample_length = _trial_stage2(config, trial)
        correct = frame.labels.is_correct
        for k, alpha in enumerate(alphas):
            flagged = d3 >= alpha * sample_length
            tpr, fpr = _rates(flagged, correct)
            sums[k, 0] += tpr
            sums[k, 1] += fpr
    sums /= config.trials
    return [(alphas[k], float(sums[k, 0]), float(sums[k, 1])) for k in range(len(alphas))]


# ---------------------------------------------------------------------------
# sequences (continuous deformation for tracking experiments)

_TRAJECTORY_STREAM = 0xA11CE


def generate_sequence(
    config: ScenarioConfig, n_frames: int
) -> list[SyntheticFrame]:
    """Smooth ground-truthed deformation over ``n_frames`` frames.

    Pin transforms follow seeded sinusoidal trajectories; each frame's mesh
    is relaxed starting from the previous frame's, and matches are drawn from
    the per-frame stream SeedSequence((seed, frame)).
    """
    intr = config.intrinsics
    rest3d, flat2d = generate_rest_mesh(
        config.mesh_rows,
        config.mesh_cols,
        config.mesh_spacing,
        pixel_scale=intr.fx / config.depth,
        origin=(intr.cx, intr.cy),
    )
    traj_rng = np.random.default_rng(
        np.random.SeedSequence((int(config.seed), _TRAJECTORY_STREAM))
    )
    left, right = default_pinned_cells(config.mesh_rows, config.mesh_cols)
    sides = []
    for pins, inward in ((left, +1.0), (right, -1.0)):
        axis = traj_rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        sides.append(
            {
                "pins": pins,
                "inward": inward,
                "axis": axis,
                "angle_amp": config.deformation_magnitude
                * 0.6
                * _ANGLE_RANGE
                * traj_rng.uniform(0.3, 1.0),
                "angle_freq": float(traj_rng.integers(1, 3)),
                "angle_phase": traj_rng.uniform(0, 2 * np.pi),
                "shift_amp": np.array(
                    [
                        config.deformation_magnitude
                        * (_INWARD_FLOOR + _INWARD_SPAN * traj_rng.uniform(0.4, 1.0)),
                        config.deformation_magnitude * _LATERAL_SCALE * traj_rng.uniform(0.3, 1.0),
                        config.deformation_magnitude * _DEPTH_SCALE * traj_rng.uniform(0.3, 1.0),
                    ]
                ),
                "shift_freq": traj_rng.integers(1, 3, size=3).astype(float),
                "shift_phase": traj_rng.uniform(0, 2 * np.pi, size=3),
            }
        )
    frames = []
    # same buckling nucleation as deform_mesh; later frames warm-start bent
    pos = rest3d.vertices + config.deformation_magnitude * 0.02 * rest3d.rest_lengths.min() * traj_rng.normal(
        size=rest3d.vertices.shape
    )
    pinned = np.concatenate([left, right])
    for t in range(n_frames):
        phase = t / max(n_frames - 1, 1)
        targets = rest3d.vertices.copy()
        for side in sides:
            angle = side["angle_amp"] * np.sin(
                2 * np.pi * side["angle_freq"] * phase + side["angle_phase"]
            )
            rot = _rotation_matrix(side["axis"], angle)
            osc = np.sin(2 * np.pi * side["shift_freq"] * phase + side["shift_phase"])
            shift = side["shift_amp"] * osc
            # inward component stays well away from zero so the pin targets
            # remain reachable without stretch at every frame
            shift[0] = side["inward"] * side["shift_amp"][0] * (0.85 + 0.15 * osc[0])
            centroid = rest3d.vertices[side["pins"]].mean(axis=0)
            targets[side["pins"]] = (
                (rest3d.vertices[side["pins"]] - centroid) @ rot.T + centroid + shift
            )
        try:
            pos = _relax_to_pins(
                rest3d, pos, pinned, targets[pinned], edge_tol=0.002, max_sweeps=20000
            )
        except NoConvergence:
            # warm-started relaxation can inherit a fold from the previous
            # frame; restart this frame from the jittered rest sheet
            jit = np.random.default_rng(
                np.random.SeedSequence((int(config.seed), t, _TRAJECTORY_STREAM))
            )
            start = rest3d.vertices + config.deformation_magnitude * 0.02 * (
                rest3d.rest_lengths.min() * jit.normal(size=rest3d.vertices.shape)
            )
            pos = _relax_to_pins(
                rest3d, start, pinned, targets[pinned], edge_tol=0.002, max_sweeps=60000
            )
        placed = rest3d.with_vertices(pos + np.array([0.0, 0.0, config.depth]))
        rng = trial_rng(config.seed, t)
        matches, labels, gt2d, gt3d = generate_matches(
            flat2d, placed, intr, config.image_size, config.n_matches,
            config.correct_rate, rng,
        )
        frames.append(
            SyntheticFrame(
                rest_mesh=rest3d,
                flat_mesh=flat2d,
                deformed_mesh=placed,
                matches=matches,
                labels=labels,
                gt_image_points=gt2d,
                gt_points_3d=gt3d,
                intrinsics=intr,
                image_size=config.image_size,
            )
        )
    return frames


# ---------------------------------------------------------------------------
# config and output files


def scenario_from_dict(data: dict, path=None) -> ScenarioConfig:
    try:
        kwargs = dict(data)
        if "intrinsics" in kwargs:
            kwargs["intrinsics"] = intrinsics_from_dict(kwargs["intrinsics"], path)
        if "image_size" in kwargs:
            kwargs["image_size"] = tuple(int(x) for x in kwargs["image_size"])
        name = kwargs.pop("name", "custom")
        return ScenarioConfig.named(name, **kwargs)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid scenario config: {exc}") from exc


def parse_flat_toml(text: str, path) -> dict:
    """Minimal key = value parser for flat TOML-style scenario files."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if value.startswith("[") and value.endswith("]"):
            out[key] = [json.loads(v) for v in value[1:-1].split(",") if v.strip()]
        elif value.lower() in ("true", "false"):
            out[key] = value.lower() == "true"
        else:
            try:
                out[key] = json.loads(value)
            except json.JSONDecodeError:
                out[key] = value.strip("\"'")
    return out


def load_scenario(path) -> ScenarioConfig:
    """Scenario config from a JSON document or flat TOML-style file."""
    text = Path(path).read_text()
    if str(path).endswith(".toml"):
        data = parse_flat_toml(text, path)
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc.msg} (line {exc.lineno})") from exc
    return scenario_from_dict(data, path)


def write_trials_csv(records: list[TrialRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "seed", "tpr", "fpr", "aos", "ns", "runtime_s"])
        for r in records:
            writer.writerow(
                [
                    r.trial,
                    r.seed,
                    repr(r.metrics.tpr),
                    repr(r.metrics.fpr),
                    repr(r.metrics.aos),
                    repr(r.metrics.ns),
                    "" if r.metrics.runtime is None else f"{r.metrics.runtime:.6f}",
                ]
            )


def write_roc_csv(rows: list[tuple[float, float, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "tpr", "fpr"])
        for alpha, tpr, fpr in rows:
            writer.writerow([repr(alpha), repr(tpr), repr(fpr)])
