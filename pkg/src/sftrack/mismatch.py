"""Neighborhood-based mismatch removal for deforming-surface matches.

Works in three steps: (I) keep matches whose Delaunay neighbor sets agree
between texturemap and image, (II) purify that selection with a robust MAD
rule on warp-transfer residuals, (III) classify every match by its transfer
distance through the purified warp. Pure and deterministic; independent
match sets can be processed in parallel.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import DegenerateInput, InsufficientMatches, ParseError, SingularSystem
from .meshes import (
    Mesh2D,
    Triangulation,
    apply_anchors,
    barycentric_anchors,
    delaunay,
    mean_pairwise_distance,
)
from .warp import (
    DEFAULT_GRID,
    DEFAULT_SMOOTHING,
    BicubicWarp,
    Rect,
    fit_bbs,
    transfer_mesh,
)

DEFAULT_ALPHA = 0.15  # threshold coefficient on the sample length
MAD_SCALE = 1.4826
MAD_CUTOFF = 2.5
MIN_WARP_MATCHES = 4
_ZERO_SPREAD = 1e-9  # px; below this the MAD rule degenerates


@dataclass(frozen=True)
class MatchSet:
    """Paired 2D points: texturemap side and image side."""

    template_points: np.ndarray
    image_points: np.ndarray

    def __post_init__(self):
        tp = np.asarray(self.template_points, dtype=np.float64).reshape(-1, 2)
        ip = np.asarray(self.image_points, dtype=np.float64).reshape(-1, 2)
        if len(tp) != len(ip):
            raise ValueError(f"point counts differ: {len(tp)} vs {len(ip)}")
        if not (np.all(np.isfinite(tp)) and np.all(np.isfinite(ip))):
            raise ValueError("match points must be finite")
        tp.setflags(write=False)
        ip.setflags(write=False)
        object.__setattr__(self, "template_points", tp)
        object.__setattr__(self, "image_points", ip)

    def __len__(self) -> int:
        return len(self.template_points)


@dataclass(frozen=True)
class MatchLabels:
    """Ground-truth correctness per match (synthetic mode only)."""

    is_correct: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.is_correct, dtype=bool)
        arr.setflags(write=False)
        object.__setattr__(self, "is_correct", arr)

    def __len__(self) -> int:
        return len(self.is_correct)


@dataclass(frozen=True)
class SelectionResult:
    """Selected match subset plus the warp and mesh it produced."""

    selected_indices: np.ndarray
    mf_values: np.ndarray
    mf_threshold: float
    warp: BicubicWarp
    transferred_mesh: Mesh2D
    stage: str = "select"

    def __post_init__(self):
        sel = np.asarray(self.selected_indices, dtype=np.int64)
        sel.setflags(write=False)
        mf = np.asarray(self.mf_values, dtype=np.float64)
        mf.setflags(write=False)
        object.__setattr__(self, "selected_indices", sel)
        object.__setattr__(self, "mf_values", mf)


@dataclass(frozen=True)
class Classification:
    """Final inlier/outlier partition over all matches."""

    inlier_indices: np.ndarray
    outlier_indices: np.ndarray
    d3_values: np.ndarray
    d3_threshold: float
    sample_length: float
    selection: SelectionResult | None = None
    purified: SelectionResult | None = None
    # cached rest-mesh anchors of all template points (tri indices, weights)
    template_anchors: tuple | None = None

    def __post_init__(self):
        inl = np.asarray(self.inlier_indices, dtype=np.int64)
        out = np.asarray(self.outlier_indices, dtype=np.int64)
        d3 = np.asarray(self.d3_values, dtype=np.float64)
        inl.setflags(write=False)
        out.setflags(write=False)
        d3.setflags(write=False)
        object.__setattr__(self, "inlier_indices", inl)
        object.__setattr__(self, "outlier_indices", out)
        object.__setattr__(self, "d3_values", d3)

    @property
    def n_matches(self) -> int:
        return len(self.d3_values)

    def is_inlier(self) -> np.ndarray:
        mask = np.zeros(self.n_matches, dtype=bool)
        mask[self.inlier_indices] = True
        return mask


def mf_from_neighbor_sets(qp: set[int], qq: set[int]) -> float:
    """Neighbor disagreement as a percentage: |sym. difference| / |union|."""
    union = len(qp | qq)
    if union == 0:
        return 0.0
    inter = len(qp & qq)
    return (union - inter) / union * 100.0


def _adjacency_matrix(t: Triangulation):
    return sparse.csr_matrix(
        (np.ones(len(t._indices)), t._indices, t._indptr),
        shape=(t.n_points, t.n_points),
    )


def _mf_from_triangulations(tp: Triangulation, tq: Triangulation) -> np.ndarray:
    inter = np.asarray(
        _adjacency_matrix(tp).multiply(_adjacency_matrix(tq)).sum(axis=1)
    ).ravel()
    union = np.diff(tp._indptr) + np.diff(tq._indptr) - inter
    return np.where(union > 0, (union - inter) / np.maximum(union, 1.0) * 100.0, 0.0)


def compute_mf(matches: MatchSet) -> np.ndarray:
    """Per-match neighbor-disagreement percentage in [0, 100].

    Triangulates both point sets and compares each match's first-order
    neighbor sets. Raises DegenerateInput (via delaunay) for fewer than 3
    matches or an all-collinear side.
    """
    if len(matches) < 3:
        raise DegenerateInput(f"need at least 3 matches, got {len(matches)}")
    tp = delaunay(matches.template_points)
    tq = delaunay(matches.image_points)
    return _mf_from_triangulations(tp, tq)


def _fit_selected(
    matches: MatchSet,
    template_mesh: Mesh2D,
    selected: np.ndarray,
    domain: Rect | None,
    grid: tuple[int, int],
    smoothing: float,
    stage: str,
) -> tuple[BicubicWarp, Mesh2D]:
    if len(selected) < MIN_WARP_MATCHES:
        raise InsufficientMatches(
            f"{stage}: {len(selected)} matches left, need >= {MIN_WARP_MATCHES}",
            stage=stage,
        )
    if domain is None:
        domain = Rect.around(
            np.vstack([template_mesh.vertices, matches.template_points])
        )
    try:
        warp = fit_bbs(
            matches.template_points[selected],
            matches.image_points[selected],
            domain,
            grid=grid,
            smoothing_lambda=smoothing,
        )
    except SingularSystem as exc:
        raise InsufficientMatches(f"{stage}: warp fit failed: {exc}", stage=stage) from exc
    return warp, transfer_mesh(warp, template_mesh)


def step1_select(
    matches: MatchSet,
    template_mesh: Mesh2D,
    domain: Rect | None = None,
    grid: tuple[int, int] = DEFAULT_GRID,
    smoothing: float = DEFAULT_SMOOTHING,
) -> SelectionResult:
    """Select matches with neighbor disagreement at or below the mean.

    The inclusive threshold keeps perfect data (all values zero) fully
    selected. Fits a warp over the selection and transfers the template mesh.
    """
    mf = compute_mf(matches)
    threshold = float(mf.mean())
    selected = np.flatnonzero(mf <= threshold)
    warp, transferred = _fit_selected(
        matches, template_mesh, selected, domain, grid, smoothing, "select"
    )
    return SelectionResult(selected, mf, threshold, warp, transferred, stage="select")


def mad_keep_mask(residuals) -> np.ndarray:
    """Keep mask of the robust spread rule: drop |r - median| >= 2.5 * MAD.

    MAD is the scaled median absolute deviation (factor 1.4826). With zero
    spread (MAD below 1e-9 px) only residuals strictly away from the median
    are dropped, so equal-residual data survives intact.
    """
    r = np.asarray(residuals, dtype=np.float64)
    med = float(np.median(r))
    dev = np.abs(r - med)
    mad = MAD_SCALE * float(np.median(dev))
    if mad < _ZERO_SPREAD:
        return dev <= _ZERO_SPREAD
    return dev < MAD_CUTOFF * mad


def step2_purify(
    sel: SelectionResult,
    matches: MatchSet,
    template_mesh: Mesh2D,
    domain: Rect | None = None,
    grid: tuple[int, int] = DEFAULT_GRID,
    smoothing: float = DEFAULT_SMOOTHING,
) -> SelectionResult:
    """Drop selected matches whose transfer residual is a MAD outlier.

    Residuals are measured by anchoring each selected template point in the
    rest mesh and evaluating the anchor on the stage-1 transferred mesh.
    """
    selected = sel.selected_indices
    if len(selected) < MIN_WARP_MATCHES:
        raise InsufficientMatches(
            f"purify: selection of {len(selected)} is too small", stage="purify"
        )
    tri_idx, weights = barycentric_anchors(
        matches.template_points[selected], template_mesh
    )
    transferred_pts = apply_anchors(tri_idx, weights, sel.transferred_mesh)
    d2 = np.linalg.norm(transferred_pts - matches.image_points[selected], axis=1)
    survivors = selected[mad_keep_mask(d2)]
    if len(survivors) < MIN_WARP_MATCHES:
        raise InsufficientMatches(
            f"purify: {len(survivors)} matches survived, need >= {MIN_WARP_MATCHES}",
            stage="purify",
        )
    warp, transferred = _fit_selected(
        matches, template_mesh, survivors, domain, grid, smoothing, "purify"
    )
    return SelectionResult(
        survivors, sel.mf_values, sel.mf_threshold, warp, transferred, stage="purify"
    )


def step3_classify(
    matches: MatchSet,
    sel: SelectionResult,
    template_mesh: Mesh2D,
    alpha_s: float = DEFAULT_ALPHA,
) -> Classification:
    """Partition all matches by transfer distance through the purified mesh.

    A match is an outlier when its distance is at least alpha_s times the
    sample length (mean pairwise distance of the transferred mesh).
    """
    if alpha_s <= 0:
        raise ValueError(f"alpha_s must be positive, got {alpha_s}")
    tri_idx, weights = barycentric_anchors(matches.template_points, template_mesh)
    transferred_pts = apply_anchors(tri_idx, weights, sel.transferred_mesh)
    d3 = np.linalg.norm(transferred_pts - matches.image_points, axis=1)
    sample_length = mean_pairwise_distance(sel.transferred_mesh)
    threshold = alpha_s * sample_length
    outlier_mask = d3 >= threshold
    return Classification(
        inlier_indices=np.flatnonzero(~outlier_mask),
        outlier_indices=np.flatnonzero(outlier_mask),
        d3_values=d3,
        d3_threshold=float(threshold),
        sample_length=float(sample_length),
        template_anchors=(tri_idx, weights),
    )


def filter_matches(
    matches: MatchSet,
    template_mesh: Mesh2D,
    alpha_s: float = DEFAULT_ALPHA,
    domain: Rect | None = None,
    grid: tuple[int, int] = DEFAULT_GRID,
    smoothing: float = DEFAULT_SMOOTHING,
) -> Classification:
    """Run all three mismatch-removal steps and keep stage artifacts.

    Raises InsufficientMatches with the failing stage recorded when a step
    cannot continue.
    """
    try:
        sel1 = step1_select(matches, template_mesh, domain, grid, smoothing)
    except DegenerateInput as exc:
        raise InsufficientMatches(f"select: {exc}", stage="select") from exc
    sel2 = step2_purify(sel1, matches, template_mesh, domain, grid, smoothing)
    result = step3_classify(matches, sel2, template_mesh, alpha_s)
    return replace(result, selection=sel1, purified=sel2)


def classify_from_distances(d3: np.ndarray, sample_length: float, alpha_s: float) -> np.ndarray:
    """Outlier mask for precomputed transfer distances (threshold sweep)."""
    return np.asarray(d3) >= alpha_s * sample_length


# ---------------------------------------------------------------------------
# file formats


def load_matches(path) -> tuple[MatchSet, MatchLabels | None]:
    """Read a ``xp,yp,xq,yq[,label]`` CSV; label column is optional."""
    tp: list[list[float]] = []
    ip: list[list[float]] = []
    labels: list[bool] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty match file", path=path) from None
        cols = [c.strip().lower() for c in header]
        if cols[:4] != ["xp", "yp", "xq", "yq"]:
            raise ParseError(
                f"expected header xp,yp,xq,yq[,label], got {','.join(header)}",
                path=path,
                line=1,
            )
        has_label = len(cols) > 4 and cols[4] == "label"
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                tp.append([float(row[0]), float(row[1])])
                ip.append([float(row[2]), float(row[3])])
                if has_label:
                    labels.append(bool(int(row[4])))
            except (ValueError, IndexError) as exc:
                raise ParseError(f"bad match row {row!r}", path=path, line=lineno) from exc
    matches = MatchSet(np.asarray(tp).reshape(-1, 2), np.asarray(ip).reshape(-1, 2))
    return matches, (MatchLabels(np.asarray(labels)) if has_label else None)


def save_matches(matches: MatchSet, path, labels: MatchLabels | None = None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["xp", "yp", "xq", "yq"] + (["label"] if labels is not None else []))
        for i in range(len(matches)):
            row = [
                repr(float(matches.template_points[i, 0])),
                repr(float(matches.template_points[i, 1])),
                repr(float(matches.image_points[i, 0])),
                repr(float(matches.image_points[i, 1])),
            ]
            if labels is not None:
                row.append(str(int(labels.is_correct[i])))
            writer.writerow(row)


def save_classification_csv(result: Classification, path) -> None:
    """``index,d3,is_inlier`` rows for every match."""
    mask = result.is_inlier()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "d3", "is_inlier"])
        for i in range(result.n_matches):
            writer.writerow([i, repr(float(result.d3_values[i])), int(mask[i])])


def diagnostics_dict(result: Classification) -> dict:
    """Thresholds, per-step selections and distances for inspection."""
    out = {
        "n_matches": result.n_matches,
        "d3_threshold": result.d3_threshold,
        "sample_length": result.sample_length,
        "d3_values": [float(x) for x in result.d3_values],
        "inlier_indices": [int(i) for i in result.inlier_indices],
        "outlier_indices": [int(i) for i in result.outlier_indices],
    }
    if result.selection is not None:
        out["mf_values"] = [float(x) for x in result.selection.mf_values]
        out["mf_threshold"] = result.selection.mf_threshold
        out["selected_step1"] = [int(i) for i in result.selection.selected_indices]
    if result.purified is not None:
        out["selected_step2"] = [int(i) for i in result.purified.selected_indices]
    return out


def save_diagnostics(result: Classification, path) -> None:
    Path(path).write_text(json.dumps(diagnostics_dict(result), indent=1) + "\n")
