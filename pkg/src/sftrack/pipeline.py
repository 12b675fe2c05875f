"""Per-frame pipeline: mismatch removal, warping, salient selection, inference.

Detection is tracking-by-detection: the mismatch classification of a frame
never depends on earlier frames; only shape inference is warm-started from
the previous result, which is what makes the tracker survive occlusions and
dropped frames.
"""
from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    CollapsedEdge,
    DegenerateInput,
    InsufficientMatches,
    ParseError,
    SingularSystem,
    UnderConstrained,
)
from .meshes import Mesh2D, Mesh3D
from .mismatch import (
    DEFAULT_ALPHA,
    Classification,
    MatchSet,
    filter_matches,
    load_matches,
)
from .particles import (
    KnownPointConstraint,
    SolveInfo,
    SolverParams,
    infer_shape,
    select_salient_points,
)
from .template import Template
from .warp import DEFAULT_GRID, DEFAULT_SMOOTHING, Rect, fit_bbs, transfer_mesh


@dataclass(frozen=True)
class PipelineConfig:
    """Tunables for the online stages; defaults match the module defaults."""

    alpha_s: float = DEFAULT_ALPHA
    warp_grid: tuple[int, int] = DEFAULT_GRID
    warp_smoothing: float = DEFAULT_SMOOTHING
    solver: SolverParams = field(default_factory=SolverParams)
    known_points: tuple[KnownPointConstraint, ...] = ()

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        kwargs: dict = {}
        if "alpha_s" in data:
            kwargs["alpha_s"] = float(data["alpha_s"])
        if "warp_grid" in data:
            kwargs["warp_grid"] = tuple(int(x) for x in data["warp_grid"])
        if "warp_smoothing" in data:
            kwargs["warp_smoothing"] = float(data["warp_smoothing"])
        solver_keys = {f: data[f] for f in
                       ("distance_sweeps", "max_outer", "tolerance", "z_min")
                       if f in data}
        if solver_keys:
            kwargs["solver"] = SolverParams(**solver_keys)
        if "known_points" in data:
            kwargs["known_points"] = tuple(
                KnownPointConstraint(
                    vertex_index=int(k["vertex_index"]),
                    center=tuple(float(c) for c in k["center"]),
                    radius=float(k["radius"]),
                )
                for k in data["known_points"]
            )
        return cls(**kwargs)


@dataclass(frozen=True)
class FrameResult:
    frame_id: int
    skipped: bool
    classification: Classification | None
    transferred_mesh: Mesh2D | None
    shape: Mesh3D
    solve_info: SolveInfo | None
    timings: dict[str, float]
    note: str = ""

    @property
    def converged(self) -> bool:
        return bool(self.solve_info.converged) if self.solve_info else False

    def record(self) -> dict:
        """Per-frame JSON record (stable key order)."""
        info = self.solve_info
        out = {
            "frame_id": self.frame_id,
            "skipped": self.skipped,
            "converged": self.converged,
            "outer_iterations": info.outer_iterations if info else 0,
            "max_edge_error": info.max_edge_error if info else None,
            "sightline_count": info.sightline_count if info else 0,
            "n_inliers": len(self.classification.inlier_indices)
            if self.classification is not None
            else 0,
            "n_outliers": len(self.classification.outlier_indices)
            if self.classification is not None
            else 0,
            "timings": {k: round(v, 6) for k, v in self.timings.items()},
        }
        if self.note:
            out["note"] = self.note
        return out


def process_frame(
    template: Template,
    matches: MatchSet,
    config: PipelineConfig | None = None,
    prev: Mesh3D | None = None,
    frame_id: int = 0,
) -> FrameResult:
    """Run mismatch removal, warping and shape inference for one frame.

    Algorithmic failures (too few matches, degenerate geometry, an
    under-constrained frame) degrade gracefully: the result carries the
    previous shape (or the template's initial pose) with the skipped flag
    set, so sequence runs survive bad frames.
    """
    config = config or PipelineConfig()
    fallback = prev if prev is not None else template.initial_pose
    timings: dict[str, float] = {}
    t_total = time.perf_counter()

    def _skip(note: str) -> FrameResult:
        timings["total"] = time.perf_counter() - t_total
        return FrameResult(
            frame_id=frame_id,
            skipped=True,
            classification=None,
            transferred_mesh=None,
            shape=fallback,
            solve_info=None,
            timings=timings,
            note=note,
        )

    # warp domain hugs the mesh: for built templates this is the texturemap
    # rectangle; for templates whose mesh covers only part of the texturemap
    # a full-rectangle control grid would be needlessly coarse over the mesh
    domain = Rect.around(template.texture_mesh.vertices)
    t0 = time.perf_counter()
    try:
        classification = filter_matches(
            matches,
            template.texture_mesh,
            alpha_s=config.alpha_s,
            domain=domain,
            grid=config.warp_grid,
            smoothing=config.warp_smoothing,
        )
    except (InsufficientMatches, DegenerateInput) as exc:
        return _skip(f"mismatch removal failed: {exc}")
    timings["mismatch_removal"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    inliers = classification.inlier_indices
    try:
        warp = fit_bbs(
            matches.template_points[inliers],
            matches.image_points[inliers],
            domain,
            grid=config.warp_grid,
            smoothing_lambda=config.warp_smoothing,
        )
    except (SingularSystem, ValueError) as exc:
        return _skip(f"warp estimation failed: {exc}")
    transferred = transfer_mesh(warp, template.texture_mesh)
    timings["warp"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    anchors = classification.template_anchors
    constraints = select_salient_points(
        template.texture_mesh,
        transferred,
        matches.template_points[inliers],
        anchors=(anchors[0][inliers], anchors[1][inliers]) if anchors else None,
    )
    timings["salient_selection"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        shape, info = infer_shape(
            template.rest_mesh,
            template.intrinsics,
            constraints,
            known=config.known_points,
            init=fallback,
            params=config.solver,
            warm_start=prev is not None,
        )
    except (UnderConstrained, CollapsedEdge) as exc:
        return _skip(f"shape inference failed: {exc}")
    timings["inference"] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_total
    return FrameResult(
        frame_id=frame_id,
        skipped=False,
        classification=classification,
        transferred_mesh=transferred,
        shape=shape,
        solve_info=info,
        timings=timings,
    )


# ---------------------------------------------------------------------------
# match sources and sequence running


class FileMatchSource:
    """Yields (frame_id, MatchSet or None) from an ordered list of CSV files.

    Unparseable files yield None with the error recorded, so a sequence run
    continues past them.
    """

    def __init__(self, paths):
        self.paths = [Path(p) for p in paths]
        self.errors: dict[int, str] = {}

    def __iter__(self):
        for frame_id, path in enumerate(self.paths):
            try:
                matches, _ = load_matches(path)
            except (ParseError, OSError) as exc:
                self.errors[frame_id] = str(exc)
                yield frame_id, None
                continue
            yield frame_id, matches


class SyntheticMatchSource:
    """Yields match sets from pre-generated synthetic frames."""

    def __init__(self, frames):
        self.frames = list(frames)
        self.errors: dict[int, str] = {}

    def __iter__(self):
        for frame_id, frame in enumerate(self.frames):
            yield frame_id, frame.matches


def run_sequence(
    template: Template,
    source,
    config: PipelineConfig | None = None,
    out_dir=None,
) -> list[FrameResult]:
    """Fold process_frame over a match source, threading the previous shape.

    Per-frame records are appended to ``frames.jsonl`` as soon as each frame
    finishes so long runs can be inspected mid-flight; a summary lands in
    ``sequence.json``.
    """
    config = config or PipelineConfig()
    results: list[FrameResult] = []
    prev: Mesh3D | None = None
    records_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        records_fh = open(out_dir / "frames.jsonl", "w")
    try:
        for frame_id, matches in source:
            if matches is None:
                result = process_frame(
                    template, MatchSet(np.empty((0, 2)), np.empty((0, 2))),
                    config, prev, frame_id,
                )
                note = getattr(source, "errors", {}).get(frame_id, "")
                if note:
                    result = replace(result, note=f"input error: {note}")
            else:
                result = process_frame(template, matches, config, prev, frame_id)
            if not result.skipped:
                prev = result.shape
            results.append(result)
            if records_fh is not None:
                records_fh.write(json.dumps(result.record()) + "\n")
                records_fh.flush()
    finally:
        if records_fh is not None:
            records_fh.close()
    if out_dir is not None:
        summary = {
            "frames": len(results),
            "skipped": sum(1 for r in results if r.skipped),
            "converged": sum(1 for r in results if r.converged),
            "mean_total_time": float(
                np.mean([r.timings.get("total", 0.0) for r in results])
            )
            if results
            else 0.0,
        }
        (out_dir / "sequence.json").write_text(json.dumps(summary, indent=1) + "\n")
    return results


# ---------------------------------------------------------------------------
# producer/consumer plumbing for live sources


class LatestWinsQueue:
    """Bounded depth-1 handoff where a new item replaces an unconsumed one.

    Mirrors a real-time capture loop: the consumer always sees the newest
    frame and stale frames are dropped rather than queued.
    """

    _CLOSED = object()

    def __init__(self):
        self._lock = threading.Lock()
        self._ready = threading.Condition(self._lock)
        self._item = None
        self._has_item = False
        self._closed = False
        self.dropped = 0

    def put(self, item) -> None:
        with self._ready:
            if self._closed:
                raise ValueError("queue is closed")
            if self._has_item:
                self.dropped += 1
            self._item = item
            self._has_item = True
            self._ready.notify()

    def close(self) -> None:
        with self._ready:
            self._closed = True
            self._ready.notify_all()

    def get(self):
        """Newest item, blocking; raises queue.Empty once closed and drained."""
        with self._ready:
            while not self._has_item:
                if self._closed:
                    raise queue.Empty
                self._ready.wait()
            item = self._item
            self._item = None
            self._has_item = False
            return item


def run_stream(
    template: Template,
    source,
    config: PipelineConfig | None = None,
) -> list[FrameResult]:
    """Producer/consumer run over a live-style source.

    The producer thread feeds a latest-wins queue of depth 1; the consumer
    is strictly sequential (warm-start dependency) and its results come out
    ordered by frame id. Frames may be dropped under load, so use
    run_sequence for reproducible offline processing.
    """
    config = config or PipelineConfig()
    handoff = LatestWinsQueue()

    def _produce():
        try:
            for frame_id, matches in source:
                handoff.put((frame_id, matches))
        finally:
            handoff.close()

    producer = threading.Thread(target=_produce, name="match-source")
    producer.start()
    results: list[FrameResult] = []
    prev: Mesh3D | None = None
    try:
        while True:
            try:
                frame_id, matches = handoff.get()
            except queue.Empty:
                break
            if matches is None:
                matches = MatchSet(np.empty((0, 2)), np.empty((0, 2)))
            result = process_frame(template, matches, config, prev, frame_id)
            if not result.skipped:
                prev = result.shape
            results.append(result)
    finally:
        producer.join()
    return results
