"""Monocular shape-from-template tracking of isometrically deforming surfaces.

The library covers the online pipeline after keypoint matching: mismatch
removal by neighborhood consistency, bicubic B-spline warp estimation,
particle-based isometric shape inference, plus a seeded synthetic benchmark
with ground truth and the metrics used to evaluate it.
"""
from .backend import BACKEND_NAME
from .camera import DEFAULT_INTRINSICS, CameraIntrinsics
from .errors import (
    CollapsedEdge,
    ConfigError,
    DegenerateInput,
    DegenerateTriangle,
    IndexOutOfRange,
    InsufficientMatches,
    InvalidDimensions,
    NoConvergence,
    ParseError,
    SftError,
    SingularSystem,
    TopologyMismatch,
    UnderConstrained,
)
from .meshes import (
    BarycentricAnchor,
    Mesh2D,
    Mesh3D,
    Triangulation,
    apply_barycentric,
    barycentric_coords,
    delaunay,
    first_order_neighbors,
    mean_pairwise_distance,
)
from .mismatch import (
    Classification,
    MatchLabels,
    MatchSet,
    SelectionResult,
    compute_mf,
    filter_matches,
    step1_select,
    step2_purify,
    step3_classify,
)
from .particles import (
    KnownPointConstraint,
    ParticleSystem,
    SightlineConstraint,
    SolverParams,
    apply_known_points,
    infer_shape,
    project_distance_constraints,
    project_sightlines,
    select_salient_points,
)
from .pipeline import FrameResult, PipelineConfig, process_frame, run_sequence
from .synth import (
    MetricsRecord,
    ScenarioConfig,
    SyntheticFrame,
    deform_mesh,
    evaluate_classification,
    generate_frame,
    generate_matches,
    generate_rest_mesh,
    roc_sweep,
    run_scenario,
    shape_error,
)
from .template import Template, build_template, import_template
from .warp import BicubicWarp, Rect, eval_bbs, fit_bbs, transfer_mesh

__version__ = "0.1.0"

__all__ = [
    "BACKEND_NAME",
    "BarycentricAnchor",
    "BicubicWarp",
    "CameraIntrinsics",
    "Classification",
    "CollapsedEdge",
    "ConfigError",
    "DEFAULT_INTRINSICS",
    "DegenerateInput",
    "DegenerateTriangle",
    "FrameResult",
    "IndexOutOfRange",
    "InsufficientMatches",
    "InvalidDimensions",
    "KnownPointConstraint",
    "MatchLabels",
    "MatchSet",
    "Mesh2D",
    "Mesh3D",
    "MetricsRecord",
    "NoConvergence",
    "ParseError",
    "ParticleSystem",
    "PipelineConfig",
    "Rect",
    "ScenarioConfig",
    "SelectionResult",
    "SftError",
    "SightlineConstraint",
    "SingularSystem",
    "SolverParams",
    "SyntheticFrame",
    "Template",
    "TopologyMismatch",
    "Triangulation",
    "UnderConstrained",
    "apply_barycentric",
    "apply_known_points",
    "barycentric_coords",
    "build_template",
    "compute_mf",
    "deform_mesh",
    "delaunay",
    "eval_bbs",
    "evaluate_classification",
    "filter_matches",
    "first_order_neighbors",
    "fit_bbs",
    "generate_frame",
    "generate_matches",
    "generate_rest_mesh",
    "import_template",
    "infer_shape",
    "mean_pairwise_distance",
    "process_frame",
    "project_distance_constraints",
    "project_sightlines",
    "roc_sweep",
    "run_scenario",
    "run_sequence",
    "select_salient_points",
    "shape_error",
    "step1_select",
    "step2_purify",
    "step3_classify",
    "transfer_mesh",
]
