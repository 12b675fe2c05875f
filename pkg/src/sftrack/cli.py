"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 IO error, 4 algorithmic
failure in single-shot mode (sequence runs degrade gracefully instead).
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .camera import DEFAULT_INTRINSICS, CameraIntrinsics, load_intrinsics, save_intrinsics
from .errors import (
    ConfigError,
    InvalidDimensions,
    ParseError,
    SftError,
    TopologyMismatch,
)
from .meshes import save_mesh_json, save_mesh_obj
from .mismatch import (
    filter_matches,
    load_matches,
    save_classification_csv,
    save_diagnostics,
    save_matches,
)
from .particles import infer_shape, select_salient_points
from .pipeline import FileMatchSource, PipelineConfig, run_sequence
from .synth import (
    ScenarioConfig,
    generate_frame,
    generate_rest_mesh,
    roc_sweep,
    run_scenario,
    scenario_from_dict,
    summarize,
    synthetic_template,
    write_roc_csv,
    write_trials_csv,
)
from .template import build_template, import_template, load_template, save_template
from .warp import Rect, fit_bbs, transfer_mesh


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if str(path).endswith(".toml"):
        from .synth import parse_flat_toml

        return parse_flat_toml(text, path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc.msg} (line {exc.lineno})") from exc


def _emit(ctx_obj: dict, payload: dict) -> None:
    """Print a summary in the selected --format."""
    if ctx_obj.get("format") == "csv":
        keys = list(payload)
        click.echo(",".join(keys))
        click.echo(",".join(str(payload[k]) for k in keys))
    else:
        click.echo(json.dumps(payload, indent=1))


def _out_dir(ctx_obj: dict) -> Path:
    out = Path(ctx_obj.get("out") or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


@click.group()
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON config file (pipeline/scenario sections or flat keys).")
@click.option("--seed", type=int, default=None, help="Root seed for synthetic runs.")
@click.option("--out", type=click.Path(), default=None, help="Output directory.")
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json",
              help="Format of the summary printed to stdout.")
@click.pass_context
def cli(ctx, config_path, seed, out, fmt):
    """Monocular 3D shape tracking of isometrically deforming surfaces."""
    ctx.obj = {
        "config": _load_config_file(config_path),
        "seed": seed,
        "out": out,
        "format": fmt,
    }


def _pipeline_config(ctx_obj: dict) -> PipelineConfig:
    data = ctx_obj["config"]
    return PipelineConfig.from_dict(data.get("pipeline", data))


def _scenario_config(ctx_obj: dict, **overrides) -> ScenarioConfig:
    data = dict(ctx_obj["config"].get("scenario", ctx_obj["config"]))
    data = {k: v for k, v in data.items() if k in ScenarioConfig.__dataclass_fields__}
    data.update({k: v for k, v in overrides.items() if v is not None})
    if ctx_obj.get("seed") is not None:
        data["seed"] = ctx_obj["seed"]
    return scenario_from_dict(data)


def _intrinsics_from_options(path, fx, fy, cx, cy, width, height) -> CameraIntrinsics:
    if path is not None:
        return load_intrinsics(path)
    if fx is None:
        return DEFAULT_INTRINSICS
    return CameraIntrinsics(fx=fx, fy=fy if fy is not None else fx,
                            cx=cx, cy=cy, width=width, height=height)


# ---------------------------------------------------------------------------
# template


@cli.group()
def template():
    """Build, import or inspect templates."""


@template.command("build")
@click.option("--width", type=float, required=True, help="Physical width (m).")
@click.option("--height", type=float, required=True, help="Physical height (m).")
@click.option("--rows", type=int, default=6, show_default=True)
@click.option("--cols", type=int, default=10, show_default=True)
@click.option("--tex-width", type=int, required=True, help="Texturemap width (px).")
@click.option("--tex-height", type=int, required=True, help="Texturemap height (px).")
@click.option("--intrinsics", "intrinsics_path", type=click.Path(exists=True), default=None)
@click.option("--fx", type=float, default=None)
@click.option("--fy", type=float, default=None)
@click.option("--cx", type=float, default=320.0, show_default=True)
@click.option("--cy", type=float, default=240.0, show_default=True)
@click.pass_obj
def template_build(obj, width, height, rows, cols, tex_width, tex_height,
                   intrinsics_path, fx, fy, cx, cy):
    """Create a template for a planar rectangular surface."""
    intr = _intrinsics_from_options(intrinsics_path, fx, fy, cx, cy, None, None)
    tpl = build_template(width, height, rows, cols, (tex_width, tex_height), intr)
    out = _out_dir(obj)
    path = out / "template.json"
    save_template(tpl, path)
    _emit(obj, {
        "template": str(path),
        "vertices": tpl.rest_mesh.n_vertices,
        "triangles": len(tpl.rest_mesh.triangles),
        "texture_size": list(tpl.texture_size),
    })


@template.command("import")
@click.option("--mesh3d", type=click.Path(exists=True), required=True)
@click.option("--mesh2d", type=click.Path(exists=True), required=True)
@click.option("--intrinsics", "intrinsics_path", type=click.Path(exists=True), required=True)
@click.option("--tex-width", type=int, default=None)
@click.option("--tex-height", type=int, default=None)
@click.pass_obj
def template_import(obj, mesh3d, mesh2d, intrinsics_path, tex_width, tex_height):
    """Assemble a template from user-prepared mesh and intrinsics files."""
    size = (tex_width, tex_height) if tex_width and tex_height else None
    tpl = import_template(mesh3d, mesh2d, intrinsics_path, texture_size=size)
    out = _out_dir(obj)
    path = out / "template.json"
    save_template(tpl, path)
    _emit(obj, {
        "template": str(path),
        "vertices": tpl.rest_mesh.n_vertices,
        "triangles": len(tpl.rest_mesh.triangles),
        "texture_size": list(tpl.texture_size),
    })


@template.command("show")
@click.argument("path", type=click.Path(exists=True))
@click.pass_obj
def template_show(obj, path):
    """Print a template summary."""
    tpl = load_template(path)
    lo = tpl.rest_mesh.vertices.min(axis=0)
    hi = tpl.rest_mesh.vertices.max(axis=0)
    _emit(obj, {
        "vertices": tpl.rest_mesh.n_vertices,
        "triangles": len(tpl.rest_mesh.triangles),
        "edges": len(tpl.rest_mesh.edges),
        "texture_size": list(tpl.texture_size),
        "physical_size": [float(hi[0] - lo[0]), float(hi[1] - lo[1])],
        "intrinsics": tpl.intrinsics.to_dict(),
    })


# ---------------------------------------------------------------------------
# synth


@cli.group()
def synth():
    """Synthetic ground-truthed benchmark."""


@synth.command("mesh")
@click.option("--rows", type=int, default=6, show_default=True)
@click.option("--cols", type=int, default=10, show_default=True)
@click.option("--spacing", type=float, default=0.04, show_default=True)
@click.pass_obj
def synth_mesh(obj, rows, cols, spacing):
    """Generate the rest mesh and its flat-image counterpart."""
    mesh3d, mesh2d = generate_rest_mesh(rows, cols, spacing)
    out = _out_dir(obj)
    save_mesh_json(mesh3d, out / "mesh_rest_3d.json")
    save_mesh_obj(mesh3d, out / "mesh_rest_3d.obj")
    save_mesh_json(mesh2d, out / "mesh_flat_2d.json")
    _emit(obj, {
        "vertices": mesh3d.n_vertices,
        "triangles": len(mesh3d.triangles),
        "edges": len(mesh3d.edges),
        "out": str(out),
    })


@synth.command("frame")
@click.option("--n-matches", type=int, default=None)
@click.option("--correct-rate", type=float, default=None)
@click.option("--magnitude", type=float, default=None)
@click.option("--trial", type=int, default=0, show_default=True)
@click.pass_obj
def synth_frame(obj, n_matches, correct_rate, magnitude, trial):
    """Generate one ground-truthed frame and dump it to files."""
    cfg = _scenario_config(obj, n_matches=n_matches, correct_rate=correct_rate,
                           deformation_magnitude=magnitude)
    frame = generate_frame(cfg, trial)
    out = _out_dir(obj)
    save_matches(frame.matches, out / "matches.csv", frame.labels)
    save_mesh_json(frame.rest_mesh, out / "mesh_rest_3d.json")
    save_mesh_json(frame.flat_mesh, out / "mesh_flat_2d.json")
    save_mesh_json(frame.deformed_mesh, out / "mesh_deformed_3d.json")
    save_mesh_obj(frame.deformed_mesh, out / "mesh_deformed_3d.obj")
    save_intrinsics(frame.intrinsics, out / "intrinsics.json")
    save_template(synthetic_template(cfg), out / "template.json")
    meta = {
        "seed": cfg.seed,
        "trial": trial,
        "n_matches": cfg.n_matches,
        "correct_rate": cfg.correct_rate,
        "n_mismatches": int((~frame.labels.is_correct).sum()),
        "image_size": list(frame.image_size),
    }
    (out / "frame.json").write_text(json.dumps(meta, indent=1) + "\n")
    _emit(obj, meta)


@synth.command("scenario")
@click.option("--name", type=str, default=None,
              help="Dense/Moderate/Sparse preset or custom (default).")
@click.option("--n-matches", type=int, default=None)
@click.option("--correct-rate", type=float, default=None)
@click.option("--trials", type=int, default=None)
@click.option("--alpha", "alpha_s", type=float, default=0.15, show_default=True)
@click.pass_obj
def synth_scenario(obj, name, n_matches, correct_rate, trials, alpha_s):
    """Run seeded trials and report TPR/FPR/AoS/n_s."""
    cfg = _scenario_config(obj, name=name, n_matches=n_matches,
                           correct_rate=correct_rate, trials=trials)
    records = run_scenario(cfg, alpha_s=alpha_s)
    out = _out_dir(obj)
    write_trials_csv(records, out / "trials.csv")
    summary = {"scenario": cfg.name, "n_matches": cfg.n_matches,
               "correct_rate": cfg.correct_rate, "alpha_s": alpha_s,
               **summarize(records)}
    (out / "summary.json").write_text(
        json.dumps({k: v for k, v in summary.items() if k != "mean_runtime"}, indent=1)
        + "\n"
    )
    _emit(obj, summary)


def _parse_alphas(spec: str) -> list[float]:
    if ":" in spec:
        try:
            lo, hi, count = spec.split(":")
            return list(np.linspace(float(lo), float(hi), int(count)))
        except ValueError as exc:
            raise ConfigError(f"bad alpha range {spec!r}, want lo:hi:count") from exc
    try:
        return [float(a) for a in spec.split(",") if a.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad alpha list {spec!r}") from exc


@synth.command("roc")
@click.option("--name", type=str, default=None)
@click.option("--n-matches", type=int, default=None)
@click.option("--correct-rate", type=float, default=None)
@click.option("--trials", type=int, default=None)
@click.option("--alphas", type=str, default="0.02:1.0:20", show_default=True,
              help="Comma list or lo:hi:count range of threshold coefficients.")
@click.pass_obj
def synth_roc(obj, name, n_matches, correct_rate, trials, alphas):
    """Sweep the classification threshold and write a ROC table."""
    cfg = _scenario_config(obj, name=name, n_matches=n_matches,
                           correct_rate=correct_rate, trials=trials)
    rows = roc_sweep(cfg, _parse_alphas(alphas))
    out = _out_dir(obj)
    write_roc_csv(rows, out / "roc.csv")
    _emit(obj, {
        "scenario": cfg.name,
        "points": len(rows),
        "tpr_first": rows[0][1],
        "fpr_first": rows[0][2],
        "tpr_last": rows[-1][1],
        "fpr_last": rows[-1][2],
        "out": str(out / "roc.csv"),
    })


# ---------------------------------------------------------------------------
# mismatch removal


@cli.group()
def mismatch():
    """Neighborhood-based mismatch removal."""


@mismatch.command("run")
@click.option("--template", "template_path", type=click.Path(exists=True), required=True)
@click.option("--matches", "matches_path", type=click.Path(exists=True), required=True)
@click.option("--alpha", "alpha_s", type=float, default=0.15, show_default=True)
@click.pass_obj
def mismatch_run(obj, template_path, matches_path, alpha_s):
    """Classify a match file against a template (single-shot)."""
    tpl = load_template(template_path)
    matches, _ = load_matches(matches_path)
    domain = Rect(0.0, 0.0, float(tpl.texture_size[0]), float(tpl.texture_size[1]))
    result = filter_matches(matches, tpl.texture_mesh, alpha_s=alpha_s, domain=domain)
    out = _out_dir(obj)
    save_classification_csv(result, out / "classification.csv")
    save_diagnostics(result, out / "diagnostics.json")
    _emit(obj, {
        "n_matches": result.n_matches,
        "inliers": len(result.inlier_indices),
        "outliers": len(result.outlier_indices),
        "d3_threshold": result.d3_threshold,
        "out": str(out),
    })


# ---------------------------------------------------------------------------
# shape inference


@cli.group()
def sft():
    """Shape inference from a single frame."""


@sft.command("solve")
@click.option("--template", "template_path", type=click.Path(exists=True), required=True)
@click.option("--matches", "matches_path", type=click.Path(exists=True), required=True)
@click.option("--alpha", "alpha_s", type=float, default=0.15, show_default=True)
@click.pass_obj
def sft_solve(obj, template_path, matches_path, alpha_s):
    """Full single-frame solve: mismatch removal, warp, inference."""
    tpl = load_template(template_path)
    matches, _ = load_matches(matches_path)
    cfg = _pipeline_config(obj)
    domain = Rect(0.0, 0.0, float(tpl.texture_size[0]), float(tpl.texture_size[1]))
    classification = filter_matches(
        matches, tpl.texture_mesh, alpha_s=alpha_s, domain=domain,
        grid=cfg.warp_grid, smoothing=cfg.warp_smoothing,
    )
    inliers = classification.inlier_indices
    warp = fit_bbs(matches.template_points[inliers], matches.image_points[inliers],
                   domain, grid=cfg.warp_grid, smoothing_lambda=cfg.warp_smoothing)
    transferred = transfer_mesh(warp, tpl.texture_mesh)
    constraints = select_salient_points(
        tpl.texture_mesh, transferred, matches.template_points[inliers]
    )
    shape, info = infer_shape(
        tpl.rest_mesh, tpl.intrinsics, constraints,
        known=cfg.known_points, init=tpl.initial_pose, params=cfg.solver,
    )
    out = _out_dir(obj)
    save_mesh_json(shape, out / "shape.json")
    save_mesh_obj(shape, out / "shape.obj")
    record = {
        "frame_id": 0,
        "converged": info.converged,
        "outer_iterations": info.outer_iterations,
        "max_edge_error": info.max_edge_error,
        "sightline_count": info.sightline_count,
        "inliers": len(inliers),
        "outliers": len(classification.outlier_indices),
    }
    (out / "record.json").write_text(json.dumps(record, indent=1) + "\n")
    _emit(obj, record)


# ---------------------------------------------------------------------------
# pipeline


@cli.group()
def pipeline():
    """Multi-frame tracking runs."""


@pipeline.command("run")
@click.option("--template", "template_path", type=click.Path(exists=True), required=True)
@click.option("--matches", "match_paths", type=click.Path(), multiple=True,
              help="Match CSV files in frame order (repeatable).")
@click.option("--matches-dir", type=click.Path(exists=True), default=None,
              help="Directory of *.csv match files, sorted by name.")
@click.option("--save-shapes", is_flag=True, default=False,
              help="Write shape_<frame>.json for every frame.")
@click.pass_obj
def pipeline_run(obj, template_path, match_paths, matches_dir, save_shapes):
    """Track a sequence of match files (graceful per-frame degradation)."""
    tpl = load_template(template_path)
    paths = list(match_paths)
    if matches_dir is not None:
        paths += sorted(str(p) for p in Path(matches_dir).glob("*.csv"))
    if not paths:
        raise ConfigError("no match files given (use --matches or --matches-dir)")
    cfg = _pipeline_config(obj)
    out = _out_dir(obj)
    results = run_sequence(tpl, FileMatchSource(paths), cfg, out_dir=out)
    if save_shapes:
        for r in results:
            save_mesh_json(r.shape, out / f"shape_{r.frame_id:04d}.json")
    _emit(obj, {
        "frames": len(results),
        "skipped": sum(1 for r in results if r.skipped),
        "converged": sum(1 for r in results if r.converged),
        "out": str(out),
    })


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 130
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.FileError as exc:
        exc.show()
        return 3
    except click.ClickException as exc:
        exc.show()
        return 2
    except (ConfigError, InvalidDimensions) as exc:
        click.echo(f"config error: {exc}", err=True)
        return 2
    except (ParseError, TopologyMismatch, OSError) as exc:
        click.echo(f"io error: {exc}", err=True)
        return 3
    except SftError as exc:
        click.echo(f"error: {exc}", err=True)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
