#!/usr/bin/env python3
"""Benchmark the compiled particle kernels against the pure-Python fallback.

Runs the same seeded workloads through sftrack._kernels (Cython) and
sftrack._kernels_py, checks that the results agree bit-for-bit, and prints
per-kernel timings plus an end-to-end frame benchmark on the active backend.

Usage: python benchmarks/bench_kernels.py [--sweeps N] [--repeats N]
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from sftrack import _kernels_py  # noqa: E402
from sftrack.backend import BACKEND_NAME  # noqa: E402
from sftrack.camera import DEFAULT_INTRINSICS  # noqa: E402
from sftrack.meshes import build_grid_mesh3d  # noqa: E402
from sftrack.pipeline import PipelineConfig, process_frame  # noqa: E402
from sftrack.synth import ScenarioConfig, generate_sequence, synthetic_template  # noqa: E402

try:
    from sftrack import _kernels as compiled
except ImportError:
    compiled = None


def timed(func, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        func()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(sweeps, repeats):
    mesh = build_grid_mesh3d(6, 10, 0.04)
    rng = np.random.default_rng(42)
    base = np.ascontiguousarray(mesh.vertices + rng.normal(scale=0.005, size=(60, 3)))
    base[:, 2] += 1.0
    inv_mass = np.ones(60)
    idx = np.arange(60, dtype=np.int64)
    targets = rng.uniform([50, 50], [590, 430], size=(60, 2))
    dirs = np.ascontiguousarray(DEFAULT_INTRINSICS.ray_directions(targets))
    centers = np.ascontiguousarray(base[idx[:4]] + 0.02)
    radii = np.full(4, 0.01)

    backends = [("python", _kernels_py)]
    if compiled is not None:
        backends.insert(0, ("compiled", compiled))

    workloads = {
        f"distance_sweeps x{sweeps}": lambda k, p: k.distance_sweeps(
            p, mesh.edges, mesh.rest_lengths, inv_mass, sweeps
        ),
        "project_sightlines x1000": lambda k, p: [
            k.project_sightlines(p, idx, dirs, 1e-3) for _ in range(1000)
        ],
        "absorb_to_spheres x1000": lambda k, p: [
            k.absorb_to_spheres(p, idx[:4], centers, radii) for _ in range(1000)
        ],
    }

    print(f"{'workload':<28} " + " ".join(f"{name:>12}" for name, _ in backends) + f" {'speedup':>9}")
    for label, run in workloads.items():
        times = []
        results = []
        for _, kernel in backends:
            pos = base.copy()
            times.append(timed(lambda k=kernel, p=pos: run(k, p), repeats))
            results.append(pos)
        agree = all(np.array_equal(results[0], r) for r in results[1:])
        speedup = times[-1] / times[0] if len(times) > 1 else float("nan")
        cells = " ".join(f"{t * 1000:>10.2f}ms" for t in times)
        print(f"{label:<28} {cells} {speedup:>8.1f}x  bit-identical={agree}")
        if not agree:
            raise SystemExit("backends disagree; see tests/test_backends.py")


def bench_pipeline():
    cfg = ScenarioConfig.named(
        "Dense", correct_rate=0.7, trials=1, seed=3, deformation_magnitude=0.45
    )
    frames = generate_sequence(cfg, 20)
    template = synthetic_template(cfg)
    pipeline_cfg = PipelineConfig()
    prev = None
    times = []
    for frame_id, frame in enumerate(frames):
        t0 = time.perf_counter()
        result = process_frame(template, frame.matches, pipeline_cfg, prev, frame_id)
        times.append(time.perf_counter() - t0)
        if not result.skipped:
            prev = result.shape
    print(
        f"\nend-to-end ({BACKEND_NAME} backend): median frame {np.median(times) * 1000:.1f} ms, "
        f"p90 {np.percentile(times, 90) * 1000:.1f} ms over {len(frames)} Dense frames"
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sweeps", type=int, default=2000)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    if compiled is None:
        print("compiled extension not built; benchmarking the fallback only")
    bench_kernels(args.sweeps, args.repeats)
    bench_pipeline()


if __name__ == "__main__":
    main()
