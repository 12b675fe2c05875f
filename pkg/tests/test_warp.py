import json

import numpy as np
import pytest

from sftrack.errors import InvalidDimensions, SingularSystem
from sftrack.meshes import Mesh2D, build_grid_mesh3d
from sftrack.warp import (
    BicubicWarp,
    Rect,
    bending_matrix,
    eval_bbs,
    fit_bbs,
    load_warp,
    save_warp,
    transfer_mesh,
)

DOMAIN = Rect(0.0, 0.0, 640.0, 480.0)


def grid_points(nx, ny, rect=DOMAIN):
    xs = np.linspace(rect.xmin, rect.xmax, nx)
    ys = np.linspace(rect.ymin, rect.ymax, ny)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def cox_de_boor(u, k, degree, knots):
    """Naive recursive B-spline basis over an explicit knot vector."""
    if degree == 0:
        return 1.0 if knots[k] <= u < knots[k + 1] else 0.0
    left = 0.0
    if knots[k + degree] != knots[k]:
        left = (u - knots[k]) / (knots[k + degree] - knots[k]) * cox_de_boor(
            u, k, degree - 1, knots
        )
    right = 0.0
    if knots[k + degree + 1] != knots[k + 1]:
        right = (knots[k + degree + 1] - u) / (knots[k + degree + 1] - knots[k + 1]) * cox_de_boor(
            u, k + 1, degree - 1, knots
        )
    return left + right


def eval_oracle(warp, point):
    """Direct tensor Cox-de Boor summation over all control points."""
    nu, nv = warp.grid
    u = (point[0] - warp.domain.xmin) / warp.domain.width
    v = (point[1] - warp.domain.ymin) / warp.domain.height
    knots_u = [(k - 3) / (nu - 3) for k in range(nu + 4)]
    knots_v = [(k - 3) / (nv - 3) for k in range(nv + 4)]
    coeffs = warp.coefficients.reshape(nu, nv, 2)
    out = np.zeros(2)
    for i in range(nu):
        bu = cox_de_boor(u, i, 3, knots_u)
        if bu == 0.0:
            continue
        for j in range(nv):
            bv = cox_de_boor(v, j, 3, knots_v)
            if bv:
                out += bu * bv * coeffs[i, j]
    return out


class TestFit:
    def test_identity_from_16_grid_points(self, rng):
        pts = grid_points(4, 4)
        warp = fit_bbs(pts, pts, DOMAIN)
        probes = rng.uniform([0, 0], [640, 480], size=(100, 2))
        assert np.abs(eval_bbs(warp, probes) - probes).max() < 1e-6

    def test_translation_is_bending_free(self, rng):
        src = rng.uniform([10, 10], [630, 470], size=(25, 2))
        warp = fit_bbs(src, src + [7.0, -3.0], DOMAIN, smoothing_lambda=1e-4)
        probes = rng.uniform([20, 20], [620, 460], size=(200, 2))
        delta = eval_bbs(warp, probes) - probes
        assert np.abs(delta - [7.0, -3.0]).max() < 1e-3

    def test_affine_oracle(self, rng):
        src = rng.uniform([0, 0], [640, 480], size=(50, 2))
        affine = np.array([[1.1, 0.2], [-0.15, 0.9]])
        offset = np.array([30.0, -12.0])
        warp = fit_bbs(src, src @ affine.T + offset, DOMAIN, smoothing_lambda=1e-4)
        probes = rng.uniform([40, 40], [600, 440], size=(150, 2))
        expected = probes @ affine.T + offset
        assert np.abs(eval_bbs(warp, probes) - expected).max() < 1e-3

    def test_interpolation_limit(self):
        # well-conditioned: 30 spread-out points, smooth displacement field,
        # enough control points (8x8) to interpolate them
        local = np.random.default_rng(7)
        src = grid_points(6, 5) + local.uniform(-15, 15, size=(30, 2))
        src = np.clip(src, [0, 0], [640, 480])
        tgt = src + 3.0 * np.stack(
            [np.sin(np.pi * src[:, 0] / 640.0), np.cos(np.pi * src[:, 1] / 480.0)],
            axis=1,
        )
        warp = fit_bbs(src, tgt, DOMAIN, smoothing_lambda=1e-10)
        residual = np.abs(eval_bbs(warp, src) - tgt).max()
        assert residual < 1e-3

    def test_smoothing_monotonicity(self, rng):
        src = rng.uniform([0, 0], [640, 480], size=(60, 2))
        tgt = src + rng.normal(scale=25.0, size=src.shape)
        energies = [
            fit_bbs(src, tgt, DOMAIN, smoothing_lambda=lam).bending_energy()
            for lam in (1e-6, 1e-4, 1e-2, 1.0)
        ]
        assert all(a >= b - 1e-9 for a, b in zip(energies, energies[1:]))

    def test_duplicates_equal_double_weight(self, rng):
        src = rng.uniform([0, 0], [640, 480], size=(20, 2))
        tgt = src + rng.normal(scale=10.0, size=src.shape)
        doubled = fit_bbs(
            np.vstack([src, src[:5]]), np.vstack([tgt, tgt[:5]]), DOMAIN
        )
        weights = np.ones(20)
        weights[:5] = 2.0
        weighted = fit_bbs(src, tgt, DOMAIN, weights=weights)
        assert np.abs(doubled.coefficients - weighted.coefficients).max() < 1e-9

    def test_singular_without_smoothing(self):
        src = np.array([[100.0, 100.0], [101.0, 100.0]])
        with pytest.raises(SingularSystem):
            fit_bbs(src, src, DOMAIN, smoothing_lambda=0.0)

    def test_rejects_mismatched_inputs(self):
        with pytest.raises(ValueError):
            fit_bbs(np.zeros((3, 2)), np.zeros((4, 2)), DOMAIN)
        with pytest.raises(ValueError):
            fit_bbs(np.zeros((3, 2)), np.zeros((3, 2)), DOMAIN, smoothing_lambda=-1.0)
        with pytest.raises(InvalidDimensions):
            fit_bbs(np.zeros((3, 2)), np.zeros((3, 2)), DOMAIN, grid=(3, 8))

    def test_deterministic(self, rng):
        src = rng.uniform([0, 0], [640, 480], size=(40, 2))
        tgt = src + rng.normal(scale=5.0, size=src.shape)
        a = fit_bbs(src, tgt, DOMAIN)
        b = fit_bbs(src, tgt, DOMAIN)
        assert np.array_equal(a.coefficients, b.coefficients)


class TestEval:
    def test_identity_probe(self, rng):
        pts = grid_points(5, 5)
        warp = fit_bbs(pts, pts, DOMAIN)
        out = eval_bbs(warp, np.array([[100.0, 200.0]]))
        np.testing.assert_allclose(out[0], [100.0, 200.0], atol=1e-6)

    def test_linearity_in_coefficients(self, rng):
        nu, nv = 8, 8
        c1 = rng.normal(size=(nu * nv, 2))
        c2 = rng.normal(size=(nu * nv, 2))
        w1 = BicubicWarp(DOMAIN, (nu, nv), c1, 0.0)
        w2 = BicubicWarp(DOMAIN, (nu, nv), c2, 0.0)
        w12 = BicubicWarp(DOMAIN, (nu, nv), c1 + c2, 0.0)
        w0 = BicubicWarp(DOMAIN, (nu, nv), np.zeros((nu * nv, 2)), 0.0)
        probes = rng.uniform([0, 0], [640, 480], size=(50, 2))
        lhs = eval_bbs(w12, probes)
        rhs = eval_bbs(w1, probes) + eval_bbs(w2, probes) - eval_bbs(w0, probes)
        assert np.abs(lhs - rhs).max() < 1e-9

    def test_matches_cox_de_boor_oracle(self, rng):
        for nu, nv in ((8, 8), (4, 5)):
            coeffs = rng.normal(scale=40.0, size=(nu * nv, 2))
            warp = BicubicWarp(DOMAIN, (nu, nv), coeffs, 0.0)
            probes = rng.uniform([1, 1], [639, 479], size=(40, 2))
            got = eval_bbs(warp, probes)
            want = np.array([eval_oracle(warp, p) for p in probes])
            assert np.abs(got - want).max() < 1e-9

    def test_one_hot_basis_peak(self, rng):
        nu = nv = 8
        coeffs = np.zeros((nu * nv, 2))
        coeffs[3 * nv + 4] = [1.0, 2.0]
        warp = BicubicWarp(DOMAIN, (nu, nv), coeffs, 0.0)
        probes = rng.uniform([0.5, 0.5], [639.5, 479.5], size=(60, 2))
        want = np.array([eval_oracle(warp, p) for p in probes])
        assert np.abs(eval_bbs(warp, probes) - want).max() < 1e-9

    def test_out_of_domain_clamps(self):
        pts = grid_points(4, 4)
        warp = fit_bbs(pts, pts, DOMAIN)
        out = eval_bbs(warp, np.array([[-50.0, 240.0], [900.0, 240.0]]))
        np.testing.assert_allclose(out[0], eval_bbs(warp, np.array([[0.0, 240.0]]))[0])
        np.testing.assert_allclose(out[1], eval_bbs(warp, np.array([[640.0, 240.0]]))[0])

    def test_permutation_invariance(self, rng):
        pts = grid_points(4, 4)
        warp = fit_bbs(pts, pts + rng.normal(size=pts.shape), DOMAIN)
        probes = rng.uniform([0, 0], [640, 480], size=(30, 2))
        perm = rng.permutation(30)
        assert np.array_equal(eval_bbs(warp, probes)[perm], eval_bbs(warp, probes[perm]))


class TestTransferAndSerialization:
    def test_transfer_identity_and_translation(self, rng):
        mesh3d = build_grid_mesh3d(4, 6, 1.0)
        mesh = Mesh2D(mesh3d.vertices[:, :2] * 50.0 + [320.0, 240.0], mesh3d.triangles)
        pts = grid_points(5, 5)
        ident = fit_bbs(pts, pts, DOMAIN)
        out = transfer_mesh(ident, mesh)
        assert np.abs(out.vertices - mesh.vertices).max() < 1e-6
        shifted = fit_bbs(pts, pts + [11.0, 4.0], DOMAIN)
        out = transfer_mesh(shifted, mesh)
        assert np.abs(out.vertices - (mesh.vertices + [11.0, 4.0])).max() < 1e-3
        assert np.array_equal(out.triangles, mesh.triangles)

    def test_ground_truth_matches_transfer_deformed_mesh(self):
        # a warp fitted on fully correct synthetic matches must land the
        # transferred mesh on the projected deformed mesh
        from sftrack.synth import ScenarioConfig, generate_frame

        cfg = ScenarioConfig(n_matches=1000, correct_rate=1.0, trials=1, seed=4)
        frame = generate_frame(cfg, 0)
        domain = Rect.around(frame.flat_mesh.vertices)
        warp = fit_bbs(
            frame.matches.template_points, frame.matches.image_points, domain
        )
        transferred = transfer_mesh(warp, frame.flat_mesh)
        gt_px = frame.intrinsics.project(frame.deformed_mesh.vertices)
        rms = float(np.sqrt(((transferred.vertices - gt_px) ** 2).sum(axis=1).mean()))
        assert rms <= 2.0

    def test_serialization_round_trip_exact(self, tmp_path, rng):
        src = rng.uniform([0, 0], [640, 480], size=(30, 2))
        warp = fit_bbs(src, src + rng.normal(scale=9.0, size=src.shape), DOMAIN)
        path = tmp_path / "warp.json"
        save_warp(warp, path)
        loaded = load_warp(path)
        assert np.array_equal(loaded.coefficients, warp.coefficients)
        assert loaded.domain == warp.domain
        assert loaded.grid == warp.grid
        assert loaded.smoothing_lambda == warp.smoothing_lambda

    def test_grid_minimum_enforced(self):
        with pytest.raises(InvalidDimensions):
            BicubicWarp(DOMAIN, (3, 8), np.zeros((24, 2)), 0.0)

    def test_rect_positive_area(self):
        with pytest.raises(InvalidDimensions):
            Rect(0, 0, 0, 10)


def test_bending_matrix_annihilates_affine():
    nu = nv = 6
    b = bending_matrix(nu, nv)
    # control values sampled from an affine function yield zero bending energy
    greville_u = np.array([(-1 + i) / (nu - 3) for i in range(nu)])
    greville_v = np.array([(-1 + j) / (nv - 3) for j in range(nv)])
    # uniform cubic B-splines reproduce affine functions from affine controls
    c = (2.0 * greville_u[:, None] - 3.0 * greville_v[None, :] + 0.5).ravel()
    assert abs(c @ b @ c) < 1e-9
