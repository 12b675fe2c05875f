import numpy as np
import pytest

from sftrack.camera import DEFAULT_INTRINSICS, load_intrinsics, save_intrinsics
from sftrack.errors import InvalidDimensions, ParseError, TopologyMismatch
from sftrack.meshes import save_mesh_json, save_mesh_obj
from sftrack.template import (
    Template,
    build_template,
    import_template,
    load_template,
    save_template,
)


def a4_template():
    return build_template(0.297, 0.210, 6, 10, (1188, 840), DEFAULT_INTRINSICS)


class TestBuild:
    def test_a4_pixel_scale(self):
        tpl = a4_template()
        xs = np.unique(np.round(tpl.texture_mesh.vertices[:, 0], 9))
        ys = np.unique(np.round(tpl.texture_mesh.vertices[:, 1], 9))
        # 4 px/mm uniformly: one cell is 33 mm -> 132 px and 42 mm -> 168 px
        assert xs[1] - xs[0] == pytest.approx(132.0)
        assert ys[1] - ys[0] == pytest.approx(168.0)
        phys = np.unique(np.round(np.diff(np.unique(tpl.rest_mesh.vertices[:, 0])), 12))
        assert phys[0] == pytest.approx(0.033)

    def test_initial_pose_fronto_parallel(self):
        tpl = a4_template()
        np.testing.assert_allclose(tpl.initial_pose.vertices[:, 2], 1.0)
        np.testing.assert_allclose(
            tpl.initial_pose.vertices[:, :2], tpl.rest_mesh.vertices[:, :2]
        )

    def test_rejects_degenerate_grid(self):
        with pytest.raises(InvalidDimensions):
            build_template(0.3, 0.2, 1, 10, (100, 100), DEFAULT_INTRINSICS)
        with pytest.raises(InvalidDimensions):
            build_template(0.0, 0.2, 6, 10, (100, 100), DEFAULT_INTRINSICS)
        with pytest.raises(InvalidDimensions):
            build_template(0.3, 0.2, 6, 10, (0, 100), DEFAULT_INTRINSICS)

    def test_save_load_round_trip_bit_exact(self, tmp_path):
        tpl = a4_template()
        path = tmp_path / "template.json"
        save_template(tpl, path)
        loaded = load_template(path)
        assert np.array_equal(loaded.rest_mesh.vertices, tpl.rest_mesh.vertices)
        assert np.array_equal(loaded.texture_mesh.vertices, tpl.texture_mesh.vertices)
        assert np.array_equal(loaded.initial_pose.vertices, tpl.initial_pose.vertices)
        assert loaded.texture_size == tpl.texture_size
        assert loaded.intrinsics == tpl.intrinsics
        # second hop is byte-identical
        path2 = tmp_path / "template2.json"
        save_template(loaded, path2)
        assert path.read_text() == path2.read_text()


class TestImport:
    def test_round_trip_through_files(self, tmp_path):
        tpl = a4_template()
        save_mesh_json(tpl.rest_mesh, tmp_path / "rest.json")
        save_mesh_json(tpl.texture_mesh, tmp_path / "tex.json")
        save_intrinsics(tpl.intrinsics, tmp_path / "intr.json")
        loaded = import_template(
            tmp_path / "rest.json", tmp_path / "tex.json", tmp_path / "intr.json",
            texture_size=tpl.texture_size,
        )
        assert np.array_equal(loaded.rest_mesh.vertices, tpl.rest_mesh.vertices)
        assert loaded.texture_size == tpl.texture_size

    def test_obj_plus_json(self, tmp_path):
        tpl = a4_template()
        save_mesh_obj(tpl.rest_mesh, tmp_path / "rest.obj")
        save_mesh_json(tpl.texture_mesh, tmp_path / "tex.json")
        save_intrinsics(tpl.intrinsics, tmp_path / "intr.json")
        loaded = import_template(
            tmp_path / "rest.obj", tmp_path / "tex.json", tmp_path / "intr.json"
        )
        assert np.array_equal(loaded.rest_mesh.triangles, tpl.rest_mesh.triangles)

    def test_topology_mismatch(self, tmp_path):
        tpl = a4_template()
        other = build_template(0.3, 0.2, 5, 8, (800, 500), DEFAULT_INTRINSICS)
        save_mesh_json(tpl.rest_mesh, tmp_path / "rest.json")
        save_mesh_json(other.texture_mesh, tmp_path / "tex.json")
        save_intrinsics(tpl.intrinsics, tmp_path / "intr.json")
        with pytest.raises(TopologyMismatch):
            import_template(tmp_path / "rest.json", tmp_path / "tex.json", tmp_path / "intr.json")

    def test_wrong_dimensionality(self, tmp_path):
        tpl = a4_template()
        save_mesh_json(tpl.texture_mesh, tmp_path / "tex.json")
        save_intrinsics(tpl.intrinsics, tmp_path / "intr.json")
        with pytest.raises(ParseError):
            import_template(tmp_path / "tex.json", tmp_path / "tex.json", tmp_path / "intr.json")

    def test_intrinsics_round_trip(self, tmp_path):
        save_intrinsics(DEFAULT_INTRINSICS, tmp_path / "i.json")
        assert load_intrinsics(tmp_path / "i.json") == DEFAULT_INTRINSICS


class TestInvariants:
    def test_texture_mesh_must_fit_rectangle(self):
        tpl = a4_template()
        with pytest.raises(InvalidDimensions):
            Template(
                tpl.rest_mesh,
                tpl.texture_mesh.with_vertices(tpl.texture_mesh.vertices * 2.0),
                tpl.texture_size,
                tpl.intrinsics,
                tpl.initial_pose,
            )

    def test_topology_checked(self):
        tpl = a4_template()
        other = build_template(0.3, 0.2, 5, 8, (800, 500), DEFAULT_INTRINSICS)
        with pytest.raises(TopologyMismatch):
            Template(
                other.rest_mesh, tpl.texture_mesh, tpl.texture_size,
                tpl.intrinsics, tpl.initial_pose,
            )
