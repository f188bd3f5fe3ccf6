"""Codec round trips and malformed-input rejection."""

import json

import numpy as np
import numpy.testing as npt
import pytest

from convexscene import formats
from convexscene.camera import CameraIntrinsics, RigidTransform
from convexscene.errors import ValidationError
from convexscene.geometry import Scene, axis_box_primitive


class TestPfm:
    def test_round_trip_1ch(self, tmp_path):
        rng = np.random.default_rng(0)
        data = rng.random((7, 5)).astype(np.float32)
        path = tmp_path / "x.pfm"
        formats.write_pfm(path, data)
        back = formats.read_pfm(path)
        npt.assert_array_equal(back, data)

    def test_round_trip_3ch(self, tmp_path):
        rng = np.random.default_rng(1)
        data = rng.standard_normal((4, 6, 3)).astype(np.float32)
        path = tmp_path / "x.pfm"
        formats.write_pfm(path, data)
        npt.assert_array_equal(formats.read_pfm(path), data)

    def test_round_trip_2ch(self, tmp_path):
        rng = np.random.default_rng(2)
        data = rng.random((3, 3, 2)).astype(np.float32)
        path = tmp_path / "x.pfm"
        formats.write_pfm(path, data)
        npt.assert_array_equal(formats.read_pfm(path), data)

    def test_rejects_nan(self, tmp_path):
        with pytest.raises(ValidationError):
            formats.write_pfm(tmp_path / "x.pfm", np.array([[np.nan]]))

    def test_rejects_truncated(self, tmp_path):
        path = tmp_path / "x.pfm"
        formats.write_pfm(path, np.ones((4, 4), dtype=np.float32))
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(ValidationError):
            formats.read_pfm(path)

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "x.pfm"
        path.write_bytes(b"P6\n2 2\n-1.0\n" + b"\0" * 16)
        with pytest.raises(ValidationError):
            formats.read_pfm(path)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "x.pfm"
        formats.write_pfm(path, np.zeros((2, 3), dtype=np.float32))
        head = path.read_bytes()[:32]
        assert head.startswith(b"Pf\n3 2\n-1.0\n")


class TestCvxm:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        ids = rng.integers(-1, 7, size=(9, 4)).astype(np.int32)
        path = tmp_path / "m.cvxm"
        formats.write_cvxm(path, ids)
        npt.assert_array_equal(formats.read_cvxm(path), ids)

    def test_header(self, tmp_path):
        path = tmp_path / "m.cvxm"
        formats.write_cvxm(path, np.zeros((2, 3), dtype=np.int32))
        raw = path.read_bytes()
        assert raw[:4] == b"CVXM"
        assert raw[4:8] == (3).to_bytes(2, "little") + (2).to_bytes(2, "little")
        assert len(raw) == 8 + 4 * 6

    def test_rejects_payload_mismatch(self, tmp_path):
        path = tmp_path / "m.cvxm"
        formats.write_cvxm(path, np.zeros((2, 3), dtype=np.int32))
        raw = path.read_bytes()
        path.write_bytes(raw + b"\0\0\0\0")
        with pytest.raises(ValidationError):
            formats.read_cvxm(path)


class TestPng:
    def test_quantized_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        img = (rng.integers(0, 256, size=(3, 8, 8)) / 255.0).astype(np.float32)
        path = tmp_path / "i.png"
        formats.write_png(path, img)
        back = formats.read_png(path)
        npt.assert_array_equal(back, img)  # /255-quantized values survive exactly


class TestSceneJson:
    def scene(self):
        cam = CameraIntrinsics(100.0, 120.0, 32.0, 24.0, 64, 48)
        prims = (axis_box_primitive([-1, -1, 1], [1, 1, 2]),
                 axis_box_primitive([0.2, 0.1, 2.5], [0.8, 0.9, 3.1]))
        pose = RigidTransform(np.eye(3), np.array([0.1, -0.2, 0.0]))
        return Scene(prims, cam, pose, (True, False))

    def test_stable_round_trip(self, tmp_path):
        path_a = tmp_path / "a.json"
        path_b = tmp_path / "b.json"
        scene = self.scene()
        formats.write_scene_json(path_a, scene)
        loaded = formats.read_scene_json(path_a)
        formats.write_scene_json(path_b, loaded)
        assert path_a.read_bytes() == path_b.read_bytes()
        assert loaded.live == (True, False)
        assert loaded.camera == scene.camera

    def test_9_significant_digits(self, tmp_path):
        path = tmp_path / "a.json"
        formats.write_scene_json(path, self.scene())
        doc = json.loads(path.read_text())
        for prim in doc["primitives"]:
            for row in prim["planes"]:
                for v in row:
                    assert float(f"{v:.9g}") == v

    def test_non_unit_normal_normalized_on_load(self, tmp_path):
        path = tmp_path / "a.json"
        formats.write_scene_json(path, self.scene())
        doc = json.loads(path.read_text())
        doc["primitives"][0]["planes"][0][0] *= 3.0
        doc["primitives"][0]["planes"][0][1] *= 3.0
        doc["primitives"][0]["planes"][0][2] *= 3.0
        doc["primitives"][0]["planes"][0][3] *= 3.0
        path.write_text(json.dumps(doc))
        loaded = formats.read_scene_json(path)
        n = loaded.primitives[0].planes[0].normal
        assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-9)

    def test_rejects_bad_version(self, tmp_path):
        path = tmp_path / "a.json"
        formats.write_scene_json(path, self.scene())
        doc = json.loads(path.read_text())
        doc["version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ValidationError):
            formats.read_scene_json(path)

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "a.json"
        path.write_text("{not json")
        with pytest.raises(ValidationError):
            formats.read_scene_json(path)


class TestEditScript:
    def test_bare_list(self, tmp_path):
        path = tmp_path / "e.json"
        path.write_text('[{"primitive_id": 0, "translate": [1, 0, 0]}]')
        records, delta = formats.read_edit_script(path)
        assert delta is None
        assert records[0]["primitive_id"] == 0

    def test_object_with_camera_delta(self, tmp_path):
        path = tmp_path / "e.json"
        path.write_text(json.dumps({
            "transforms": [{"primitive_id": 1, "scale": 2.0}],
            "camera_delta": {"R": list(np.eye(3).ravel()), "t": [0, 0, 0.5]},
        }))
        records, delta = formats.read_edit_script(path)
        assert records[0]["scale"] == 2.0
        npt.assert_allclose(delta.translation, [0, 0, 0.5])

    def test_missing_primitive_id_rejected(self, tmp_path):
        path = tmp_path / "e.json"
        path.write_text('[{"translate": [1, 0, 0]}]')
        with pytest.raises(ValidationError):
            formats.read_edit_script(path)


def test_camera_json_round_trip(tmp_path):
    cam = CameraIntrinsics(100.5, 101.25, 32.0, 24.0, 64, 48)
    path = tmp_path / "cam.json"
    formats.write_camera_json(path, cam)
    assert formats.read_camera_json(path) == cam
