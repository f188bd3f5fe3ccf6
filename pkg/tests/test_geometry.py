"""Tests for the convex primitive core: plane distances, smooth SDF,
indicators, unions, and their structural invariants."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from convexscene.camera import CameraIntrinsics
from convexscene.errors import ValidationError
from convexscene.geometry import (ConvexPrimitive, HalfPlane, Scene,
                                  axis_box_primitive, icosphere_directions,
                                  indicator, is_bounded, plane_distance,
                                  scene_sdf, smooth_sdf, union_indicator)

CAM = CameraIntrinsics.centered(100.0, 100.0, 64, 64)


def unit_cube_duplicated(delta=10.0, sigma=75.0):
    """Unit cube (half-extent 0.5) as 6 axis planes duplicated to 12 faces."""
    normals, offsets = [], []
    for axis in range(3):
        for sign in (1.0, -1.0):
            n = np.zeros(3)
            n[axis] = sign
            normals.append(n)
            offsets.append(-0.5)
    normals = normals * 2
    offsets = offsets * 2
    return ConvexPrimitive.from_arrays(np.stack(normals), np.array(offsets),
                                       delta, sigma)


def dominated_slab(top_offset=0.0, delta=10.0, sigma=75.0):
    """Box whose +z plane carries top_offset while every other face sits 50
    units away, so the +z plane dominates the LogSumExp near the origin."""
    normals, offsets = [], []
    for axis in range(3):
        for sign in (1.0, -1.0):
            n = np.zeros(3)
            n[axis] = sign
            normals.append(n)
            offsets.append(top_offset if (axis == 2 and sign > 0) else -50.0)
    return ConvexPrimitive.from_arrays(np.stack(normals), np.array(offsets),
                                       delta, sigma)


class TestHalfPlane:
    def test_normalizes_input(self):
        p = HalfPlane((0.0, 0.0, 2.0), 1.0)
        npt.assert_allclose(p.normal, [0, 0, 1])
        assert p.offset == 0.5  # offset rescales with the normal

    def test_rejects_zero_normal(self):
        with pytest.raises(ValidationError):
            HalfPlane((0.0, 0.0, 0.0), 1.0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            HalfPlane((0.0, 0.0, 1.0), math.inf)


class TestPlaneDistance:
    def test_above_plane(self):
        assert plane_distance(HalfPlane((0, 0, 1), 0.0), (0, 0, 0.2)) == pytest.approx(0.2)

    def test_on_plane(self):
        assert plane_distance(HalfPlane((0, 0, 1), 0.0), (0, 0, 0.0)) == 0.0

    def test_inside_halfspace(self):
        assert plane_distance(HalfPlane((1, 0, 0), -0.5), (0.3, 9, 9)) == pytest.approx(-0.2)


class TestSmoothSdf:
    def test_single_plane_equals_scaled_distance(self):
        prim = dominated_slab(top_offset=0.0, delta=10.0)
        # the other planes sit ~50 units inside, so the top plane dominates
        assert smooth_sdf(prim, (0, 0, 0.2)) == pytest.approx(2.0, abs=1e-6)

    def test_duplicated_cube_at_origin(self):
        prim = unit_cube_duplicated(delta=10.0)
        # 12 identical terms: log(12 * exp(-5)) = log 12 - 5
        assert smooth_sdf(prim, (0, 0, 0)) == pytest.approx(math.log(12) - 5, abs=1e-12)

    def test_logsumexp_bounds(self):
        rng = np.random.default_rng(7)
        prim = axis_box_primitive([-0.4, -0.3, 1.0], [0.4, 0.5, 2.0], delta=10.0)
        normals = prim.normals()
        offsets = prim.offsets()
        for _ in range(200):
            x = rng.uniform(-2, 3, size=3)
            m = float((prim.delta * (normals @ x + offsets)).max())
            phi = smooth_sdf(prim, x)
            assert m <= phi <= m + math.log(prim.face_count) + 1e-9

    def test_no_overflow_at_extreme_arguments(self):
        prim = unit_cube_duplicated(delta=1000.0)
        val = smooth_sdf(prim, (0, 0, 1000.0))  # delta*H ~ 1e6 without the max trick
        assert math.isfinite(val)


class TestIndicator:
    def test_half_at_surface(self):
        # phi = 0 exactly when the dominating plane passes through the query
        prim = dominated_slab(top_offset=0.0)
        assert indicator(prim, (0, 0, 0)) == pytest.approx(0.5, abs=1e-9)
        # a real cube face sees its neighbours, pushing the value below 0.5
        assert indicator(unit_cube_duplicated(), (0, 0, 0.5)) < 0.5

    def test_saturates_outside(self):
        prim = dominated_slab(top_offset=-1.0, delta=10.0, sigma=75.0)
        # smooth_sdf ~ delta * 1 = 10 at z=2 -> sigmoid(-750)
        assert indicator(prim, (0, 0, 2.0)) < 1e-30

    def test_derived_sigmoid_value(self):
        # sigma=75, phi=-0.01 -> sigmoid(0.75)
        expected = 1.0 / (1.0 + math.exp(-0.75))
        prim = dominated_slab(top_offset=0.0, delta=1.0, sigma=75.0)
        val = indicator(prim, (0, 0, -0.01))
        assert val == pytest.approx(expected, abs=1e-6)

    def test_strictly_decreasing_in_phi(self):
        # strict monotonicity holds wherever the sigmoid has not saturated
        prim = unit_cube_duplicated()
        zs = np.linspace(0.3, 0.7, 40)
        pairs = [(smooth_sdf(prim, (0, 0, z)), indicator(prim, (0, 0, z)))
                 for z in zs]
        pairs = [(p, v) for p, v in pairs if abs(p * prim.sigma) < 30]
        assert len(pairs) > 5
        pairs.sort()
        vals = [v for _, v in pairs]
        assert np.all(np.diff(vals) < 0)


class TestUnionIndicator:
    def scene_two(self):
        a = axis_box_primitive([-1.0, -1.0, 1.0], [0.0, 1.0, 2.0])
        b = axis_box_primitive([0.5, -1.0, 1.0], [1.5, 1.0, 2.0])
        return Scene((a, b), CAM)

    def test_inside_dominates(self):
        scene = self.scene_two()
        assert union_indicator(scene, (-0.5, 0.0, 1.5)) > 0.999

    def test_far_outside(self):
        scene = self.scene_two()
        assert union_indicator(scene, (0, 0, 15.0)) < 1e-6

    def test_max_semantics(self):
        scene = self.scene_two()
        x = (0.7, 0.0, 1.5)
        expected = max(indicator(scene.primitives[0], x),
                       indicator(scene.primitives[1], x))
        assert union_indicator(scene, x) == expected

    def test_never_decreases_when_adding_primitives(self):
        scene = self.scene_two()
        bigger = Scene(scene.primitives + (axis_box_primitive([-2, -2, 3], [2, 2, 4]),), CAM)
        rng = np.random.default_rng(3)
        for _ in range(50):
            x = rng.uniform(-2, 2, size=3) + np.array([0, 0, 2.0])
            assert union_indicator(bigger, x) >= union_indicator(scene, x) - 1e-15

    def test_all_tombstoned_errors(self):
        scene = self.scene_two()
        dead = Scene(scene.primitives, CAM, live=(False, False))
        with pytest.raises(ValidationError):
            union_indicator(dead, (0, 0, 0))


class TestSceneSdf:
    def test_single_primitive(self):
        prim = axis_box_primitive([-1, -1, 1], [1, 1, 2])
        scene = Scene((prim,), CAM)
        val, pid = scene_sdf(scene, (0, 0, 0))
        assert pid == 0
        assert val == pytest.approx(smooth_sdf(prim, (0, 0, 0)) / prim.delta)

    def test_argmin_picks_nearer_copy(self):
        a = axis_box_primitive([-3, -1, 1], [-1, 1, 2])
        b = axis_box_primitive([1, -1, 1], [3, 1, 2])
        scene = Scene((a, b), CAM)
        assert scene_sdf(scene, (2.0, 0, 1.5))[1] == 1
        assert scene_sdf(scene, (-2.0, 0, 1.5))[1] == 0

    def test_tie_breaks_to_lower_id(self):
        prim = axis_box_primitive([-1, -1, 1], [1, 1, 2])
        scene = Scene((prim, prim), CAM)
        assert scene_sdf(scene, (0, 0, 1.5))[1] == 0

    def test_permutation_equivariance(self):
        a = axis_box_primitive([-3, -1, 1], [-1, 1, 2])
        b = axis_box_primitive([1, -1, 1], [3, 1, 2])
        fwd = Scene((a, b), CAM)
        rev = Scene((b, a), CAM)
        rng = np.random.default_rng(11)
        for _ in range(40):
            x = rng.uniform(-4, 4, size=3) + np.array([0, 0, 1.5])
            v1, i1 = scene_sdf(fwd, x)
            v2, i2 = scene_sdf(rev, x)
            assert v1 == pytest.approx(v2, rel=1e-12)
            assert i2 == {0: 1, 1: 0}[i1]

    def test_skips_tombstoned(self):
        a = axis_box_primitive([-3, -1, 1], [-1, 1, 2])
        b = axis_box_primitive([1, -1, 1], [3, 1, 2])
        scene = Scene((a, b), CAM, live=(False, True))
        _, pid = scene_sdf(scene, (-2.0, 0, 1.5))
        assert pid == 1


class TestConvexity:
    def test_segment_stays_inside(self):
        prim = axis_box_primitive([-0.8, -0.5, 1.0], [0.3, 0.7, 2.2])
        normals = prim.normals()
        offsets = prim.offsets()
        rng = np.random.default_rng(5)
        inside = []
        while len(inside) < 20:
            x = rng.uniform([-0.8, -0.5, 1.0], [0.3, 0.7, 2.2])
            if np.all(normals @ x + offsets <= 0):
                inside.append(x)
        for _ in range(100):
            a, b = rng.integers(0, len(inside), size=2)
            lam = rng.random()
            x = lam * inside[a] + (1 - lam) * inside[b]
            assert np.all(normals @ x + offsets <= 1e-12)


class TestBoundedness:
    def test_icosphere_count(self):
        assert icosphere_directions(3).shape == (642, 3)

    def test_open_wedge_rejected(self):
        normals = np.array([[1, 0, 0.0], [0, 1, 0.0], [0, 0, 1.0],
                            [0.5, 0.5, 0.70710678]])
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        assert not is_bounded(normals)
        with pytest.raises(ValidationError):
            ConvexPrimitive.from_arrays(normals, np.zeros(4))

    def test_box_accepted(self):
        prim = axis_box_primitive([-1, -1, -1], [1, 1, 1])
        assert is_bounded(prim.normals())

    def test_minimum_face_count(self):
        with pytest.raises(ValidationError):
            ConvexPrimitive.from_arrays(np.array([[1, 0, 0.0], [-1, 0, 0.0],
                                                  [0, 1, 0.0]]), np.zeros(3))


class TestSceneInvariants:
    def test_needs_a_primitive(self):
        with pytest.raises(ValidationError):
            Scene((), CAM)

    def test_live_flag_length_checked(self):
        prim = axis_box_primitive([-1, -1, 1], [1, 1, 2])
        with pytest.raises(ValidationError):
            Scene((prim,), CAM, live=(True, False))
