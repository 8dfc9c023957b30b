import unittest
import warnings

import numpy as np
from numpy.testing import assert_allclose

from simloop.guidance_lib.dynamics_init import ObjectInitState
from simloop.guidance_lib.exceptions import DomainError, SimloopWarning
from simloop.guidance_lib.material_map import MaterialParams
from simloop.guidance_lib.sim_domain import (
    AxisAlignedBox,
    SimDomain,
    bound_motion,
    build_domain,
    camera_to_sim,
    clamp_to_domain,
    from_sim,
    require_inside,
    rescale_material,
    to_sim,
    velocity_to_sim,
)
from simloop.tests import fixtures


class TestBuildDomain(unittest.TestCase):

    def setUp(self):
        self.unit = AxisAlignedBox(np.zeros(3), np.ones(3))

    def test_unit_box_fills_the_cube(self):
        domain = build_domain(self.unit, AxisAlignedBox.empty(), 1.0, 64)
        self.assertAlmostEqual(domain.scale, 2.0)
        assert_allclose(to_sim(domain, [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]), [[0, 0, 0], [2, 2, 2]], atol=1e-12)
        self.assertAlmostEqual(domain.dx, 2.0 / 64)

    def test_offset_coefficient_shrinks_scale(self):
        domain = build_domain(self.unit, AxisAlignedBox.empty(), 1.25, 64)
        self.assertAlmostEqual(domain.scale, 1.6)
        assert_allclose(to_sim(domain, [0.5, 0.5, 0.5]), [[1.0, 1.0, 1.0]])

    def test_union_of_both_boxes(self):
        bg = AxisAlignedBox(np.array([-3.0, 0.0, 0.0]), np.array([-2.0, 1.0, 1.0]))
        domain = build_domain(self.unit, bg, 1.0, 64)
        self.assertAlmostEqual(domain.scale, 0.5)

    def test_rejects_small_offset_coefficient(self):
        with self.assertRaisesRegex(DomainError, "C ≥ 1"):
            build_domain(self.unit, AxisAlignedBox.empty(), 0.5, 64)

    def test_rejects_empty_and_flat_scenes(self):
        with self.assertRaisesRegex(DomainError, "degenerate"):
            build_domain(AxisAlignedBox.empty(), AxisAlignedBox.empty(), 1.0, 64)
        point = AxisAlignedBox(np.ones(3), np.ones(3))
        with self.assertRaisesRegex(DomainError, "zero extent"):
            build_domain(point, AxisAlignedBox.empty(), 1.0, 64)

    def test_gravity_follows_scale_and_rotation(self):
        rot = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
        domain = build_domain(self.unit, AxisAlignedBox.empty(), 1.0, 64, gravity=(0.0, -9.8, 0.0), rotation=rot)
        assert_allclose(domain.gravity_sim, [0.0, 0.0, -19.6])
        back = from_sim(domain, to_sim(domain, [[0.3, 0.2, 0.9]]))
        assert_allclose(back, [[0.3, 0.2, 0.9]], atol=1e-12)

    def test_velocity_and_stiffness_units(self):
        domain = build_domain(self.unit, AxisAlignedBox.empty(), 1.0, 64)
        assert_allclose(velocity_to_sim(domain, [[1.0, -2.0, 0.5]]), [[2.0, -4.0, 1.0]])
        params = MaterialParams(density=1000.0, youngs=1e6, poisson=0.3, friction=0.2, damping=1.0)
        scaled = rescale_material(params, domain.scale)
        self.assertAlmostEqual(scaled.youngs, 4e6)
        self.assertEqual(scaled.density, 1000.0)

    def test_domain_dict(self):
        domain = build_domain(self.unit, AxisAlignedBox.empty(), 1.5, 32).with_dt(1e-4)
        restored = SimDomain.from_dict(domain.to_dict())
        self.assertEqual(restored.grid_resolution, 32)
        self.assertEqual(restored.dt, 1e-4)
        assert_allclose(restored.translation, domain.translation)


class TestCameraConjugation(unittest.TestCase):

    def test_pixels_are_unchanged(self):
        """Conjugating a camera leaves projections fixed and scales depth by S."""
        bg = AxisAlignedBox(np.array([-1.0, 0.0, -0.5]), np.array([1.0, 1.5, 0.6]))
        domain = build_domain(bg, AxisAlignedBox.empty(), 1.5, 64)
        cam = fixtures.make_camera()
        sim_cam = camera_to_sim(domain, cam)
        points = np.array([[0.1, 0.4, 0.0], [-0.5, 0.1, -0.4], [0.3, 1.2, 0.2]])
        uv, depth = cam.project(points)
        uv_sim, depth_sim = sim_cam.project(to_sim(domain, points))
        assert_allclose(uv_sim, uv, atol=1e-9)
        assert_allclose(depth_sim, domain.scale * depth, rtol=1e-12)


class TestMotionBounds(unittest.TestCase):

    def test_ballistic_apex_is_included(self):
        state = ObjectInitState(object_id=1, position=[0.0, 0.0, 0.0], scale=1.0,
                                velocity=[1.0, 2.0, 0.0], radius=0.1)
        box = bound_motion(state, 1.0, (0.0, -9.8, 0.0))
        assert_allclose(box.hi, [1.1, 2.0 ** 2 / (2 * 9.8) + 0.1, 0.1])
        assert_allclose(box.lo, [-0.1, 2.0 - 4.9 - 0.1, -0.1])

    def test_horizon_must_be_positive(self):
        state = ObjectInitState(object_id=1, position=[0.0, 0.0, 0.0], scale=1.0)
        with self.assertRaises(DomainError):
            bound_motion(state, 0.0, (0.0, -9.8, 0.0))


class TestContainment(unittest.TestCase):

    def test_require_inside_counts_outliers(self):
        points = np.array([[1.0, 1.0, 1.0], [2.5, 1.0, 1.0], [-0.1, 0.0, 0.0]])
        with self.assertRaisesRegex(DomainError, "2 particles"):
            require_inside(points, "particles")

    def test_clamp_warns_and_clips(self):
        points = np.array([[1.0, 1.0, 1.0], [2.5, 1.0, 1.0]])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            clamped, count = clamp_to_domain(points, "collider points")
        self.assertEqual(count, 1)
        assert_allclose(clamped[1], [2.0, 1.0, 1.0])
        self.assertTrue(any(issubclass(w.category, SimloopWarning) for w in caught))


if __name__ == '__main__':
    unittest.main()
