import unittest
import os
import math
import shutil
import tempfile

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from simloop.guidance_lib.exceptions import FlowFormatError, FlowShapeError
from simloop.guidance_lib.mpm_sim import ParticleSnapshot, SimTrajectory
from simloop.guidance_lib.render_guidance import (
    UNKNOWN_FLOW,
    FlowField,
    compute_correspondences,
    correspondences_to_flow,
    default_splat_radius,
    densify_sparse,
    flow_magnitude_stats,
    fuse_flow,
    load_template_flow,
    render_frame,
    splat,
    write_flow,
)
from simloop.tests import fixtures


def _plane(object_id=1, z=0.0, step=0.02, half=0.2):
    """A square grid of particles facing the fixture camera."""
    ticks = np.arange(-half, half + step / 2, step)
    xs, ys = np.meshgrid(ticks, ticks + 0.5)
    positions = np.column_stack([xs.ravel(), ys.ravel(), np.full(xs.size, z)])
    ids = (np.uint64(object_id) << np.uint64(32)) | np.arange(len(positions), dtype=np.uint64)
    return positions, ids


def _trajectory(frames, ids, object_ids, colors=None):
    colors = np.full((len(ids), 3), 0.5) if colors is None else colors
    snaps = [ParticleSnapshot(particle_id=ids, position=p, velocity=np.zeros_like(p), color=colors,
                              object_id=object_ids) for p in frames]
    return SimTrajectory(snapshots=snaps, times=np.arange(len(frames)) / 25.0, fps=25.0)


def _translated_scene(delta, with_back_layer=True):
    front, front_ids = _plane(1)
    positions, ids, objects = [front], [front_ids], [np.full(len(front), 1, dtype=np.int32)]
    if with_back_layer:
        back, back_ids = _plane(2, z=-0.1, half=0.1)
        positions.append(back)
        ids.append(back_ids)
        objects.append(np.full(len(back), 2, dtype=np.int32))
    p1 = np.concatenate(positions)
    ids = np.concatenate(ids)
    objects = np.concatenate(objects)
    shift = np.where(objects[:, None] == 1, np.asarray(delta), 0.0)
    return _trajectory([p1, p1 + shift], ids, objects)


class TestSplat(unittest.TestCase):

    def setUp(self):
        self.camera = fixtures.make_camera()

    def test_nearer_particle_wins(self):
        positions = np.array([[0.0, 0.5, 0.0], [0.0, 0.5, 0.3]])
        colors = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        ids = np.array([1, 2], dtype=np.uint64)
        out = splat(positions, colors, np.array([1, 2]), ids, self.camera, splat_radius=0)
        self.assertEqual(out.mask[32, 32], 2)
        assert_array_equal(out.rgb[32, 32], [0, 0, 255])
        self.assertAlmostEqual(float(out.depth[32, 32]), 1.3, places=5)
        self.assertEqual(out.winner[32, 32], 1)
        self.assertEqual(int(np.sum(out.mask > 0)), 1)
        self.assertTrue(np.isinf(out.depth[0, 0]))

    def test_equal_depth_goes_to_lower_id(self):
        positions = np.array([[0.0, 0.5, 0.0], [0.0, 0.5, 0.0]])
        ids = np.array([9, 4], dtype=np.uint64)
        out = splat(positions, np.full((2, 3), 0.5), np.array([1, 2]), ids, self.camera, splat_radius=1)
        self.assertEqual(out.winner[32, 32], 1)
        self.assertEqual(out.mask[32, 32], 2)

    def test_particles_behind_camera_are_skipped(self):
        positions = np.array([[0.0, 0.5, 3.0]])
        out = splat(positions, np.full((1, 3), 0.5), np.array([1]), np.array([1], dtype=np.uint64),
                    self.camera, splat_radius=2)
        self.assertFalse(np.any(out.mask))

    def test_mask_translates_with_the_cloud(self):
        """A world shift of (0.05, -0.025, 0) m moves the mask by (2, 1) pixels."""
        traj = _translated_scene((0.05, -0.025, 0.0), with_back_layer=False)
        first = render_frame(traj, 1, self.camera, 1)
        second = render_frame(traj, 2, self.camera, 1)
        assert_array_equal(second.mask, np.roll(first.mask, (1, 2), axis=(0, 1)))

    def test_default_splat_radius(self):
        traj = _translated_scene((0.0, 0.0, 0.0), with_back_layer=False)
        self.assertEqual(default_splat_radius(traj, self.camera, spacing=0.02), 1)
        self.assertEqual(default_splat_radius(traj, self.camera, spacing=0.2), 5)


class TestCorrespondences(unittest.TestCase):

    def setUp(self):
        self.camera = fixtures.make_camera()

    def test_rigid_translation_matches_projected_displacement(self):
        delta = np.array([0.05, -0.03, 0.0])
        traj = _translated_scene(delta)
        corr = compute_correspondences(traj, 2, self.camera, self.camera, splat_radius=1, tolerance=1e-3)
        front = corr.object_id == 1
        self.assertGreater(int(front.sum()), 0)
        # Projected displacement at depth 1.6 with f = 64: (2.0, 1.2) px.
        err = np.linalg.norm((corr.q_t - corr.p_ref)[front] - [2.0, 1.2], axis=1)
        self.assertGreaterEqual(np.mean(err < 0.5), 0.99)
        self.assertTrue(np.all(corr.visible_in_reference[front]))

    def test_occluded_particles_are_not_entries(self):
        traj = _translated_scene((0.0, 0.0, 0.0))
        corr = compute_correspondences(traj, 2, self.camera, self.camera, splat_radius=1, tolerance=1e-3)
        self.assertFalse(np.any(corr.object_id == 2))

    def test_entries_sorted_by_particle_id(self):
        traj = _translated_scene((0.02, 0.0, 0.0))
        corr = compute_correspondences(traj, 2, self.camera, self.camera, splat_radius=1, tolerance=1e-3)
        self.assertTrue(np.all(np.diff(corr.particle_id.astype(np.float64)) > 0))

    def test_particles_hidden_in_reference_get_nan(self):
        """The back layer is revealed in frame 2 once the front layer slides away."""
        traj = _translated_scene((0.6, 0.0, 0.0))
        corr = compute_correspondences(traj, 2, self.camera, self.camera, splat_radius=1, tolerance=1e-3)
        back = corr.object_id == 2
        self.assertGreater(int(back.sum()), 0)
        self.assertFalse(np.any(corr.visible_in_reference[back]))
        self.assertTrue(np.all(np.isnan(corr.p_ref[back])))

    def test_flow_from_translation_is_constant(self):
        traj = _translated_scene((0.05, -0.03, 0.0), with_back_layer=False)
        render_1 = render_frame(traj, 1, self.camera, 1)
        corr = compute_correspondences(traj, 1, self.camera, self.camera, splat_radius=1, tolerance=1e-3,
                                       reference_frame=2)
        flow = correspondences_to_flow(corr, render_1.mask)
        self.assertEqual((flow.source, flow.target), (1, 2))
        inside = render_1.mask > 0
        assert_allclose(flow.flow[inside], np.tile([2.0, 1.2], (int(inside.sum()), 1)), atol=1e-3)
        self.assertTrue(np.all(flow.flow[~inside] == np.float32(UNKNOWN_FLOW)))
        self.assertFalse(np.any(flow.valid[~inside]))

    def test_rotational_flow(self):
        """An in-plane spin gives flow whose magnitude grows with radius."""
        positions, ids = _plane(1, step=0.01, half=0.25)
        keep = np.linalg.norm(positions[:, :2] - [0.0, 0.5], axis=1) <= 0.25
        positions, ids = positions[keep], ids[keep]
        phi = 0.05
        center = np.array([0.0, 0.5, 0.0])
        rotated = center + (positions - center) @ fixtures.rotation_z(phi).T
        traj = _trajectory([positions, rotated], ids, np.ones(len(ids), dtype=np.int32))
        render_1 = render_frame(traj, 1, self.camera, 1)
        corr = compute_correspondences(traj, 1, self.camera, self.camera, splat_radius=1, tolerance=1e-3,
                                       reference_frame=2)
        flow = correspondences_to_flow(corr, render_1.mask).flow
        # A counter-clockwise world spin turns image +x toward image -y.
        self.assertLess(flow[32, 40, 1], 0.0)
        self.assertGreater(flow[32, 24, 1], 0.0)
        near, far = np.linalg.norm(flow[32, 36]), np.linalg.norm(flow[32, 40])
        self.assertAlmostEqual(far / near, 2.0, delta=0.2)
        self.assertAlmostEqual(far, 8 * phi, delta=0.1 * 8 * phi)


class TestDensify(unittest.TestCase):

    def setUp(self):
        xs, ys = np.meshgrid(np.arange(0, 41, 4.0), np.arange(0, 41, 4.0))
        self.samples = np.column_stack([xs.ravel(), ys.ravel()])
        qx, qy = np.meshgrid(np.arange(4, 37, 1.0) + 0.3, np.arange(4, 37, 1.0) + 0.7)
        self.queries = np.column_stack([qx.ravel(), qy.ravel()])

    def test_identity_map(self):
        values, ok = densify_sparse(self.samples, self.samples, self.queries, k=4, radius=8.0)
        self.assertTrue(np.all(ok))
        assert_allclose(values, self.queries, atol=1e-3)

    def test_affine_field_is_reproduced(self):
        A = np.array([[0.1, -0.2], [0.05, 0.3]])
        b = np.array([1.5, -2.0])
        values, ok = densify_sparse(self.samples, self.samples @ A.T + b, self.queries, k=4, radius=8.0)
        assert_allclose(values[ok], (self.queries @ A.T + b)[ok], atol=1e-3)

    def test_plain_idw_is_not_affine_exact(self):
        A = np.array([[0.5, 0.0], [0.0, 0.5]])
        values, _ = densify_sparse(self.samples, self.samples @ A.T, self.queries, k=4, radius=8.0, method="idw")
        self.assertGreater(np.max(np.abs(values - self.queries @ A.T)), 1e-3)

    def test_radius_leaves_far_pixels_empty(self):
        values, ok = densify_sparse(self.samples, self.samples, np.array([[100.0, 100.0]]), k=4, radius=8.0)
        self.assertFalse(ok[0])
        self.assertTrue(np.all(np.isnan(values[0])))

    def test_nearest_copies_a_sample(self):
        values, ok = densify_sparse(self.samples, self.samples * 2.0, np.array([[4.4, 7.9]]), method="nearest")
        assert_array_equal(values[0], [8.0, 16.0])


class TestFlowFusion(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(7)
        self.sim = FlowField(rng.normal(size=(16, 20, 2)).astype(np.float32), 1, 2)
        self.template = FlowField(rng.normal(size=(16, 20, 2)).astype(np.float32), 1, 2)

    def _oracle(self, mask):
        out = np.empty_like(self.template.flow)
        for y in range(mask.shape[0]):
            for x in range(mask.shape[1]):
                out[y, x] = self.sim.flow[y, x] if mask[y, x] else self.template.flow[y, x]
        return out

    def test_selection_oracle_at_zero_dilation(self):
        half = np.zeros((16, 20), dtype=np.uint8)
        half[:, :10] = 1
        for mask in (np.zeros((16, 20), dtype=np.uint8), np.ones((16, 20), dtype=np.uint8), half):
            fused = fuse_flow(self.sim, self.template, mask, dilation=0)
            assert_array_equal(fused.flow, self._oracle(mask))

    def test_ring_blends_linearly(self):
        mask = np.zeros((16, 20), dtype=np.uint8)
        mask[:, :10] = 1
        fused = fuse_flow(self.sim, self.template, mask, dilation=3).flow
        # Column 10 is one pixel from the mask: weight 1 - 1/4.
        expected = self.template.flow[:, 10] + 0.75 * (self.sim.flow[:, 10] - self.template.flow[:, 10])
        assert_allclose(fused[:, 10], expected, rtol=1e-5, atol=1e-6)
        assert_array_equal(fused[:, 14:], self.template.flow[:, 14:])

    def test_unknown_sim_flow_is_filled_near_the_mask(self):
        sim = np.full((16, 20, 2), UNKNOWN_FLOW, dtype=np.float32)
        sim[:, :10] = (1.0, 2.0)
        mask = np.zeros((16, 20), dtype=np.uint8)
        mask[:, :10] = 1
        fused = fuse_flow(FlowField(sim, 1, 2), self.template, mask, dilation=2).flow
        self.assertTrue(np.all(np.abs(fused) < 1e9))

    def test_all_unknown_sim_flow_keeps_template_in_the_ring(self):
        sim = FlowField(np.full((16, 20, 2), UNKNOWN_FLOW, dtype=np.float32), 1, 2)
        template = FlowField(np.full((16, 20, 2), 0.5, dtype=np.float32), 1, 2)
        mask = np.zeros((16, 20), dtype=np.uint8)
        mask[6:10, 8:12] = 1
        fused = fuse_flow(sim, template, mask, dilation=12)
        outside = mask == 0
        assert_array_equal(fused.flow[outside], template.flow[outside])
        self.assertTrue(np.all(fused.valid[outside]))

    def test_shape_mismatch(self):
        with self.assertRaises(FlowShapeError):
            fuse_flow(self.sim, self.template, np.zeros((8, 8), dtype=np.uint8), dilation=0)


class TestFloFiles(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.test_dir, "f.flo")

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_byte_layout(self):
        """A 2x1 field is a 12-byte header plus two float32 pairs."""
        flow = np.array([[[1.0, -2.0], [0.5, 3.25]]], dtype=np.float32)
        write_flow(FlowField(flow), self.path)
        with open(self.path, "rb") as f:
            raw = f.read()
        self.assertEqual(len(raw), 28)
        self.assertEqual(np.frombuffer(raw[:4], dtype="<f4")[0], np.float32(202021.25))
        assert_array_equal(np.frombuffer(raw[4:12], dtype="<i4"), [2, 1])
        assert_array_equal(load_template_flow(self.path).flow, flow)

    def test_bad_magic(self):
        with open(self.path, "wb") as f:
            f.write(np.array([1.0], dtype="<f4").tobytes() + np.array([1, 1], dtype="<i4").tobytes() + bytes(8))
        with self.assertRaisesRegex(FlowFormatError, "magic"):
            load_template_flow(self.path)

    def test_truncated_payload(self):
        write_flow(FlowField(np.zeros((4, 4, 2), dtype=np.float32)), self.path)
        with open(self.path, "r+b") as f:
            f.truncate(40)
        with self.assertRaisesRegex(FlowFormatError, "truncated"):
            load_template_flow(self.path)

    def test_magnitude_stats(self):
        flow = np.tile(np.array([3.0, 4.0], dtype=np.float32), (4, 5, 1))
        flow[0, 0] = UNKNOWN_FLOW
        stats = flow_magnitude_stats(FlowField(flow))
        self.assertEqual(stats["valid_pixels"], 19)
        self.assertAlmostEqual(stats["mean"], 5.0)
        self.assertAlmostEqual(stats["p99"], 5.0)


if __name__ == '__main__':
    unittest.main()
