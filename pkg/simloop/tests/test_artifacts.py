import unittest
import os
import shutil
import tempfile

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from simloop.guidance_lib import artifacts
from simloop.guidance_lib.dynamics_init import ObjectInitState
from simloop.guidance_lib.exceptions import ArtifactIOError
from simloop.guidance_lib.mpm_sim import ParticleSnapshot, SimTrajectory
from simloop.guidance_lib.render_guidance import CorrespondenceSet
from simloop.guidance_lib.scene_bundle import BackgroundPointCloud


def _trajectory(frames=3, n=5):
    rng = np.random.default_rng(4)
    ids = (np.uint64(1) << np.uint64(32)) | np.arange(n, dtype=np.uint64)
    snaps = [ParticleSnapshot(particle_id=ids, position=rng.uniform(0, 2, (n, 3)),
                              velocity=rng.normal(size=(n, 3)), color=rng.uniform(size=(n, 3)),
                              object_id=np.ones(n, dtype=np.int32)) for _ in range(frames)]
    return SimTrajectory(snapshots=snaps, times=np.arange(frames) / 25.0, fps=25.0)


class TestArtifacts(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def _path(self, name):
        return os.path.join(self.test_dir, name)

    def test_trajectory_file(self):
        """Records hold single-precision values and the header is readable alone."""
        traj = _trajectory()
        path = self._path("trajectory.bin")
        artifacts.write_trajectory(path, traj)
        self.assertTrue(artifacts.is_trajectory_file(path))
        self.assertEqual(artifacts.read_trajectory_header(path),
                         {"num_particles": 5, "num_frames": 3, "fps": 25.0})
        expected = 32 + 8 * 3 + artifacts.PARTICLE_RECORD.itemsize * 15
        self.assertEqual(os.path.getsize(path), expected)
        back = artifacts.read_trajectory(path)
        for a, b in zip(traj.snapshots, back.snapshots):
            assert_array_equal(a.position.astype(np.float32), b.position)
            assert_array_equal(a.velocity.astype(np.float32), b.velocity)
            self.assertEqual(b.position.dtype, np.float64)
            assert_array_equal(a.particle_id, b.particle_id)
        assert_array_equal(back.times, traj.times)

    def test_particle_record_layout(self):
        """id u64, position, velocity and color as 9 float32, object id u32."""
        self.assertEqual(artifacts.PARTICLE_RECORD.itemsize, 8 + 36 + 4)
        self.assertEqual(artifacts.PARTICLE_RECORD.fields["position"][1], 8)
        self.assertEqual(artifacts.PARTICLE_RECORD.fields["object_id"][1], 44)

    def test_truncated_trajectory(self):
        path = self._path("trajectory.bin")
        artifacts.write_trajectory(path, _trajectory())
        with open(path, "r+b") as f:
            f.truncate(os.path.getsize(path) - 10)
        with self.assertRaisesRegex(ArtifactIOError, "expected"):
            artifacts.read_trajectory(path)

    def test_foreign_file_is_not_a_trajectory(self):
        path = self._path("other.bin")
        with open(path, "wb") as f:
            f.write(b"\x00" * 64)
        self.assertFalse(artifacts.is_trajectory_file(path))
        with self.assertRaisesRegex(ArtifactIOError, "not a trajectory file"):
            artifacts.read_trajectory(path)

    def test_correspondences_keep_visibility(self):
        ids = np.array([(1 << 32) | 3, (2 << 32) | 0], dtype=np.uint64)
        corr = CorrespondenceSet(frame=4, reference_frame=1, particle_id=ids,
                                 object_id=np.array([1, 2], dtype=np.int32),
                                 p_ref=np.array([[1.5, 2.25], [np.nan, np.nan]]),
                                 q_t=np.array([[3.0, 4.5], [6.0, 7.0]]),
                                 visible_in_reference=np.array([True, False]))
        path = self._path("corr_0004.bin")
        artifacts.write_correspondences(path, corr)
        self.assertEqual(os.path.getsize(path), 2 * 25)
        back = artifacts.read_correspondences(path, frame=4)
        assert_array_equal(back.object_id, [1, 2])
        assert_array_equal(back.p_ref[0], [1.5, 2.25])
        self.assertTrue(np.all(np.isnan(back.p_ref[1])))
        assert_array_equal(back.q_t, corr.q_t)

    def test_correspondence_size_check(self):
        path = self._path("corr_0002.bin")
        with open(path, "wb") as f:
            f.write(b"\x00" * 30)
        with self.assertRaisesRegex(ArtifactIOError, "not a multiple of 25"):
            artifacts.read_correspondences(path, frame=2)

    def test_point_cloud_ply(self):
        cloud = BackgroundPointCloud(
            points=np.array([[0.0, 1.0, 2.0], [-1.5, 0.25, 3.0]]),
            colors=np.array([[1.0, 0.0, 0.0], [0.0, 128 / 255, 1.0]]),
            source_frames=np.array([1, 3], dtype=np.int32),
        )
        path = self._path("background.ply")
        artifacts.write_point_cloud(path, cloud)
        back = artifacts.read_point_cloud(path)
        assert_array_equal(back.points, cloud.points)
        assert_allclose(back.colors, cloud.colors, atol=1e-12)
        assert_array_equal(back.source_frames, [1, 3])

    def test_json_is_stable(self):
        path_a, path_b = self._path("a.json"), self._path("b.json")
        artifacts.write_json(path_a, {"b": 1, "a": [1.5, None]})
        artifacts.write_json(path_b, {"a": [1.5, None], "b": 1})
        self.assertEqual(artifacts.file_sha256(path_a), artifacts.file_sha256(path_b))

    def test_json_errors(self):
        with self.assertRaisesRegex(ArtifactIOError, "artifact not found"):
            artifacts.read_json(self._path("missing.json"))
        path = self._path("bad.json")
        with open(path, "w") as f:
            f.write("{\n  \"S\": ,\n}")
        with self.assertRaisesRegex(ArtifactIOError, "line 2"):
            artifacts.read_json(path)
        artifacts.write_json(path, {"S": 2.0})
        with self.assertRaisesRegex(ArtifactIOError, "malformed domain"):
            artifacts.read_domain(path)

    def test_init_states(self):
        path = self._path("init_state.json")
        states = [ObjectInitState(object_id=1, position=[0.1, 0.2, 0.3], scale=1.2,
                                  velocity=[0.5, 0.0, 0.0], angular_velocity=[0.0, 0.0, 1.0])]
        artifacts.write_init_states(path, states)
        back = artifacts.read_init_states(path)
        self.assertEqual(back[0].object_id, 1)
        assert_allclose(back[0].velocity, [0.5, 0.0, 0.0])

    def test_sha256(self):
        path = self._path("abc.txt")
        with open(path, "wb") as f:
            f.write(b"abc")
        self.assertEqual(artifacts.file_sha256(path),
                         "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad")


if __name__ == '__main__':
    unittest.main()
