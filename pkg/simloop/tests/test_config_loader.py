import unittest
import os
import json
import shutil
import tempfile

from simloop.guidance_lib.config_loader import build_config, load_presets
from simloop.guidance_lib.exceptions import ConfigError


class TestConfigLoader(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.config_path = os.path.join(self.test_dir, 'presets.json')

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def _write_config(self, data):
        with open(self.config_path, 'w') as f:
            json.dump(data, f)

    def test_builtin_presets_resolve(self):
        """Tests that the packaged presets load and inherit from `_default`."""
        presets = load_presets()
        self.assertIn("_default", presets)
        self.assertEqual(presets["preview"]["grid_resolution"], 64)
        self.assertEqual(presets["preview"]["cfl"], 0.4)
        self.assertNotIn("inherits", presets["preview"])

    def test_inheritance_chain(self):
        """Tests a two-level chain: test-fixture -> preview -> _default."""
        config = build_config("test-fixture")
        self.assertEqual(config.grid_resolution, 64)
        self.assertEqual(config.particles_per_cell, 2)
        self.assertEqual(config.youngs_clamp, 1e6)
        self.assertEqual(config.densify_method, "idw_affine")

    def test_user_preset_inherits_builtin(self):
        self._write_config({"mine": {"inherits": "golden", "seed": 7}})
        config = build_config("mine", user_config_path=self.config_path)
        self.assertEqual(config.seed, 7)
        self.assertEqual(config.warp_sampling, "nearest")

    def test_user_preset_replaces_builtin(self):
        self._write_config({"preview": {"inherits": "_default", "grid_resolution": 32}})
        config = build_config("preview", user_config_path=self.config_path)
        self.assertEqual(config.grid_resolution, 32)
        self.assertEqual(config.particles_per_cell, 8)

    def test_nested_settings_are_deep_merged(self):
        self._write_config({
            "base": {"keyframe_overrides": {"1": [1, 4]}},
            "child": {"inherits": "base", "keyframe_overrides": {"2": [2, 5]}},
        })
        config = build_config("child", user_config_path=self.config_path)
        self.assertEqual(config.keyframe_overrides, {"1": [1, 4], "2": [2, 5]})

    def test_overrides_take_precedence(self):
        config = build_config("preview", overrides={"grid_resolution": 96, "seed": None})
        self.assertEqual(config.grid_resolution, 96)
        self.assertEqual(config.seed, 0)

    def test_circular_inheritance(self):
        self._write_config({"a": {"inherits": "b"}, "b": {"inherits": "a"}})
        with self.assertRaisesRegex(ConfigError, "Circular inheritance"):
            load_presets(self.config_path)

    def test_unknown_parent(self):
        self._write_config({"child": {"inherits": "nowhere"}})
        with self.assertRaises(ConfigError):
            load_presets(self.config_path)

    def test_unknown_preset(self):
        with self.assertRaisesRegex(ConfigError, "'nope' not found"):
            build_config("nope")

    def test_unknown_key(self):
        with self.assertRaisesRegex(ConfigError, "Unknown configuration keys: grid_size"):
            build_config("preview", overrides={"grid_size": 3})

    def test_missing_and_malformed_files(self):
        with self.assertRaises(ConfigError):
            load_presets(os.path.join(self.test_dir, "missing.json"))
        with open(self.config_path, 'w') as f:
            f.write("{'invalid_json':}")
        with self.assertRaises(ConfigError):
            load_presets(self.config_path)

    def test_errors_exit_with_validation_code(self):
        with self.assertRaises(ConfigError) as ctx:
            build_config("nope")
        self.assertEqual(ctx.exception.exit_code, 2)


if __name__ == '__main__':
    unittest.main()
