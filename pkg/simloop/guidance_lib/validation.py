import math
from typing import Any, List

import numpy as np

from .exceptions import ConfigError
from .options import PipelineConfig, PIPELINE_STAGES

DENSIFY_METHODS = ("idw_affine", "idw", "nearest")
WARP_SAMPLINGS = ("bilinear", "nearest")


def _require(condition: bool, field_name: str, rule: str, value: Any):
    if not condition:
        raise ConfigError(f"{field_name}: {rule} (got {value!r})")


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _optional_positive(config: PipelineConfig, name: str):
    value = getattr(config, name)
    _require(value is None or (_is_number(value) and value > 0), name, "must be null or > 0", value)


def validate_config(config: PipelineConfig) -> PipelineConfig:
    """Checks every numeric setting against the range its module accepts.

    The checks run before any stage so a bad configuration fails fast with a
    message naming the offending field, e.g. "offset_coefficient: C ≥ 1".

    Args:
        config: The configuration to check.

    Returns:
        The same configuration, for chaining.

    Raises:
        ConfigError: On the first setting that is out of range.
    """
    # --- Domain ---
    c = config.offset_coefficient
    _require(_is_number(c) and c >= 1.0, "offset_coefficient", "C ≥ 1", c)
    n = config.grid_resolution
    _require(_is_int(n) and n >= 8, "grid_resolution", "n must be an integer ≥ 8", n)
    _require(len(config.gravity) == 3 and all(_is_number(g) for g in config.gravity),
             "gravity", "must be three finite numbers", config.gravity)
    if config.gravity_alignment is not None:
        values = config.gravity_alignment
        _require(len(values) == 9 and all(_is_number(v) for v in values),
                 "gravity_alignment", "must be nine finite numbers", values)
        rot = np.asarray(values, dtype=np.float64).reshape(3, 3)
        _require(np.allclose(rot @ rot.T, np.eye(3), atol=1e-6) and abs(np.linalg.det(rot) - 1.0) < 1e-6,
                 "gravity_alignment", "must be a proper rotation", values)
    _optional_positive(config, "motion_horizon")

    # --- Solver ---
    _require(_is_int(config.particles_per_cell) and config.particles_per_cell >= 1,
             "particles_per_cell", "ppc ≥ 1", config.particles_per_cell)
    _require(_is_number(config.cfl) and 0.0 < config.cfl <= 1.0, "cfl", "must be in (0, 1]", config.cfl)
    _optional_positive(config, "dt_override")
    _require(_is_number(config.youngs_clamp) and config.youngs_clamp > 0,
             "youngs_clamp", "must be > 0", config.youngs_clamp)
    _require(_is_number(config.collider_friction) and config.collider_friction >= 0,
             "collider_friction", "μ ≥ 0", config.collider_friction)
    bf = config.boundary_friction
    _require(bf is None or (_is_number(bf) and bf >= 0), "boundary_friction", "must be null or ≥ 0", bf)

    # --- Key frames ---
    _require(_is_number(config.keyframe_interval) and config.keyframe_interval > 0,
             "keyframe_interval", "Δt > 0", config.keyframe_interval)
    for obj, pair in config.keyframe_overrides.items():
        ok = (str(obj).isdigit() and isinstance(pair, (list, tuple)) and len(pair) == 2
              and all(_is_int(f) and f >= 1 for f in pair) and pair[0] != pair[1])
        _require(ok, f"keyframe_overrides[{obj}]", "must be two distinct frame numbers ≥ 1", pair)

    # --- Background ---
    _optional_positive(config, "background_voxel_size")
    _require(_is_int(config.background_min_neighbors) and config.background_min_neighbors >= 0,
             "background_min_neighbors", "must be an integer ≥ 0", config.background_min_neighbors)
    _require(_is_number(config.background_radius_factor) and config.background_radius_factor > 0,
             "background_radius_factor", "must be > 0", config.background_radius_factor)

    # --- Rendering and targets ---
    sr = config.splat_radius
    _require(sr is None or (_is_int(sr) and sr >= 0), "splat_radius", "must be null or an integer ≥ 0", sr)
    _optional_positive(config, "visibility_tolerance")
    _require(_is_int(config.fuse_dilation) and config.fuse_dilation >= 0,
             "fuse_dilation", "must be an integer ≥ 0", config.fuse_dilation)
    _require(_is_int(config.densify_k) and config.densify_k >= 1, "densify_k", "k ≥ 1", config.densify_k)
    _require(_is_number(config.densify_radius) and config.densify_radius > 0,
             "densify_radius", "r > 0", config.densify_radius)
    _require(config.densify_method in DENSIFY_METHODS, "densify_method",
             f"must be one of {', '.join(DENSIFY_METHODS)}", config.densify_method)
    _require(config.warp_sampling in WARP_SAMPLINGS, "warp_sampling",
             f"must be one of {', '.join(WARP_SAMPLINGS)}", config.warp_sampling)

    # --- Run control ---
    _require(_is_int(config.seed) and config.seed >= 0, "seed", "must be an integer ≥ 0", config.seed)
    t = config.threads
    _require(t is None or (_is_int(t) and t >= 1), "threads", "must be null or ≥ 1", t)
    unknown: List[str] = [s for s in config.stages if s not in PIPELINE_STAGES]
    _require(not unknown, "stages", f"unknown stage names {unknown}", config.stages)

    return config
