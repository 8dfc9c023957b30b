from dataclasses import dataclass, field, fields
from typing import Optional, List, Dict, Any

PIPELINE_STAGES: List[str] = [
    "ingest",
    "estimate",
    "init-domain",
    "simulate",
    "render",
    "fuse-flow",
    "build-target",
]


@dataclass
class PipelineConfig:
    """A data class to hold all settings for a simloop run.

    This class centralizes every numeric knob of the pipeline, from input and
    output paths to solver resolution and interpolation choices. Instances are
    normally produced by `config_loader.build_config` from a preset file and
    then checked by `validation.validate_config`.

    Attributes:
        bundle_path: Path to the scene bundle directory.
        output_path: Directory that receives every stage artifact.
        offset_coefficient: Margin multiplier C applied to the scene's bounding
            union when sizing the simulation cube. Must be >= 1.
        grid_resolution: Grid nodes n per axis; cell size is 2/n.
        particles_per_cell: Target particle count per grid cell when seeding.
        cfl: CFL number used for the stable time step.
        dt_override: Fixed solver time step in seconds. None derives it from CFL.
        keyframe_interval: Real-time spacing in seconds of the default key-frame
            pair used for velocity estimation.
        keyframe_overrides: Per-object key-frame pairs, keyed by object ID as a
            string, e.g. {"2": [3, 9]}.
        gravity: Metric gravity vector in m/s^2.
        gravity_alignment: Optional row-major 3x3 world-to-sim rotation.
        motion_horizon: Seconds of ballistic sweep used to bound foreground
            motion. None uses the video duration.
        background_voxel_size: Voxel size in meters for background subsampling.
            None uses 1/128 of the raw cloud extent.
        background_min_neighbors: Minimum neighbor count for the outlier filter.
        background_radius_factor: Outlier search radius as a multiple of the
            voxel size.
        collider_friction: Coulomb friction of the static background.
        boundary_friction: Friction at the domain faces. None means sticky.
        youngs_clamp: Upper bound on Young's modulus before the S^2 rescale.
        splat_radius: Disc radius in pixels for point splatting. None derives
            it from particle spacing and median depth.
        visibility_tolerance: Depth slack in sim units for the correspondence
            visibility test. None uses 1.5 particle spacings.
        fuse_dilation: Width in pixels of the blend ring around the rendered
            foreground when fusing flows.
        densify_k: Nearest sparse samples used per pixel when densifying.
        densify_radius: Search radius in pixels for densification.
        densify_method: One of 'idw_affine', 'idw' or 'nearest'.
        warp_sampling: 'bilinear' or 'nearest' sampling of frame 1.
        material_table: Optional path to a material table JSON file.
        estimate_scale: If True, also report the approach/recede rate of each
            object from its feature matches.
        seed: Seed for particle jitter.
        threads: Worker threads for per-frame work. None defers to the
            SIMLOOP_THREADS environment variable.
        stages: Stages run by `pipeline`, in order.
        verbose: If True, prints per-stage details.
        quiet: If True, suppresses all non-essential output.
        debug: If True, prints tracebacks for unexpected failures.
    """
    bundle_path: Optional[str] = None
    output_path: Optional[str] = None
    offset_coefficient: float = 1.25
    grid_resolution: int = 128
    particles_per_cell: int = 8
    cfl: float = 0.4
    dt_override: Optional[float] = None
    keyframe_interval: float = 0.2
    keyframe_overrides: Dict[str, List[int]] = field(default_factory=dict)
    gravity: List[float] = field(default_factory=lambda: [0.0, -9.8, 0.0])
    gravity_alignment: Optional[List[float]] = None
    motion_horizon: Optional[float] = None
    background_voxel_size: Optional[float] = None
    background_min_neighbors: int = 4
    background_radius_factor: float = 3.0
    collider_friction: float = 0.3
    boundary_friction: Optional[float] = None
    youngs_clamp: float = 5e8
    splat_radius: Optional[int] = None
    visibility_tolerance: Optional[float] = None
    fuse_dilation: int = 3
    densify_k: int = 4
    densify_radius: float = 8.0
    densify_method: str = "idw_affine"
    warp_sampling: str = "bilinear"
    material_table: Optional[str] = None
    estimate_scale: bool = False
    seed: int = 0
    threads: Optional[int] = None
    stages: List[str] = field(default_factory=lambda: list(PIPELINE_STAGES))
    verbose: bool = False
    quiet: bool = False
    debug: bool = False

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> Dict[str, Any]:
        """Returns the settings that influence artifacts, for hashing and reports."""
        skip = {"verbose", "quiet", "debug", "threads"}
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in skip}
