"""
Stage runner for the guidance pipeline.

Each stage reads its inputs from the bundle and from artifacts earlier stages
left in the output directory, writes its own artifacts, and records an entry
in manifest.json: the hash of everything it read, the hash of every file it
wrote, its wall time and the warnings it raised. Stages never share in-memory
state, so any stage can be rerun on its own.
"""
import functools
import hashlib
import json
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from . import artifacts
from .dynamics_init import estimate_object_state
from .exceptions import (
    ArtifactIOError,
    ConfigError,
    SimloopError,
    SimloopWarning,
    StageDependencyError,
    UnknownArtifactError,
    ValidationError,
)
from .material_map import default_table, load_material_table, map_descriptor
from .metrics import corr_pixel_mse, mask_miou
from .mpm_sim import (
    ParticleSet,
    build_collider,
    elastic_energy,
    kinetic_energy,
    potential_energy,
    prepare_material,
    seed_particles,
    simulate,
    total_momentum,
)
from .options import PIPELINE_STAGES, PipelineConfig
from .render_guidance import (
    FlowField,
    RenderedFrame,
    compute_correspondences,
    correspondences_to_flow,
    default_splat_radius,
    flow_magnitude_stats,
    fuse_flow,
    load_template_flow,
    render_frame,
    write_flow,
)
from .scene_bundle import (
    SceneBundle,
    build_background_points,
    default_voxel_size,
    filter_background_points,
    load_bundle,
    read_depth,
    read_labels,
    read_rgb,
    write_depth,
    write_labels,
    write_rgb,
)
from .sim_domain import AxisAlignedBox, bound_motion, build_domain, camera_to_sim, require_inside, to_sim
from .ttco_target import WarpTarget, build_warp_target, densify_correspondences, eval_loss
from .validation import validate_config

EVAL_STAGE = "eval-loss"
ALL_STAGES = PIPELINE_STAGES + [EVAL_STAGE]
MANIFEST_NAME = "manifest.json"
THREADS_ENV = "SIMLOOP_THREADS"

# Artifact path (relative to the output directory) and the stage producing it.
STAGE_REQUIREMENTS: Dict[str, List[Tuple[str, str]]] = {
    "ingest": [],
    "estimate": [],
    "init-domain": [("background.ply", "ingest"), ("init_states.json", "estimate")],
    "simulate": [("domain.json", "init-domain"), ("init_states.json", "estimate"), ("background.ply", "ingest")],
    "render": [("trajectory.bin", "simulate"), ("domain.json", "init-domain")],
    "fuse-flow": [("trajectory.bin", "simulate"), ("domain.json", "init-domain")],
    "build-target": [("corr", "render"), ("render", "render"), ("mask", "render")],
    EVAL_STAGE: [("targets", "build-target"), ("corr", "render"), ("mask", "render")],
}


def resolve_threads(configured: Optional[int], environ: Optional[Dict[str, str]] = None) -> int:
    """Worker count: the configured value, else SIMLOOP_THREADS, else 1.

    `configured` already reflects --threads, which overrides the config file.
    """
    if configured is not None:
        return int(configured)
    env = os.environ if environ is None else environ
    raw = env.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}: must be an integer ≥ 1 (got {raw!r})")
    if value < 1:
        raise ConfigError(f"{THREADS_ENV}: must be an integer ≥ 1 (got {value})")
    return value


@dataclass
class StageContext:
    """Everything a stage needs: settings, directories and run options."""
    config: PipelineConfig
    threads: int = 1
    video_dir: Optional[str] = None
    masks_dir: Optional[str] = None
    summary: Dict[str, Any] = field(default_factory=dict)

    @property
    def out_dir(self) -> str:
        return self.config.output_path

    def out(self, *parts: str) -> str:
        return os.path.join(self.config.output_path, *parts)

    def frame_path(self, sub: str, t: int, suffix: str) -> str:
        return os.path.join(self.config.output_path, sub, f"{t:04d}{suffix}")

    @functools.cached_property
    def bundle(self) -> SceneBundle:
        return load_bundle(self.config.bundle_path)

    @functools.cached_property
    def material_table(self):
        if self.config.material_table:
            return load_material_table(self.config.material_table)
        return default_table()

    @property
    def progress_disabled(self) -> bool:
        return self.config.quiet

    def map_frames(self, fn: Callable[[int], Any], frames: Iterable[int], desc: str) -> List[Any]:
        """Applies fn to each frame, in parallel when threads > 1, keeping frame order."""
        frames = list(frames)
        if self.threads <= 1:
            return [fn(t) for t in tqdm(frames, desc=desc, unit="frame", disable=self.progress_disabled)]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(tqdm(pool.map(fn, frames), total=len(frames), desc=desc, unit="frame",
                             disable=self.progress_disabled))


# --- Hashing and manifest ---

def _tree_files(path: str) -> List[str]:
    if os.path.isfile(path):
        return [path]
    found = []
    for root, dirs, files in os.walk(path):
        dirs.sort()
        found.extend(os.path.join(root, f) for f in sorted(files))
    return found


def _hash_inputs(ctx: StageContext, stage: str) -> str:
    digest = hashlib.sha256()
    settings = ctx.config.to_dict()
    settings.pop("output_path", None)
    digest.update(json.dumps(settings, sort_keys=True, default=str).encode("utf-8"))
    roots = [ctx.config.bundle_path] + [ctx.out(rel) for rel, _ in STAGE_REQUIREMENTS[stage]]
    roots += [d for d in (ctx.video_dir, ctx.masks_dir) if d]
    for root in roots:
        for path in _tree_files(root):
            digest.update(os.path.relpath(path, root).encode("utf-8"))
            digest.update(artifacts.file_sha256(path).encode("ascii"))
    return digest.hexdigest()


def _describe_outputs(ctx: StageContext, outputs: List[str]) -> List[Dict[str, str]]:
    described = []
    for rel in outputs:
        for path in _tree_files(ctx.out(rel)):
            described.append({
                "path": os.path.relpath(path, ctx.out_dir).replace(os.sep, "/"),
                "sha256": artifacts.file_sha256(path),
            })
    return described


def load_manifest(out_dir: str) -> Dict[str, Any]:
    path = os.path.join(out_dir, MANIFEST_NAME)
    if not os.path.isfile(path):
        return {"stages": []}
    return artifacts.read_json(path)


def _record_stage(ctx: StageContext, entry: Dict[str, Any]) -> Dict[str, Any]:
    manifest = load_manifest(ctx.out_dir)
    entries = {e["stage"]: e for e in manifest.get("stages", [])}
    entries[entry["stage"]] = entry
    manifest["stages"] = [entries[s] for s in ALL_STAGES if s in entries]
    manifest["seed"] = ctx.config.seed
    manifest["config"] = ctx.config.to_dict()
    artifacts.write_json(os.path.join(ctx.out_dir, MANIFEST_NAME), manifest)
    return manifest


def check_dependencies(config: PipelineConfig, stage: str):
    """Raises `StageDependencyError` naming the stage that must run first."""
    for rel, producer in STAGE_REQUIREMENTS[stage]:
        if not os.path.exists(os.path.join(config.output_path, rel)):
            raise StageDependencyError(f"stage '{stage}' needs {rel}; run '{producer}' first")


# --- Stages ---

def _stage_ingest(ctx: StageContext) -> List[str]:
    cfg = ctx.config
    raw = build_background_points(ctx.bundle)
    voxel = cfg.background_voxel_size or default_voxel_size(raw)
    filtered = filter_background_points(raw, voxel, cfg.background_min_neighbors,
                                        cfg.background_radius_factor * voxel)
    artifacts.write_point_cloud(ctx.out("background.ply"), filtered)
    report = {
        "raw_points": len(raw),
        "filtered_points": len(filtered),
        "voxel_size": voxel,
        "num_frames": ctx.bundle.num_frames,
        "object_ids": list(ctx.bundle.object_ids),
    }
    artifacts.write_json(ctx.out("ingest.json"), report)
    ctx.summary.update(report)
    return ["background.ply", "ingest.json"]


def _stage_estimate(ctx: StageContext) -> List[str]:
    bundle, cfg = ctx.bundle, ctx.config
    states = []
    for obj in bundle.object_ids:
        override = cfg.keyframe_overrides.get(str(obj))
        if override and max(override) > bundle.num_frames:
            raise ValidationError(f"object {obj}: key frames {override} outside 1..{bundle.num_frames}")
        state = estimate_object_state(
            bundle, obj,
            keyframes=tuple(override) if override else None,
            keyframe_interval=cfg.keyframe_interval,
            estimate_scale=cfg.estimate_scale,
        )
        states.append(state)
        ctx.summary[f"object_{obj}"] = {"speed_mps": float(np.linalg.norm(state.velocity)),
                                        "theta_deg": state.theta_deg}
    artifacts.write_init_states(ctx.out("init_states.json"), states)
    return ["init_states.json"]


def _stage_init_domain(ctx: StageContext) -> List[str]:
    bundle, cfg = ctx.bundle, ctx.config
    cloud = artifacts.read_point_cloud(ctx.out("background.ply"))
    states = artifacts.read_init_states(ctx.out("init_states.json"))
    horizon = cfg.motion_horizon or bundle.duration

    fg_box = AxisAlignedBox.empty()
    for state in states:
        fg_box = fg_box.union(bound_motion(state, horizon, cfg.gravity))
    bg_box = AxisAlignedBox.from_points(cloud.points)
    rotation = None if cfg.gravity_alignment is None else np.asarray(cfg.gravity_alignment).reshape(3, 3)
    domain = build_domain(fg_box, bg_box, cfg.offset_coefficient, cfg.grid_resolution,
                          gravity=cfg.gravity, rotation=rotation)
    if cfg.dt_override is not None:
        domain = domain.with_dt(cfg.dt_override)

    require_inside(to_sim(domain, fg_box.corners()), "swept foreground box corners")
    require_inside(to_sim(domain, cloud.points), "background points")

    materials = {str(obj): map_descriptor(bundle.materials[obj], ctx.material_table).to_dict()
                 for obj in bundle.object_ids}
    artifacts.write_domain(ctx.out("domain.json"), domain, extra={
        "motion_horizon": horizon,
        "foreground_box": fg_box.to_dict(),
        "background_box": bg_box.to_dict(),
        "materials": materials,
    })
    ctx.summary.update({"S": domain.scale, "dx": domain.dx})
    return ["domain.json"]


def _stage_simulate(ctx: StageContext) -> List[str]:
    bundle, cfg = ctx.bundle, ctx.config
    if bundle.num_frames < 2:
        raise ValidationError("simulation needs a video of at least two frames")
    domain = artifacts.read_domain(ctx.out("domain.json"))
    states = artifacts.read_init_states(ctx.out("init_states.json"))
    cloud = artifacts.read_point_cloud(ctx.out("background.ply"))

    objects = []
    for state in states:
        obj = state.object_id
        params = prepare_material(map_descriptor(bundle.materials[obj], ctx.material_table), domain, cfg.youngs_clamp)
        objects.append(seed_particles(bundle.meshes[obj], state, domain, params, cfg.particles_per_cell, cfg.seed))
    centers = np.array([cam.center for cam in bundle.cameras])
    collider = build_collider(cloud, domain, cfg.collider_friction, camera_centers=centers)

    traj = simulate(objects, collider, domain, duration=(bundle.num_frames - 1) / bundle.fps, fps=bundle.fps,
                    cfl=cfg.cfl, boundary_friction=cfg.boundary_friction, progress=not cfg.quiet)
    artifacts.write_trajectory(ctx.out("trajectory.bin"), traj)

    initial = ParticleSet.concatenate(objects)
    report = {
        "num_particles": traj.num_particles,
        "num_frames": traj.num_frames,
        "particles_per_object": {str(p.object_id[0]): len(p) for p in objects},
        "collider_nodes": collider.num_occupied,
        "initial_energy": {
            "kinetic": kinetic_energy(initial),
            "potential": potential_energy(initial, domain.gravity_sim),
            "elastic": elastic_energy(initial),
        },
        "initial_momentum": total_momentum(initial).tolist(),
    }
    artifacts.write_json(ctx.out("sim.json"), report)
    ctx.summary.update({"num_particles": traj.num_particles, "num_frames": traj.num_frames})
    return ["trajectory.bin", "sim.json"]


@dataclass
class _RenderSetup:
    traj: Any
    domain: Any
    cameras: List[Any]
    splat_radius: int
    tolerance: float


def _render_setup(ctx: StageContext) -> _RenderSetup:
    cfg, bundle = ctx.config, ctx.bundle
    traj = artifacts.read_trajectory(ctx.out("trajectory.bin"))
    domain = artifacts.read_domain(ctx.out("domain.json"))
    if traj.num_frames != bundle.num_frames:
        raise ValidationError(f"trajectory has {traj.num_frames} frames, the bundle has {bundle.num_frames}")
    cameras = [camera_to_sim(domain, bundle.camera(t)) for t in range(1, bundle.num_frames + 1)]
    spacing = domain.dx / cfg.particles_per_cell ** (1.0 / 3.0)
    radius = cfg.splat_radius if cfg.splat_radius is not None else default_splat_radius(traj, cameras[0], spacing)
    tolerance = cfg.visibility_tolerance or 1.5 * spacing
    return _RenderSetup(traj, domain, cameras, int(radius), float(tolerance))


def _stage_render(ctx: StageContext) -> List[str]:
    setup = _render_setup(ctx)
    for sub in ("render", "mask", "depth", "corr"):
        os.makedirs(ctx.out(sub), exist_ok=True)
    first = render_frame(setup.traj, 1, setup.cameras[0], setup.splat_radius)

    def work(t: int):
        rendered = first if t == 1 else render_frame(setup.traj, t, setup.cameras[t - 1], setup.splat_radius)
        write_rgb(ctx.frame_path("render", t, ".png"), rendered.rgb)
        write_labels(ctx.frame_path("mask", t, ".png"), rendered.mask)
        write_depth(ctx.frame_path("depth", t, ".f32"), rendered.depth / setup.domain.scale)
        corr = compute_correspondences(setup.traj, t, setup.cameras[0], setup.cameras[t - 1],
                                       setup.splat_radius, setup.tolerance, reference_frame=1,
                                       render_ref=first, render_t=rendered)
        artifacts.write_correspondences(ctx.frame_path("corr", t, ".bin"), corr)
        return len(corr), corr.num_visible

    counts = ctx.map_frames(work, range(1, setup.traj.num_frames + 1), "Rendering")
    ctx.summary.update({
        "splat_radius": setup.splat_radius,
        "visibility_tolerance": setup.tolerance,
        "visible_particles": [c[0] for c in counts],
        "visible_in_frame1": [c[1] for c in counts],
    })
    return ["render", "mask", "depth", "corr"]


def _stage_fuse_flow(ctx: StageContext) -> List[str]:
    cfg, bundle = ctx.config, ctx.bundle
    setup = _render_setup(ctx)
    os.makedirs(ctx.out("flow"), exist_ok=True)
    frames = range(1, setup.traj.num_frames + 1)
    renders = ctx.map_frames(
        lambda t: render_frame(setup.traj, t, setup.cameras[t - 1], setup.splat_radius), frames, "Rendering")

    missing = [t for t in range(1, bundle.num_frames) if t not in bundle.template_flows]
    if missing:
        warnings.warn(f"template flow missing for {len(missing)} frame(s); background flow set to zero there",
                      SimloopWarning)

    def work(t: int):
        current, following = renders[t - 1], renders[t]
        corr = compute_correspondences(setup.traj, t, setup.cameras[t], setup.cameras[t - 1],
                                       setup.splat_radius, setup.tolerance, reference_frame=t + 1,
                                       render_ref=following, render_t=current)
        sim_flow = correspondences_to_flow(corr, current.mask, k=cfg.densify_k, method=cfg.densify_method)
        template = bundle.template_flows.get(t)
        if template is None:
            template = np.zeros((bundle.height, bundle.width, 2), dtype=np.float32)
        fused = fuse_flow(sim_flow, FlowField(flow=template, source=t, target=t + 1), current.mask, cfg.fuse_dilation)
        write_flow(fused, ctx.frame_path("flow", t, ".flo"))
        return flow_magnitude_stats(fused).get("mean", 0.0)

    means = ctx.map_frames(work, range(1, bundle.num_frames), "Fusing flow")
    ctx.summary["mean_flow_px"] = means
    return ["flow"]


def _read_render(ctx: StageContext, t: int) -> RenderedFrame:
    rgb = read_rgb(ctx.frame_path("render", t, ".png"))
    mask = read_labels(ctx.frame_path("mask", t, ".png"))
    depth = read_depth(ctx.frame_path("depth", t, ".f32"))
    return RenderedFrame(rgb=rgb, mask=mask, depth=depth, winner=np.full(mask.shape, -1, dtype=np.int64), frame=t)


def _stage_build_target(ctx: StageContext) -> List[str]:
    cfg, bundle = ctx.config, ctx.bundle
    os.makedirs(ctx.out("targets"), exist_ok=True)
    frame1 = bundle.frame(1)

    def work(t: int):
        corr = artifacts.read_correspondences(ctx.frame_path("corr", t, ".bin"), t)
        rendered = _read_render(ctx, t)
        dense = densify_correspondences(corr, rendered.mask, k=cfg.densify_k, radius=cfg.densify_radius,
                                        method=cfg.densify_method)
        target = build_warp_target(frame1, dense, rendered, sampling=cfg.warp_sampling)
        write_rgb(ctx.frame_path("targets", t, ".png"), target.rgb)
        write_labels(ctx.frame_path("targets", t, ".src.png"), target.source)
        return target.n_frame1, target.n_render

    counts = ctx.map_frames(work, range(2, bundle.num_frames + 1), "Building targets")
    ctx.summary.update({"n_frame1": [c[0] for c in counts], "n_render": [c[1] for c in counts]})
    return ["targets"]


def read_targets(out_dir: str) -> Dict[int, WarpTarget]:
    """Loads targets/%04d.png with their source maps, keyed by frame."""
    target_dir = os.path.join(out_dir, "targets")
    frames = sorted(int(name[:4]) for name in os.listdir(target_dir)
                    if name.endswith(".png") and not name.endswith(".src.png"))
    targets = {}
    for t in frames:
        rgb = read_rgb(os.path.join(target_dir, f"{t:04d}.png"))
        source = read_labels(os.path.join(target_dir, f"{t:04d}.src.png"))
        targets[t] = WarpTarget(frame=t, rgb=rgb, source=source, mask=source != 0)
    return targets


def _stage_eval_loss(ctx: StageContext) -> List[str]:
    targets = read_targets(ctx.out_dir)
    if not targets:
        raise ArtifactIOError(f"no targets found in {ctx.out('targets')}")
    video_dir = ctx.video_dir or os.path.join(ctx.config.bundle_path, "frames")
    last = max(targets)
    video = [read_rgb(os.path.join(video_dir, f"{t:04d}.png")) for t in range(1, last + 1)]
    report = eval_loss(video, targets)

    correspondences = {t: artifacts.read_correspondences(ctx.frame_path("corr", t, ".bin"), t) for t in targets}
    mse = corr_pixel_mse(video, correspondences)
    report.extras["corr_pixel_mse"] = None if np.isnan(mse) else mse
    if ctx.masks_dir:
        candidate = [read_labels(os.path.join(ctx.masks_dir, f"{t:04d}.png")) for t in range(1, last + 1)]
        rendered = [read_labels(ctx.frame_path("mask", t, ".png")) for t in range(1, last + 1)]
        report.extras["mask_miou"] = mask_miou(candidate, rendered)

    artifacts.write_json(ctx.out("loss_report.json"), report.to_dict())
    ctx.summary.update({"l_ttco": report.l_ttco, **report.extras})
    return ["loss_report.json"]


STAGE_FUNCTIONS: Dict[str, Callable[[StageContext], List[str]]] = {
    "ingest": _stage_ingest,
    "estimate": _stage_estimate,
    "init-domain": _stage_init_domain,
    "simulate": _stage_simulate,
    "render": _stage_render,
    "fuse-flow": _stage_fuse_flow,
    "build-target": _stage_build_target,
    EVAL_STAGE: _stage_eval_loss,
}


@dataclass
class StageResult:
    stage: str
    entry: Dict[str, Any]
    summary: Dict[str, Any]

    @property
    def warnings(self) -> List[str]:
        return self.entry["warnings"]


def run_stage(
    stage: str,
    config: PipelineConfig,
    video_dir: Optional[str] = None,
    masks_dir: Optional[str] = None,
) -> StageResult:
    """Runs one stage and records it in the manifest.

    Args:
        stage: A name from `ALL_STAGES`.
        config: A validated configuration with bundle and output paths set.
        video_dir: Candidate video frames for eval-loss; defaults to the
            bundle's frames.
        masks_dir: Optional candidate masks for eval-loss.

    Returns:
        The stage's manifest entry and summary.

    Raises:
        StageDependencyError: If an input artifact is missing.
        SimloopError: Any stage failure, with `stage` set.
    """
    if stage not in STAGE_FUNCTIONS:
        raise ConfigError(f"unknown stage '{stage}'")
    if not config.bundle_path or not config.output_path:
        raise ConfigError("bundle_path and output_path are required")
    os.makedirs(config.output_path, exist_ok=True)
    ctx = StageContext(config=config, threads=resolve_threads(config.threads),
                       video_dir=video_dir, masks_dir=masks_dir)

    try:
        check_dependencies(config, stage)
        inputs_hash = _hash_inputs(ctx, stage)
        start = time.perf_counter()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", SimloopWarning)
            outputs = STAGE_FUNCTIONS[stage](ctx)
        wall = time.perf_counter() - start
    except SimloopError as e:
        e.stage = stage
        raise

    messages = [str(w.message) for w in caught if issubclass(w.category, SimloopWarning)]
    entry = {
        "stage": stage,
        "inputs_hash": inputs_hash,
        "outputs": _describe_outputs(ctx, outputs),
        "wall_time_s": round(wall, 3),
        "warnings": messages,
    }
    _record_stage(ctx, entry)
    return StageResult(stage=stage, entry=entry, summary=ctx.summary)


def run_pipeline(config: PipelineConfig, on_stage: Optional[Callable[[StageResult], None]] = None) -> Dict[str, Any]:
    """Validates the configuration, then runs the configured stages in order.

    Args:
        config: The run configuration.
        on_stage: Optional callback invoked after each successful stage.

    Returns:
        The final manifest.

    Raises:
        ConfigError: Before any stage runs, if the configuration is invalid.
        SimloopError: From the first failing stage, with `stage` set.
    """
    validate_config(config)
    for stage in PIPELINE_STAGES:
        if stage not in config.stages:
            continue
        result = run_stage(stage, config)
        if on_stage:
            on_stage(result)
    return load_manifest(config.output_path)


# --- inspect ---

@dataclass
class ArtifactSummary:
    title: str
    headers: List[str]
    rows: List[List[Any]]


def _inspect_json(path: str) -> ArtifactSummary:
    data = artifacts.read_json(path)
    name = os.path.basename(path)
    if isinstance(data, dict) and "per_frame" in data:
        rows = [[f["t"], f["l_tex"], f["n_frame1"], f["n_render"]] for f in data["per_frame"]]
        rows.append(["total", data["l_ttco"], "", ""])
        return ArtifactSummary(f"{name}: L_TTCO = {data['l_ttco']:.6g}", ["t", "l_tex", "n_frame1", "n_render"], rows)
    if isinstance(data, dict) and "stages" in data:
        rows = [[e["stage"], e["wall_time_s"], len(e["outputs"]), len(e["warnings"])] for e in data["stages"]]
        return ArtifactSummary(f"{name}: {len(rows)} stages", ["stage", "wall_time_s", "outputs", "warnings"], rows)
    if isinstance(data, dict) and "S" in data:
        rows = [[k, data[k]] for k in ("S", "C", "n", "dx", "dt", "gravity_sim")]
        return ArtifactSummary(f"{name}: simulation domain", ["field", "value"], rows)
    if isinstance(data, list) and data and isinstance(data[0], dict) and "object_id" in data[0]:
        rows = [[s["object_id"], s["scale"], float(np.linalg.norm(s["v"])), float(np.linalg.norm(s["omega"])), s["theta_deg"]]
                for s in data]
        return ArtifactSummary(f"{name}: {len(rows)} object(s)", ["object", "scale", "|v| m/s", "|omega| rad/s", "theta_deg"], rows)
    raise UnknownArtifactError(f"{path}: unrecognised JSON artifact")


def inspect_artifact(path: str) -> ArtifactSummary:
    """Summarises an artifact without modifying it.

    Raises:
        ArtifactIOError: If the path does not exist.
        UnknownArtifactError: If the format is not recognised.
    """
    if not os.path.isfile(path):
        raise ArtifactIOError(f"artifact not found: {path}")
    name = os.path.basename(path)
    ext = os.path.splitext(name)[1].lower()

    if ext == ".bin" and artifacts.is_trajectory_file(path):
        traj = artifacts.read_trajectory(path)
        ids, counts = np.unique(traj.snapshot(1).object_id, return_counts=True)
        title = f"{traj.num_particles} particles, {traj.num_frames} frames, {traj.fps:g} fps"
        return ArtifactSummary(title, ["object", "particles"], [[int(i), int(c)] for i, c in zip(ids, counts)])
    if ext == ".bin":
        corr = artifacts.read_correspondences(path, frame=0)
        return ArtifactSummary(f"{name}: {len(corr)} correspondences", ["field", "value"],
                               [["entries", len(corr)], ["visible_in_frame1", corr.num_visible]])
    if ext == ".flo":
        stats = flow_magnitude_stats(load_template_flow(path))
        return ArtifactSummary(f"{name}: flow magnitude (px)", ["field", "value"], [[k, v] for k, v in stats.items()])
    if ext == ".json":
        return _inspect_json(path)
    if ext == ".ply":
        cloud = artifacts.read_point_cloud(path)
        return ArtifactSummary(f"{name}: {len(cloud)} points", ["field", "value"], [["points", len(cloud)]])
    raise UnknownArtifactError(f"{path}: unknown artifact format")
