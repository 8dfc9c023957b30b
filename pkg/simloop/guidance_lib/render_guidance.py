"""
Rendering of simulated particles into guidance rasters.

Particles are splatted as depth-tested discs through sim-conjugated cameras,
giving RGB, object-ID masks and depth per frame. Because every particle keeps
its ID, pixel correspondences between frames and optical flow follow directly
from the projections; no flow estimation from RGB is involved.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import distance_transform_edt
from scipy.spatial import cKDTree

from .exceptions import FlowFormatError, FlowShapeError, ValidationError
from .mpm_sim import SimTrajectory
from .scene_bundle import CameraFrame

FLO_MAGIC = 202021.25
UNKNOWN_FLOW = 1e10
_UNKNOWN_THRESHOLD = 1e9
_NEAR_PLANE = 1e-6
INTERPOLATION_METHODS = ("idw_affine", "idw", "nearest")


@dataclass(frozen=True, eq=False)
class RenderedFrame:
    """Splatting result for one frame.

    Attributes:
        rgb: (H, W, 3) uint8.
        mask: (H, W) uint8 object IDs, 0 where no particle won.
        depth: (H, W) float32 camera depth in sim units, +inf on background.
        winner: (H, W) int64 index of the winning particle, -1 on background.
        frame: 1-based frame index.
    """
    rgb: np.ndarray
    mask: np.ndarray
    depth: np.ndarray
    winner: np.ndarray
    frame: int


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Pixel locations of the same particles in a reference frame and frame t.

    Entries are sorted by particle ID. `p_ref` is NaN where the particle is not
    visible in the reference frame.
    """
    frame: int
    reference_frame: int
    particle_id: np.ndarray
    object_id: np.ndarray
    p_ref: np.ndarray
    q_t: np.ndarray
    visible_in_reference: np.ndarray

    def __len__(self) -> int:
        return len(self.particle_id)

    @property
    def num_visible(self) -> int:
        return int(np.sum(self.visible_in_reference))


@dataclass(frozen=True, eq=False)
class FlowField:
    """Dense flow from frame `source` to frame `target` in pixels."""
    flow: np.ndarray
    source: int = 0
    target: int = 0

    @property
    def valid(self) -> np.ndarray:
        return np.all(np.isfinite(self.flow) & (np.abs(self.flow) < _UNKNOWN_THRESHOLD), axis=2)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.flow.shape[:2]


# --- Splatting ---

def _disc_offsets(radius: int) -> np.ndarray:
    r = int(radius)
    oy, ox = np.mgrid[-r:r + 1, -r:r + 1]
    keep = ox * ox + oy * oy <= r * r
    return np.stack([ox[keep], oy[keep]], axis=1)


def _center_pixels(uv: np.ndarray) -> np.ndarray:
    return np.floor(uv + 0.5)


def splat(
    positions: np.ndarray,
    colors: np.ndarray,
    object_ids: np.ndarray,
    particle_ids: np.ndarray,
    camera: CameraFrame,
    splat_radius: int,
    frame: int = 1,
) -> RenderedFrame:
    """Z-buffered disc splatting of a point set.

    The nearest particle wins each pixel; equal depths go to the lower
    particle ID.
    """
    h, w = camera.height, camera.width
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    mask = np.zeros((h, w), dtype=np.uint8)
    depth = np.full((h, w), np.inf, dtype=np.float32)
    winner = np.full((h, w), -1, dtype=np.int64)

    uv, z = camera.project(positions)
    front = np.flatnonzero(z > _NEAR_PLANE)
    if len(front) == 0:
        return RenderedFrame(rgb, mask, depth, winner, frame)

    centers = _center_pixels(uv[front]).astype(np.int64)
    offsets = _disc_offsets(splat_radius)
    px = (centers[:, None, 0] + offsets[None, :, 0]).reshape(-1)
    py = (centers[:, None, 1] + offsets[None, :, 1]).reshape(-1)
    owner = np.repeat(front, len(offsets))
    inside = (px >= 0) & (px < w) & (py >= 0) & (py < h)
    px, py, owner = px[inside], py[inside], owner[inside]
    if len(owner) == 0:
        return RenderedFrame(rgb, mask, depth, winner, frame)

    pixel = py * w + px
    order = np.lexsort((particle_ids[owner], z[owner], pixel))
    pixel, owner = pixel[order], owner[order]
    _, first = np.unique(pixel, return_index=True)
    pixel, owner = pixel[first], owner[first]

    rows, cols = pixel // w, pixel % w
    rgb[rows, cols] = np.clip(np.rint(colors[owner] * 255.0), 0, 255).astype(np.uint8)
    mask[rows, cols] = object_ids[owner].astype(np.uint8)
    depth[rows, cols] = z[owner].astype(np.float32)
    winner[rows, cols] = owner
    return RenderedFrame(rgb, mask, depth, winner, frame)


def render_frame(traj: SimTrajectory, t: int, camera: CameraFrame, splat_radius: int) -> RenderedFrame:
    """Renders RGB, mask and depth of trajectory frame t.

    Args:
        traj: The simulated trajectory.
        t: 1-based frame index.
        camera: The frame's camera, conjugated into sim coordinates.
        splat_radius: Disc radius in pixels.
    """
    snap = traj.snapshot(t)
    return splat(snap.position, snap.color, snap.object_id, snap.particle_id, camera, splat_radius, frame=t)


def default_splat_radius(traj: SimTrajectory, camera: CameraFrame, spacing: float) -> int:
    """max(1, round(0.6 * fx * spacing / median depth)) over frame-1 particles."""
    _, z = camera.project(traj.snapshot(1).position)
    z = z[z > _NEAR_PLANE]
    if len(z) == 0:
        return 1
    return max(1, int(round(0.6 * camera.fx * spacing / float(np.median(z)))))


def visible_particles(
    positions: np.ndarray,
    object_ids: np.ndarray,
    camera: CameraFrame,
    render: RenderedFrame,
    tolerance: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Particles whose center pixel shows their own object at matching depth.

    Returns:
        `(visible, uv)`: a boolean per particle and the sub-pixel projections.
    """
    uv, z = camera.project(positions)
    visible = np.zeros(len(positions), dtype=bool)
    ok = z > _NEAR_PLANE
    centers = np.zeros((len(positions), 2), dtype=np.int64)
    centers[ok] = _center_pixels(uv[ok]).astype(np.int64)
    ok &= (centers[:, 0] >= 0) & (centers[:, 0] < camera.width) & (centers[:, 1] >= 0) & (centers[:, 1] < camera.height)
    idx = np.flatnonzero(ok)
    cx, cy = centers[idx, 0], centers[idx, 1]
    visible[idx] = (render.mask[cy, cx] == object_ids[idx]) & (z[idx] <= render.depth[cy, cx] + tolerance)
    return visible, uv


def compute_correspondences(
    traj: SimTrajectory,
    t: int,
    camera_ref: CameraFrame,
    camera_t: CameraFrame,
    splat_radius: int,
    tolerance: float,
    reference_frame: int = 1,
    render_ref: Optional[RenderedFrame] = None,
    render_t: Optional[RenderedFrame] = None,
) -> CorrespondenceSet:
    """Pairs every particle visible in frame t with its reference-frame pixel.

    Args:
        traj: The simulated trajectory.
        t: 1-based frame whose visible particles become entries.
        camera_ref: Sim-conjugated camera of the reference frame.
        camera_t: Sim-conjugated camera of frame t.
        splat_radius: Disc radius used for the visibility renders.
        tolerance: Depth slack in sim units for the visibility test.
        reference_frame: Frame the p entries refer to; 1 for texture targets,
            t + 1 for flow.
        render_ref, render_t: Optional precomputed renders of the two frames.

    Returns:
        The correspondence set of frame t.
    """
    if render_t is None:
        render_t = render_frame(traj, t, camera_t, splat_radius)
    if render_ref is None:
        render_ref = render_frame(traj, reference_frame, camera_ref, splat_radius)

    snap_t = traj.snapshot(t)
    snap_ref = traj.snapshot(reference_frame)
    vis_t, q = visible_particles(snap_t.position, snap_t.object_id, camera_t, render_t, tolerance)
    vis_ref, p = visible_particles(snap_ref.position, snap_ref.object_id, camera_ref, render_ref, tolerance)

    idx = np.flatnonzero(vis_t)
    idx = idx[np.argsort(snap_t.particle_id[idx], kind="stable")]
    flag = vis_ref[idx]
    p_ref = np.full((len(idx), 2), np.nan)
    p_ref[flag] = p[idx[flag]]
    return CorrespondenceSet(
        frame=t,
        reference_frame=reference_frame,
        particle_id=snap_t.particle_id[idx],
        object_id=snap_t.object_id[idx],
        p_ref=p_ref,
        q_t=q[idx],
        visible_in_reference=flag,
    )


# --- Sparse to dense ---

def densify_sparse(
    sample_xy: np.ndarray,
    sample_values: np.ndarray,
    query_xy: np.ndarray,
    k: int = 4,
    radius: float = np.inf,
    method: str = "idw_affine",
) -> Tuple[np.ndarray, np.ndarray]:
    """Interpolates sparse 2-vectors at query pixels.

    'idw' is inverse-squared-distance weighting of the k nearest samples
    within `radius`. 'idw_affine' fits a local affine model to the same
    neighbors with the same weights, falling back to 'idw' where the fit is
    ill-posed; it reproduces affine fields exactly. 'nearest' copies the
    closest sample.

    Returns:
        `(values, ok)`: (Q, 2) values and a mask of queries that had a
        neighbor within `radius`. Values are NaN where `ok` is False.
    """
    if method not in INTERPOLATION_METHODS:
        raise ValidationError(f"unknown interpolation method '{method}'")
    q = len(query_xy)
    values = np.full((q, 2), np.nan)
    if q == 0 or len(sample_xy) == 0:
        return values, np.zeros(q, dtype=bool)

    kk = 1 if method == "nearest" else min(k, len(sample_xy))
    dist, nb = cKDTree(sample_xy).query(query_xy, k=kk, distance_upper_bound=radius)
    dist = dist.reshape(q, kk)
    nb = nb.reshape(q, kk)
    present = np.isfinite(dist)
    ok = present[:, 0]
    safe_nb = np.where(present, nb, 0)
    neighbor_values = sample_values[safe_nb]

    if method == "nearest":
        values[ok] = neighbor_values[ok, 0]
        return values, ok

    exact = ok & (dist[:, 0] < 1e-9)
    weights = np.where(present, 1.0 / np.maximum(dist, 1e-9) ** 2, 0.0)
    idw = np.einsum("qk,qkc->qc", weights, neighbor_values) / np.maximum(weights.sum(axis=1, keepdims=True), 1e-300)
    values[ok] = idw[ok]

    if method == "idw_affine":
        local = sample_xy[safe_nb] - query_xy[:, None, :]
        design = np.concatenate([local, np.ones((q, kk, 1))], axis=2)
        normal = np.einsum("qk,qki,qkj->qij", weights, design, design)
        scale = np.einsum("qii->q", normal)
        det = np.linalg.det(normal)
        well_posed = ok & (np.sum(present, axis=1) >= 3) & (np.abs(det) > 1e-9 * np.maximum(scale, 1e-300) ** 3)
        if np.any(well_posed):
            rhs = np.einsum("qk,qki,qkc->qic", weights[well_posed], design[well_posed], neighbor_values[well_posed])
            beta = np.linalg.solve(normal[well_posed], rhs)
            values[well_posed] = beta[:, 2, :]

    values[exact] = neighbor_values[exact, 0]
    return values, ok


def correspondences_to_flow(
    corr: CorrespondenceSet,
    mask: np.ndarray,
    k: int = 4,
    method: str = "idw_affine",
) -> FlowField:
    """Densifies frame t -> reference-frame displacements inside a mask.

    Args:
        corr: Correspondences of frame t against reference frame t + 1.
        mask: (H, W) rendered mask of frame t; nonzero pixels get flow.
        k: Neighbors per pixel.
        method: See `densify_sparse`.

    Returns:
        A flow field with unknown values (1e10) outside the mask.
    """
    h, w = mask.shape
    flow = np.full((h, w, 2), UNKNOWN_FLOW, dtype=np.float32)
    use = corr.visible_in_reference
    rows, cols = np.nonzero(mask)
    if len(rows) and np.any(use):
        samples = corr.q_t[use]
        displacement = corr.p_ref[use] - corr.q_t[use]
        query = np.stack([cols, rows], axis=1).astype(np.float64)
        values, ok = densify_sparse(samples, displacement, query, k=k, method=method)
        flow[rows[ok], cols[ok]] = values[ok].astype(np.float32)
    return FlowField(flow=flow, source=corr.frame, target=corr.reference_frame)


def fuse_flow(sim_flow: FlowField, template_flow: FlowField, fg_mask: np.ndarray, dilation: int) -> FlowField:
    """Blends simulator flow on the foreground with template flow elsewhere.

    Inside the rendered mask the weight of the simulator flow is 1; it falls
    linearly to 0 across a ring `dilation` pixels wide. Simulator flow that is
    unknown near the mask is filled from the nearest known pixel first; if none
    is known, the ring keeps the template flow.

    Raises:
        FlowShapeError: If the flows and mask differ in resolution.
    """
    if sim_flow.flow.shape != template_flow.flow.shape or sim_flow.flow.shape[:2] != fg_mask.shape:
        raise FlowShapeError(
            f"resolution mismatch: sim {sim_flow.flow.shape[:2]}, template {template_flow.flow.shape[:2]}, mask {fg_mask.shape}"
        )
    template = template_flow.flow
    fg = np.asarray(fg_mask) > 0
    if not np.any(fg):
        return FlowField(flow=template.copy(), source=template_flow.source, target=template_flow.target)

    dist = distance_transform_edt(~fg)
    alpha = np.where(fg, 1.0, np.where(dist <= dilation, 1.0 - dist / (dilation + 1.0), 0.0))

    sim = sim_flow.flow
    known = sim_flow.valid
    if np.any(known) and not np.all(known):
        _, nearest = distance_transform_edt(~known, return_indices=True)
        sim = sim[nearest[0], nearest[1]]

    # Unknown simulator flow never enters the blend ring.
    sim_known = np.all(np.isfinite(sim) & (np.abs(sim) < _UNKNOWN_THRESHOLD), axis=2)
    blend = (alpha > 0.0) & (alpha < 1.0) & sim_known
    blended = template + alpha[..., None] * (sim - template)
    out = np.where((alpha == 1.0)[..., None], sim, np.where(blend[..., None], blended, template))
    return FlowField(flow=out.astype(np.float32), source=sim_flow.source, target=sim_flow.target)


# --- Middlebury .flo ---

def write_flow(field: FlowField, path: str):
    """Writes a Middlebury .flo file: magic, int32 width, int32 height, float32 u,v."""
    h, w = field.flow.shape[:2]
    with open(path, "wb") as f:
        np.array([FLO_MAGIC], dtype="<f4").tofile(f)
        np.array([w, h], dtype="<i4").tofile(f)
        np.ascontiguousarray(field.flow, dtype="<f4").tofile(f)


def load_template_flow(path: str) -> FlowField:
    """Reads a Middlebury .flo file.

    Raises:
        FlowFormatError: On a bad magic number, bad size or truncated payload.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12:
        raise FlowFormatError(f"{path}: truncated .flo header")
    magic = np.frombuffer(raw, dtype="<f4", count=1)[0]
    if magic != np.float32(FLO_MAGIC):
        raise FlowFormatError(f"{path}: bad .flo magic {magic!r}")
    w, h = (int(v) for v in np.frombuffer(raw, dtype="<i4", count=2, offset=4))
    if w <= 0 or h <= 0:
        raise FlowFormatError(f"{path}: invalid .flo size {w}x{h}")
    expected = 12 + 8 * w * h
    if len(raw) < expected:
        raise FlowFormatError(f"{path}: truncated .flo payload ({len(raw)} of {expected} bytes)")
    data = np.frombuffer(raw, dtype="<f4", count=2 * w * h, offset=12).reshape(h, w, 2).astype(np.float32)
    return FlowField(flow=data)


def flow_magnitude_stats(field: FlowField) -> dict:
    """Mean, max and percentiles of flow magnitude over known pixels."""
    mag = np.linalg.norm(field.flow[field.valid].astype(np.float64), axis=1)
    if len(mag) == 0:
        return {"valid_pixels": 0}
    p50, p90, p99 = np.percentile(mag, [50, 90, 99])
    return {
        "valid_pixels": int(len(mag)),
        "mean": float(mag.mean()),
        "max": float(mag.max()),
        "p50": float(p50), "p90": float(p90), "p99": float(p99),
    }
