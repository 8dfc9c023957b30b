"""
Initial state estimation for foreground objects.

Each object is placed from its frame-1 mask and depth, given a linear velocity
from the displacement of its masked centroid between two key frames, and an
angular velocity about the camera view axis from the in-plane rotation of its
feature matches. Out-of-plane rotation is not recoverable from 2D matches and
is left at zero.
"""
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

from .exceptions import (
    DegenerateMatchesError,
    InsufficientMatchesError,
    PlacementError,
    SimloopWarning,
    ValidationError,
)
from .scene_bundle import CameraFrame, FeatureMatchSet, ObjectMesh, SceneBundle

MIN_MASKED_PIXELS = 16
MIN_VALID_DEPTH_FRACTION = 0.2
MIN_ROTATION_MATCHES = 3
_PDIST_CAP = 2000


@dataclass
class ObjectInitState:
    """Initial rigid state of one object in metric world coordinates.

    Attributes:
        object_id: The object this state belongs to.
        position: World position of the object center.
        scale: Meters per mesh unit, > 0.
        orientation: Mesh-to-world rotation.
        velocity: Linear velocity v in m/s.
        angular_velocity: Angular velocity ω in rad/s, world frame.
        center: Rotation center c for per-point velocities.
        mesh_center: Bounding-box center of the mesh in mesh units.
        radius: Bounding radius of the placed mesh in meters.
        theta_deg: In-plane rotation between the match frames, for reports.
        residual_px: RMS residual of the rotation fit in pixels.
        radial_rate: Approach/recede rate in 1/s, when estimated.
        keyframes: The frame pair used for the linear velocity.
    """
    object_id: int
    position: np.ndarray
    scale: float
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    center: Optional[np.ndarray] = None
    mesh_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 0.0
    theta_deg: float = 0.0
    residual_px: float = 0.0
    radial_rate: Optional[float] = None
    keyframes: Tuple[int, int] = (1, 1)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.orientation = np.asarray(self.orientation, dtype=np.float64).reshape(3, 3)
        self.velocity = np.asarray(self.velocity, dtype=np.float64).reshape(3)
        self.angular_velocity = np.asarray(self.angular_velocity, dtype=np.float64).reshape(3)
        self.center = self.position.copy() if self.center is None else np.asarray(self.center, dtype=np.float64).reshape(3)
        self.mesh_center = np.asarray(self.mesh_center, dtype=np.float64).reshape(3)
        if not self.scale > 0:
            raise ValidationError(f"object {self.object_id}: scale must be > 0 (got {self.scale})")
        vectors = (self.position, self.velocity, self.angular_velocity, self.center, self.orientation)
        if not all(np.all(np.isfinite(v)) for v in vectors):
            raise ValidationError(f"object {self.object_id}: initial state has non-finite values")

    def to_dict(self) -> Dict[str, Any]:
        out = {
            "object_id": self.object_id,
            "position": self.position.tolist(),
            "scale": self.scale,
            "orientation": self.orientation.reshape(-1).tolist(),
            "v": self.velocity.tolist(),
            "omega": self.angular_velocity.tolist(),
            "center": self.center.tolist(),
            "mesh_center": self.mesh_center.tolist(),
            "radius": self.radius,
            "theta_deg": self.theta_deg,
            "residual_px": self.residual_px,
            "keyframes": list(self.keyframes),
        }
        if self.radial_rate is not None:
            out["radial_rate"] = self.radial_rate
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ObjectInitState":
        return cls(
            object_id=int(data["object_id"]),
            position=data["position"],
            scale=float(data["scale"]),
            orientation=np.asarray(data.get("orientation", np.eye(3).reshape(-1))).reshape(3, 3),
            velocity=data["v"],
            angular_velocity=data["omega"],
            center=data["center"],
            mesh_center=data.get("mesh_center", [0.0, 0.0, 0.0]),
            radius=float(data.get("radius", 0.0)),
            theta_deg=float(data.get("theta_deg", 0.0)),
            residual_px=float(data.get("residual_px", 0.0)),
            radial_rate=data.get("radial_rate"),
            keyframes=tuple(data.get("keyframes", (1, 1))),
        )


@dataclass(frozen=True)
class RotationEstimate:
    """Result of the 2D Procrustes fit.

    Attributes:
        theta: Rotation angle in radians, positive from image +x toward +y.
        centroid: Mean of the frame-a match points in pixels.
        residual: RMS distance in pixels between rotated and target points.
        scale: Least-squares similarity scale of the centered point sets.
    """
    theta: float
    centroid: np.ndarray
    residual: float
    scale: float


def _diameter(points: np.ndarray) -> float:
    """Largest pairwise distance of a point set."""
    if len(points) < 2:
        return 0.0
    candidates = points
    if len(points) > _PDIST_CAP:
        try:
            candidates = points[ConvexHull(points).vertices]
        except (QhullError, ValueError):
            candidates = points[:: int(math.ceil(len(points) / _PDIST_CAP))]
    return float(pdist(candidates).max())


def masked_world_points(bundle: SceneBundle, object_id: int, t: int) -> np.ndarray:
    """Back-projects the masked pixels of one object in frame t.

    Raises:
        PlacementError: If the mask has fewer than 16 pixels or fewer than
            20% of them carry valid depth.
    """
    depth = bundle.depth(t)
    masked = bundle.mask(t).labels == object_id
    count = int(masked.sum())
    if count < MIN_MASKED_PIXELS:
        raise PlacementError(f"placement failure: object {object_id} covers {count} pixels in frame {t} (need {MIN_MASKED_PIXELS})")
    keep = masked & depth.valid
    if keep.sum() < MIN_VALID_DEPTH_FRACTION * count:
        raise PlacementError(
            f"placement failure: object {object_id} has valid depth on {int(keep.sum())} of {count} masked pixels in frame {t}"
        )
    v, u = np.nonzero(keep)
    return bundle.camera(t).back_project(np.stack([u, v], axis=1).astype(np.float64), depth.depth[v, u])


def place_object(bundle: SceneBundle, object_id: int) -> Tuple[np.ndarray, float, np.ndarray]:
    """Places an object from its frame-1 mask and depth.

    The position is the centroid of the back-projected masked pixels and the
    scale matches the mesh's diameter to the point set's diameter. The mesh is
    assumed to be reconstructed in its frame-1 pose, so orientation is identity.

    Returns:
        A tuple `(position, scale, orientation)`.

    Raises:
        PlacementError: On too few masked pixels, too little valid depth, or
            a degenerate point set.
    """
    points = masked_world_points(bundle, object_id, 1)
    mesh_diameter = _diameter(bundle.meshes[object_id].vertices)
    point_diameter = _diameter(points)
    if mesh_diameter <= 0 or point_diameter <= 0:
        raise PlacementError(f"placement failure: object {object_id} has a degenerate extent")
    return points.mean(axis=0), point_diameter / mesh_diameter, np.eye(3)


def estimate_linear_velocity(
    bundle: SceneBundle,
    object_id: int,
    frame_a: int,
    frame_b: int,
    dt: Optional[float] = None,
) -> np.ndarray:
    """Displacement of the masked centroid from frame a to frame b over Δt.

    Args:
        dt: Real-time interval in seconds. Defaults to |b - a| / fps.

    Returns:
        The velocity in m/s.
    """
    if dt is None:
        dt = abs(frame_b - frame_a) / bundle.fps
    if not dt > 0:
        raise ValidationError(f"object {object_id}: Δt must be > 0 for frames ({frame_a}, {frame_b})")
    ca = masked_world_points(bundle, object_id, frame_a).mean(axis=0)
    cb = masked_world_points(bundle, object_id, frame_b).mean(axis=0)
    return (cb - ca) / dt


def estimate_rotation(matches: FeatureMatchSet) -> RotationEstimate:
    """Fits the in-plane rotation mapping frame-a matches to frame-b matches.

    Both point sets are centered on their own means, which absorbs any
    translation; the angle is the closed-form 2D orthogonal Procrustes
    solution.

    Raises:
        InsufficientMatchesError: With fewer than three matches.
        DegenerateMatchesError: If all points of either frame coincide.
    """
    if len(matches) < MIN_ROTATION_MATCHES:
        raise InsufficientMatchesError(
            f"insufficient matches: object {matches.object_id} has {len(matches)} (need {MIN_ROTATION_MATCHES})"
        )
    centroid = matches.points_a.mean(axis=0)
    a = matches.points_a - centroid
    b = matches.points_b - matches.points_b.mean(axis=0)
    norm_a = float(np.sum(a * a))
    if norm_a <= 1e-12 or float(np.sum(b * b)) <= 1e-12:
        raise DegenerateMatchesError(f"degenerate matches: object {matches.object_id} points coincide")

    cross = float(np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]))
    dot = float(np.sum(a * b))
    theta = math.atan2(cross, dot)
    c, s = math.cos(theta), math.sin(theta)
    rotated = a @ np.array([[c, s], [-s, c]])
    residual = float(np.sqrt(np.mean(np.sum((rotated - b) ** 2, axis=1))))
    scale = float(np.sum(b * rotated)) / norm_a
    return RotationEstimate(theta=theta, centroid=centroid, residual=residual, scale=scale)


def rotation_to_angular_velocity(theta: float, dt: float, camera: CameraFrame) -> np.ndarray:
    """ω = (θ / Δt) times the camera view axis in world coordinates."""
    if not dt > 0:
        raise ValidationError(f"Δt must be > 0 (got {dt})")
    return (theta / dt) * camera.view_axis_world


def per_point_velocity(state: ObjectInitState, points: np.ndarray) -> np.ndarray:
    """Rigid-body velocity field v + ω × (x − c) at the given points."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return state.velocity + np.cross(state.angular_velocity, points - state.center)


def place_vertices(state: ObjectInitState, mesh: ObjectMesh) -> np.ndarray:
    """Mesh vertices in world coordinates under the state's similarity transform."""
    return state.position + state.scale * (mesh.vertices - state.mesh_center) @ state.orientation.T


def default_keyframes(fps: float, num_frames: int, interval: float) -> Tuple[int, int]:
    """(1, 1 + round(fps · interval)), clamped to the video."""
    return 1, int(min(num_frames, 1 + round(fps * interval)))


def estimate_object_state(
    bundle: SceneBundle,
    object_id: int,
    keyframes: Optional[Tuple[int, int]] = None,
    keyframe_interval: float = 0.2,
    estimate_scale: bool = False,
) -> ObjectInitState:
    """Runs placement, linear and angular velocity estimation for one object.

    Args:
        bundle: The loaded bundle.
        object_id: The object to estimate.
        keyframes: Frame pair for the linear velocity. Defaults to
            `default_keyframes`.
        keyframe_interval: Seconds between default key frames.
        estimate_scale: If True, report the radial rate from the match scale.

    Returns:
        The object's `ObjectInitState`.
    """
    position, scale, orientation = place_object(bundle, object_id)
    mesh = bundle.meshes[object_id]
    mesh_center = 0.5 * (mesh.vertices.min(axis=0) + mesh.vertices.max(axis=0))
    radius = scale * float(np.max(np.linalg.norm(mesh.vertices - mesh_center, axis=1)))

    frame_a, frame_b = keyframes or default_keyframes(bundle.fps, bundle.num_frames, keyframe_interval)
    matches = bundle.matches[object_id]
    if frame_a == frame_b:
        warnings.warn(f"object {object_id}: video has a single frame; linear velocity set to zero", SimloopWarning)
        velocity = np.zeros(3)
    else:
        dt = matches.dt if {frame_a, frame_b} == {matches.frame_a, matches.frame_b} and len(matches) else None
        velocity = estimate_linear_velocity(bundle, object_id, frame_a, frame_b, dt=dt)

    omega = np.zeros(3)
    theta = residual = 0.0
    radial_rate = None
    if len(matches) == 0:
        warnings.warn(f"object {object_id}: no feature matches; angular velocity set to zero", SimloopWarning)
    else:
        rot = estimate_rotation(matches)
        theta, residual = rot.theta, rot.residual
        omega = rotation_to_angular_velocity(rot.theta, matches.dt, bundle.camera(matches.frame_a))
        if estimate_scale:
            radial_rate = math.log(max(rot.scale, 1e-12)) / matches.dt

    return ObjectInitState(
        object_id=object_id,
        position=position,
        scale=scale,
        orientation=orientation,
        velocity=velocity,
        angular_velocity=omega,
        center=position,
        mesh_center=mesh_center,
        radius=radius,
        theta_deg=math.degrees(theta),
        residual_px=residual,
        radial_rate=radial_rate,
        keyframes=(frame_a, frame_b),
    )
