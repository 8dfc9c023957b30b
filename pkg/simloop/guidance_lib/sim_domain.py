"""
The metric-to-simulation similarity transform.

The scene's bounding union, padded by the offset coefficient C, is mapped onto
the cube [0, 2]^3: x_sim = S * R @ x + t. Time is not rescaled, so velocities
and gravity scale by S and specific stiffness E / rho scales by S^2.
"""
import dataclasses
import warnings
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from .dynamics_init import ObjectInitState
from .exceptions import DomainError, SimloopWarning
from .material_map import MaterialParams
from .scene_bundle import CameraFrame

DOMAIN_SIZE = 2.0


@dataclass(frozen=True, eq=False)
class AxisAlignedBox:
    """An axis-aligned box; an empty box has lo = +inf and hi = -inf."""
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def empty(cls) -> "AxisAlignedBox":
        return cls(np.full(3, np.inf), np.full(3, -np.inf))

    @classmethod
    def from_points(cls, points: np.ndarray) -> "AxisAlignedBox":
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(points) == 0:
            return cls.empty()
        return cls(points.min(axis=0), points.max(axis=0))

    @property
    def is_empty(self) -> bool:
        return bool(np.any(self.lo > self.hi))

    @property
    def extent(self) -> np.ndarray:
        return np.zeros(3) if self.is_empty else self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def union(self, other: "AxisAlignedBox") -> "AxisAlignedBox":
        return AxisAlignedBox(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def corners(self) -> np.ndarray:
        if self.is_empty:
            return np.zeros((0, 3))
        return np.array([[x, y, z] for x in (self.lo[0], self.hi[0])
                         for y in (self.lo[1], self.hi[1])
                         for z in (self.lo[2], self.hi[2])])

    def to_dict(self) -> Dict[str, Any]:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True, eq=False)
class SimDomain:
    """The simulation domain and its transform from metric world coordinates.

    Attributes:
        scale: S, sim units per meter.
        rotation: World-to-sim rotation R.
        translation: t in sim units.
        offset_coefficient: The margin multiplier C.
        grid_resolution: Grid nodes n per axis.
        gravity_sim: Gravity in sim units / s^2.
        dt: Solver time step in seconds, set once materials are known.
    """
    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    offset_coefficient: float
    grid_resolution: int
    gravity_sim: np.ndarray
    dt: Optional[float] = None

    @property
    def dx(self) -> float:
        return DOMAIN_SIZE / self.grid_resolution

    def with_dt(self, dt: float) -> "SimDomain":
        return dataclasses.replace(self, dt=float(dt))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "S": self.scale,
            "R": self.rotation.reshape(-1).tolist(),
            "t": self.translation.tolist(),
            "C": self.offset_coefficient,
            "n": self.grid_resolution,
            "dx": self.dx,
            "gravity_sim": self.gravity_sim.tolist(),
            "dt": self.dt,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SimDomain":
        return cls(
            scale=float(data["S"]),
            rotation=np.asarray(data["R"], dtype=np.float64).reshape(3, 3),
            translation=np.asarray(data["t"], dtype=np.float64),
            offset_coefficient=float(data["C"]),
            grid_resolution=int(data["n"]),
            gravity_sim=np.asarray(data["gravity_sim"], dtype=np.float64),
            dt=None if data.get("dt") is None else float(data["dt"]),
        )


def bound_motion(state: ObjectInitState, horizon: float, gravity: Sequence[float]) -> AxisAlignedBox:
    """Box containing the ballistic sweep of an object over [0, horizon].

    Each axis follows x0 + v t + g t^2 / 2; its extremes lie at t = 0, at the
    horizon, or at the vertex t = -v / g when that falls inside the interval.
    The object's bounding radius pads the result. Collisions are ignored.
    """
    if not horizon > 0:
        raise DomainError(f"motion horizon must be > 0 (got {horizon})")
    g = np.asarray(gravity, dtype=np.float64)
    x0, v = state.position, state.velocity
    lo, hi = np.empty(3), np.empty(3)
    for axis in range(3):
        times = [0.0, horizon]
        if g[axis] != 0.0:
            t_vertex = -v[axis] / g[axis]
            if 0.0 < t_vertex < horizon:
                times.append(t_vertex)
        values = [x0[axis] + v[axis] * t + 0.5 * g[axis] * t * t for t in times]
        lo[axis], hi[axis] = min(values), max(values)
    return AxisAlignedBox(lo - state.radius, hi + state.radius)


def build_domain(
    fg_box: AxisAlignedBox,
    bg_box: AxisAlignedBox,
    offset_coefficient: float,
    grid_resolution: int,
    gravity: Sequence[float] = (0.0, -9.8, 0.0),
    rotation: Optional[np.ndarray] = None,
) -> SimDomain:
    """Sizes the simulation cube around the union of the scene boxes.

    With U the union and L = C times the largest side of U (after rotation),
    S = 2 / L and the center of U lands on (1, 1, 1).

    Raises:
        DomainError: If C < 1, a box is non-finite, or the union has zero extent.
    """
    if not offset_coefficient >= 1.0:
        raise DomainError(f"C ≥ 1 required (got {offset_coefficient})")
    for name, box in (("foreground", fg_box), ("background", bg_box)):
        if not box.is_empty and not (np.all(np.isfinite(box.lo)) and np.all(np.isfinite(box.hi))):
            raise DomainError(f"{name} box is not finite")
    rot = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64).reshape(3, 3)

    union = fg_box.union(bg_box)
    if union.is_empty:
        raise DomainError("degenerate domain: both scene boxes are empty")
    rotated = AxisAlignedBox.from_points(union.corners() @ rot.T)
    side = float(np.max(rotated.extent))
    if side <= 0.0:
        raise DomainError("degenerate domain: scene union has zero extent")

    scale = DOMAIN_SIZE / (offset_coefficient * side)
    translation = np.full(3, DOMAIN_SIZE / 2.0) - scale * (rot @ union.center)
    return SimDomain(
        scale=scale,
        rotation=rot,
        translation=translation,
        offset_coefficient=float(offset_coefficient),
        grid_resolution=int(grid_resolution),
        gravity_sim=scale * (rot @ np.asarray(gravity, dtype=np.float64)),
    )


def to_sim(domain: SimDomain, x: np.ndarray) -> np.ndarray:
    """Metric positions to sim units."""
    return domain.scale * np.asarray(x, dtype=np.float64) @ domain.rotation.T + domain.translation


def from_sim(domain: SimDomain, x_sim: np.ndarray) -> np.ndarray:
    return (np.asarray(x_sim, dtype=np.float64) - domain.translation) @ domain.rotation / domain.scale


def velocity_to_sim(domain: SimDomain, v: np.ndarray) -> np.ndarray:
    return domain.scale * np.asarray(v, dtype=np.float64) @ domain.rotation.T


def velocity_from_sim(domain: SimDomain, v_sim: np.ndarray) -> np.ndarray:
    return np.asarray(v_sim, dtype=np.float64) @ domain.rotation / domain.scale


def camera_to_sim(domain: SimDomain, camera: CameraFrame) -> CameraFrame:
    """Conjugates a camera by the domain similarity.

    Camera-space coordinates scale by S, which leaves pixel projections
    unchanged: R' = Rc R^T and t' = S tc - Rc R^T t.
    """
    rot = camera.rotation @ domain.rotation.T
    trans = domain.scale * camera.translation - rot @ domain.translation
    return CameraFrame(
        fx=camera.fx, fy=camera.fy, cx=camera.cx, cy=camera.cy,
        rotation=rot, translation=trans,
        width=camera.width, height=camera.height, frame=camera.frame,
    )


def outside_domain(points_sim: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Boolean mask of points outside [0, 2]^3."""
    p = np.asarray(points_sim)
    return np.any((p < -eps) | (p > DOMAIN_SIZE + eps), axis=1)


def require_inside(points_sim: np.ndarray, what: str) -> None:
    """Raises `DomainError` if any point lies outside the domain."""
    bad = outside_domain(points_sim)
    if np.any(bad):
        raise DomainError(f"{int(bad.sum())} {what} lie outside the [0, 2]^3 domain")


def clamp_to_domain(points_sim: np.ndarray, what: str) -> Tuple[np.ndarray, int]:
    """Clamps points into the domain, warning when any had to move."""
    bad = outside_domain(points_sim)
    count = int(bad.sum())
    if count:
        warnings.warn(f"{count} {what} outside the domain were clamped", SimloopWarning)
    return np.clip(points_sim, 0.0, DOMAIN_SIZE), count


def rescale_material(params: MaterialParams, scale: float) -> MaterialParams:
    """Material parameters in sim units: E scales by S^2, the rest pass through."""
    if not scale > 0:
        raise DomainError(f"S must be > 0 (got {scale})")
    return dataclasses.replace(params, youngs=params.youngs * scale * scale)
