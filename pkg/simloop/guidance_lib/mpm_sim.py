"""
MLS-MPM forward simulation of elastic solids in the [0, 2]^3 domain.

Particles carry position, velocity, deformation gradient F and the APIC affine
matrix C. Each step scatters mass and momentum to a quadratic B-spline stencil
(P2G) with the fixed-corotated stress folded into the affine term, updates grid
velocities under gravity, collider contact and domain boundaries, then gathers
velocities back (G2P).

The grid is stored sparsely: only nodes touched by a particle stencil exist,
keyed by their flat index. Reductions sort contributions by node key and sum
them with `np.bincount`, which fixes the summation order and makes every run
bit-identical for identical inputs.
"""
import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.ndimage import binary_dilation, binary_fill_holes, generate_binary_structure
from scipy.spatial import cKDTree
from tqdm import tqdm

from .dynamics_init import ObjectInitState, per_point_velocity, place_vertices
from .exceptions import (
    CFLViolationError,
    SimulationBlowUpError,
    SimloopWarning,
    ValidationError,
)
from .material_map import MaterialParams
from .scene_bundle import BackgroundPointCloud, ObjectMesh
from .sim_domain import (
    DOMAIN_SIZE,
    SimDomain,
    clamp_to_domain,
    from_sim,
    require_inside,
    rescale_material,
    to_sim,
    velocity_to_sim,
)

DEFAULT_CFL = 0.4
BOUNDARY_NODES = 3
# Share of the outward velocity kept, reversed, by a particle clamped at a domain face.
BOUNDARY_RESTITUTION = 0.0
NORMAL_NEIGHBORS = 12
_STENCIL = np.array([[i, j, k] for i in range(3) for j in range(3) for k in range(3)], dtype=np.int64)
_RAY_DIRECTION = np.array([0.5413, 0.6786, 0.4964]) / np.linalg.norm([0.5413, 0.6786, 0.4964])
# Point-triangle pairs per chunk of the inside test.
_RAY_BUDGET = 2_000_000


@dataclass(eq=False)
class ParticleSet:
    """Simulation particles in sim units.

    Material columns are per particle so several objects can share one set.
    Particle IDs are `object_id << 32 | local index` and never change.
    """
    position: np.ndarray
    velocity: np.ndarray
    mass: np.ndarray
    volume: np.ndarray
    F: np.ndarray
    C: np.ndarray
    color: np.ndarray
    object_id: np.ndarray
    particle_id: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    youngs: np.ndarray
    density: np.ndarray
    damping: np.ndarray
    friction: np.ndarray

    def __len__(self) -> int:
        return len(self.position)

    def copy(self) -> "ParticleSet":
        return ParticleSet(**{f.name: getattr(self, f.name).copy() for f in dataclasses.fields(self)})

    @classmethod
    def concatenate(cls, sets: Sequence["ParticleSet"]) -> "ParticleSet":
        if not sets:
            raise ValidationError("no particle sets to simulate")
        merged = cls(**{f.name: np.concatenate([getattr(s, f.name) for s in sets])
                        for f in dataclasses.fields(cls)})
        if len(np.unique(merged.particle_id)) != len(merged):
            raise ValidationError("particle IDs are not unique across objects")
        return merged

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.mass))


@dataclass(eq=False)
class Grid:
    """Sparse grid state of the last P2G: active node keys, mass and velocity."""
    resolution: int
    node_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    mass: np.ndarray = field(default_factory=lambda: np.zeros(0))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    @property
    def dx(self) -> float:
        return DOMAIN_SIZE / self.resolution

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.mass))

    def node_coords(self) -> np.ndarray:
        n = self.resolution
        return np.stack(np.unravel_index(self.node_index, (n, n, n)), axis=1)


@dataclass(eq=False)
class Collider:
    """Static background occupancy on grid nodes.

    Attributes:
        grid_resolution: n, the occupancy is conceptually n^3.
        node_index: Sorted flat indices of occupied nodes.
        normals: Unit surface normal per occupied node.
        friction: Coulomb coefficient of the background.
    """
    grid_resolution: int
    node_index: np.ndarray
    normals: np.ndarray
    friction: float

    @classmethod
    def empty(cls, grid_resolution: int, friction: float = 0.0) -> "Collider":
        return cls(grid_resolution, np.zeros(0, dtype=np.int64), np.zeros((0, 3)), friction)

    @property
    def num_occupied(self) -> int:
        return len(self.node_index)

    @property
    def is_empty(self) -> bool:
        return self.num_occupied == 0

    @property
    def occupancy(self) -> np.ndarray:
        n = self.grid_resolution
        occ = np.zeros(n * n * n, dtype=bool)
        occ[self.node_index] = True
        return occ.reshape(n, n, n)


@dataclass(frozen=True, eq=False)
class ParticleSnapshot:
    """Particle state at one output frame."""
    particle_id: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    color: np.ndarray
    object_id: np.ndarray

    def __len__(self) -> int:
        return len(self.particle_id)


@dataclass(eq=False)
class SimTrajectory:
    """Per-frame particle snapshots aligned with the video frame times."""
    snapshots: List[ParticleSnapshot]
    times: np.ndarray
    fps: float

    def __post_init__(self):
        if not self.snapshots:
            raise ValidationError("a trajectory needs at least one snapshot")
        ids = self.snapshots[0].particle_id
        for i, snap in enumerate(self.snapshots[1:], start=2):
            if len(snap) != len(ids) or not np.array_equal(snap.particle_id, ids):
                raise ValidationError(f"snapshot {i} does not carry the particle IDs of snapshot 1")

    @property
    def num_frames(self) -> int:
        return len(self.snapshots)

    @property
    def num_particles(self) -> int:
        return len(self.snapshots[0])

    def snapshot(self, t: int) -> ParticleSnapshot:
        """Snapshot of 1-based frame t."""
        if not 1 <= t <= self.num_frames:
            raise ValidationError(f"frame {t} outside trajectory 1..{self.num_frames}")
        return self.snapshots[t - 1]


# --- Materials ---

def prepare_material(params: MaterialParams, domain: SimDomain, youngs_clamp: float) -> MaterialParams:
    """Clamps Young's modulus to `youngs_clamp` and rescales to sim units."""
    if params.youngs > youngs_clamp:
        warnings.warn(
            f"Young's modulus {params.youngs:.3g} Pa clamped to {youngs_clamp:.3g} Pa (quasi-rigid regime)",
            SimloopWarning,
        )
        params = dataclasses.replace(params, youngs=float(youngs_clamp))
    return rescale_material(params, domain.scale)


def fixed_corotated_stress(F: np.ndarray, mu: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Kirchhoff stress 2 mu (F - R) F^T + lam J (J - 1) I, batched over particles."""
    U, sig, Vt = np.linalg.svd(F)
    flip_u = np.linalg.det(U) < 0
    U[flip_u, :, 2] *= -1.0
    sig[flip_u, 2] *= -1.0
    flip_v = np.linalg.det(Vt) < 0
    Vt[flip_v, 2, :] *= -1.0
    sig[flip_v, 2] *= -1.0
    R = U @ Vt
    J = np.prod(sig, axis=1)
    tau = 2.0 * mu[:, None, None] * (F - R) @ np.swapaxes(F, 1, 2)
    tau += (lam * J * (J - 1.0))[:, None, None] * np.eye(3)
    return tau


# --- Time step ---

def stable_dt(particles: ParticleSet, dx: float, cfl: float = DEFAULT_CFL) -> float:
    """cfl * dx / (v_max + sqrt(E / rho)), the bound every step must respect."""
    v_max = float(np.max(np.linalg.norm(particles.velocity, axis=1), initial=0.0))
    c_wave = float(np.max(np.sqrt(particles.youngs / particles.density), initial=0.0))
    return cfl * dx / (v_max + c_wave)


def substep_dt(particles: ParticleSet, dx: float, cfl: float = DEFAULT_CFL) -> float:
    """Step size actually used: the same bound with the dilatational wave speed.

    sqrt((lambda + 2 mu) / rho) >= sqrt(E / rho) for every admissible Poisson
    ratio, so this never exceeds `stable_dt`.
    """
    v_max = float(np.max(np.linalg.norm(particles.velocity, axis=1), initial=0.0))
    c_p = float(np.max(np.sqrt((particles.lam + 2.0 * particles.mu) / particles.density), initial=0.0))
    return cfl * dx / (v_max + c_p)


# --- One step ---

def _stencil(position: np.ndarray, dx: float):
    xi = position / dx
    base = np.floor(xi - 0.5).astype(np.int64)
    fx = xi - base
    w = np.stack([0.5 * (1.5 - fx) ** 2, 0.75 - (fx - 1.0) ** 2, 0.5 * (fx - 0.5) ** 2], axis=1)
    weight = w[:, _STENCIL[:, 0], 0] * w[:, _STENCIL[:, 1], 1] * w[:, _STENCIL[:, 2], 2]
    dpos = (_STENCIL[None, :, :] - fx[:, None, :]) * dx
    nodes = base[:, None, :] + _STENCIL[None, :, :]
    return nodes, weight, dpos


def _project_contact(v: np.ndarray, normal: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Separating Coulomb projection: drop the inward normal part, scale the tangent."""
    vn = np.sum(v * normal, axis=1)
    approaching = vn < 0.0
    vt = v - vn[:, None] * normal
    vt_norm = np.linalg.norm(vt, axis=1)
    factor = np.zeros_like(vn)
    moving = vt_norm > 0.0
    with np.errstate(invalid="ignore"):
        factor[moving] = np.maximum(0.0, 1.0 + mu[moving] * vn[moving] / vt_norm[moving])
    factor = np.nan_to_num(factor, nan=0.0)
    return np.where(approaching[:, None], vt * factor[:, None], v)


def _apply_boundary(vel: np.ndarray, coords: np.ndarray, n: int, boundary_friction: Optional[float]):
    for axis in range(3):
        low = coords[:, axis] < BOUNDARY_NODES
        high = coords[:, axis] >= n - BOUNDARY_NODES
        if boundary_friction is None:
            vel[low | high] = 0.0
            continue
        for side, sign in ((low, 1.0), (high, -1.0)):
            if np.any(side):
                normal = np.zeros((int(side.sum()), 3))
                normal[:, axis] = sign
                mu = np.full(len(normal), float(boundary_friction))
                vel[side] = _project_contact(vel[side], normal, mu)


def _clamp_particles(particles: ParticleSet, dx: float, restitution: float = BOUNDARY_RESTITUTION):
    """Clamps positions into [dx, 2 - 2dx] and reflects the outward velocity.

    The outward component is reversed and scaled by `restitution`; the default
    of zero leaves clamped particles at rest against the face.
    """
    lo, hi = dx, DOMAIN_SIZE - 2.0 * dx
    below = particles.position < lo
    above = particles.position > hi
    particles.position = np.clip(particles.position, lo, hi)
    outward = (below & (particles.velocity < 0)) | (above & (particles.velocity > 0))
    particles.velocity[outward] *= -restitution


def _check_finite(particles: ParticleSet, step_index: int):
    for name in ("position", "velocity", "F", "C"):
        if not np.all(np.isfinite(getattr(particles, name))):
            raise SimulationBlowUpError(f"non-finite particle {name}", step=step_index)
    if np.any(np.linalg.det(particles.F) <= 0.0):
        raise SimulationBlowUpError("inverted deformation gradient (det F <= 0)", step=step_index)


def step(
    particles: ParticleSet,
    grid: Grid,
    collider: Collider,
    domain: SimDomain,
    dt: float,
    cfl: float = DEFAULT_CFL,
    boundary_friction: Optional[float] = None,
    step_index: int = 0,
) -> ParticleSet:
    """Advances particles by one symplectic-Euler MLS-MPM step.

    Args:
        particles: Particle state, updated in place and returned.
        grid: Receives the grid state of this step.
        collider: Static background; may be empty.
        domain: Supplies n, dx and gravity in sim units.
        dt: Step size in seconds.
        cfl: CFL number of the stability bound.
        boundary_friction: Coulomb coefficient at the domain faces; None
            makes boundary nodes sticky.
        step_index: Global step counter, used in blow-up reports.

    Returns:
        The updated particles.

    Raises:
        CFLViolationError: If dt exceeds `stable_dt` before stepping.
        SimulationBlowUpError: If the new state is non-finite or inverted.
    """
    n, dx = domain.grid_resolution, domain.dx
    limit = stable_dt(particles, dx, cfl)
    if dt > limit * (1.0 + 1e-12):
        raise CFLViolationError(f"time step {dt:.3e} s exceeds the stability bound {limit:.3e} s at step {step_index}")

    _clamp_particles(particles, dx)
    num = len(particles)

    # P2G
    nodes, weight, dpos = _stencil(particles.position, dx)
    flat = (nodes[..., 0] * n + nodes[..., 1]) * n + nodes[..., 2]
    stress = fixed_corotated_stress(particles.F, particles.mu, particles.lam)
    affine = (-dt * 4.0 / (dx * dx)) * particles.volume[:, None, None] * stress
    affine += particles.mass[:, None, None] * particles.C
    momentum = weight[..., None] * (
        particles.mass[:, None, None] * particles.velocity[:, None, :]
        + np.einsum("pij,poj->poi", affine, dpos)
    )
    keys, inverse = np.unique(flat.reshape(-1), return_inverse=True)
    inverse = inverse.reshape(-1)
    m = len(keys)
    node_mass = np.bincount(inverse, weights=(weight * particles.mass[:, None]).reshape(-1), minlength=m)
    node_mom = np.stack(
        [np.bincount(inverse, weights=momentum[..., i].reshape(-1), minlength=m) for i in range(3)], axis=1
    )

    # Grid update
    active = node_mass > 0.0
    vel = np.zeros_like(node_mom)
    vel[active] = node_mom[active] / node_mass[active, None]
    vel[active] += dt * domain.gravity_sim

    if not collider.is_empty:
        slot = np.clip(np.searchsorted(collider.node_index, keys), 0, collider.num_occupied - 1)
        hit = (collider.node_index[slot] == keys) & active
        if np.any(hit):
            node_mu = np.bincount(
                inverse, weights=(weight * (particles.mass * particles.friction)[:, None]).reshape(-1), minlength=m
            )
            mu = np.sqrt(collider.friction * node_mu[hit] / node_mass[hit])
            vel[hit] = _project_contact(vel[hit], collider.normals[slot[hit]], mu)

    coords = np.stack(np.unravel_index(keys, (n, n, n)), axis=1)
    _apply_boundary(vel, coords, n, boundary_friction)
    vel[~active] = 0.0

    grid.resolution = n
    grid.node_index, grid.mass, grid.velocity = keys, node_mass, vel

    # G2P
    gathered = vel[inverse].reshape(num, _STENCIL.shape[0], 3)
    new_v = np.einsum("po,poi->pi", weight, gathered)
    new_c = (4.0 / (dx * dx)) * np.einsum("po,poi,poj->pij", weight, gathered, dpos)
    particles.position = particles.position + dt * new_v
    particles.F = (np.eye(3) + dt * new_c) @ particles.F
    particles.C = new_c
    particles.velocity = new_v * particles.damping[:, None]
    _clamp_particles(particles, dx)

    _check_finite(particles, step_index)
    return particles


# --- Trajectories ---

def snapshot(particles: ParticleSet) -> ParticleSnapshot:
    return ParticleSnapshot(
        particle_id=particles.particle_id,
        position=particles.position.copy(),
        velocity=particles.velocity.copy(),
        color=particles.color,
        object_id=particles.object_id,
    )


def simulate(
    objects: Sequence[ParticleSet],
    collider: Collider,
    domain: SimDomain,
    duration: float,
    fps: float,
    cfl: float = DEFAULT_CFL,
    boundary_friction: Optional[float] = None,
    progress: bool = False,
) -> SimTrajectory:
    """Runs the solver and records one snapshot per output frame.

    Each frame interval 1/fps is split into equal substeps no larger than the
    stable step (or `domain.dt` when set), so snapshots land exactly on frame
    times. The initial state is the first snapshot.

    Args:
        objects: Seeded particles of every object.
        collider: Static background.
        domain: The simulation domain.
        duration: Seconds to simulate, > 0.
        fps: Output frame rate.
        cfl: CFL number.
        boundary_friction: See `step`.
        progress: Shows a tqdm bar when True.

    Returns:
        A trajectory with round(duration * fps) + 1 snapshots.

    Raises:
        SimulationBlowUpError: Carrying the 1-based output frame being computed.
    """
    if not duration > 0:
        raise ValidationError(f"duration must be > 0 (got {duration})")
    particles = ParticleSet.concatenate(list(objects)).copy()
    grid = Grid(domain.grid_resolution)
    frame_time = 1.0 / fps
    num_frames = int(round(duration * fps))

    snapshots = [snapshot(particles)]
    step_index = 0
    for frame in tqdm(range(1, num_frames + 1), desc="Simulating", unit="frame", disable=not progress):
        remaining = frame_time
        while remaining > 0.0:
            # The remainder of the frame is split evenly; the last substep consumes it exactly.
            dt_max = domain.dt if domain.dt is not None else substep_dt(particles, domain.dx, cfl)
            dt = remaining / max(1, math.ceil(remaining / dt_max - 1e-9))
            try:
                step(particles, grid, collider, domain, dt, cfl=cfl,
                     boundary_friction=boundary_friction, step_index=step_index)
            except SimulationBlowUpError as e:
                raise SimulationBlowUpError(e.reason, step=e.step, frame=frame + 1) from e
            remaining = 0.0 if dt >= remaining else remaining - dt
            step_index += 1
        snapshots.append(snapshot(particles))

    return SimTrajectory(snapshots=snapshots, times=np.arange(num_frames + 1) / fps, fps=float(fps))


# --- Seeding ---

def _sample_surface(vertices: np.ndarray, faces: np.ndarray, spacing: float) -> np.ndarray:
    """Barycentric samples on every triangle, at most `spacing` apart along edges."""
    samples = [vertices]
    if len(faces) == 0:
        return vertices
    tri = vertices[faces]
    edges = np.max(np.linalg.norm(tri - np.roll(tri, 1, axis=1), axis=2), axis=1)
    subdiv = np.maximum(1, np.ceil(edges / spacing)).astype(np.int64)
    for s in np.unique(subdiv):
        sel = tri[subdiv == s]
        i, j = np.meshgrid(np.arange(s + 1), np.arange(s + 1), indexing="ij")
        keep = (i + j) <= s
        a, b = i[keep] / s, j[keep] / s
        c = 1.0 - a - b
        pts = a[None, :, None] * sel[:, None, 0] + b[None, :, None] * sel[:, None, 1] + c[None, :, None] * sel[:, None, 2]
        samples.append(pts.reshape(-1, 3))
    return np.concatenate(samples)


def _inside_mesh(points: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Ray-parity inside test (Moller-Trumbore) along a fixed oblique ray."""
    d = _RAY_DIRECTION
    v0 = tri[:, 0]
    e1 = tri[:, 1] - v0
    e2 = tri[:, 2] - v0
    pvec = np.cross(d, e2)
    det = np.sum(e1 * pvec, axis=1)
    usable = np.abs(det) > 1e-14
    v0, e1, e2, pvec, det = v0[usable], e1[usable], e2[usable], pvec[usable], det[usable]
    inv_det = 1.0 / det

    inside = np.zeros(len(points), dtype=bool)
    chunk = max(1, _RAY_BUDGET // max(1, len(v0)))
    for start in range(0, len(points), chunk):
        p = points[start:start + chunk]
        tvec = p[:, None, :] - v0[None, :, :]
        u = np.sum(tvec * pvec[None], axis=2) * inv_det
        qvec = np.cross(tvec, e1[None, :, :])
        v = (qvec @ d) * inv_det
        t = np.sum(qvec * e2[None], axis=2) * inv_det
        hits = (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > 0.0)
        inside[start:start + chunk] = (hits.sum(axis=1) % 2) == 1
    return inside


def _voxel_fill(vertices: np.ndarray, faces: np.ndarray, spacing: float):
    """Lattice cells covering a mesh volume: (cell indices, lattice origin)."""
    origin = vertices.min(axis=0) - 2.0 * spacing
    dims = np.ceil((vertices.max(axis=0) - origin) / spacing).astype(np.int64) + 3
    surface = np.zeros(tuple(dims), dtype=bool)
    samples = _sample_surface(vertices, faces, spacing / 3.0)
    cells = np.clip(np.floor((samples - origin) / spacing).astype(np.int64), 0, dims - 1)
    surface[cells[:, 0], cells[:, 1], cells[:, 2]] = True
    surface = binary_dilation(surface, structure=generate_binary_structure(3, 1))
    filled = binary_fill_holes(surface)

    if len(faces) == 0:
        return np.argwhere(filled), origin

    band = np.argwhere(surface)
    centers = origin + (band + 0.5) * spacing
    inside_band = band[_inside_mesh(centers, vertices[faces])]
    interior = np.argwhere(filled & ~surface)
    cells = np.concatenate([interior, inside_band])
    if len(cells) == 0:
        # Open or very thin mesh: keep the surface band.
        cells = band
    order = np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0]))
    return cells[order], origin


def seed_particles(
    mesh: ObjectMesh,
    state: ObjectInitState,
    domain: SimDomain,
    params: MaterialParams,
    ppc: int,
    seed: int = 0,
) -> ParticleSet:
    """Fills the placed mesh volume with jittered-lattice particles.

    The lattice spacing is dx / ppc^(1/3), so each grid cell holds about ppc
    particles. Velocities follow the rigid field of `state`, colors come from
    the nearest mesh vertex.

    Args:
        mesh: The object mesh in mesh units.
        state: Placement and velocity of the object.
        domain: The simulation domain.
        params: Material parameters already in sim units.
        ppc: Particles per cell, >= 1.
        seed: Jitter seed; combined with the object ID.

    Returns:
        The object's particles.

    Raises:
        ValidationError: If no particle could be seeded.
        DomainError: If a particle falls outside the domain.
    """
    if ppc < 1:
        raise ValidationError(f"ppc must be ≥ 1 (got {ppc})")
    obj = mesh.object_id
    spacing = domain.dx / ppc ** (1.0 / 3.0)
    sim_vertices = to_sim(domain, place_vertices(state, mesh))

    cells, origin = _voxel_fill(sim_vertices, mesh.faces, spacing)
    if len(cells) == 0:
        raise ValidationError(f"object {obj}: zero particles seeded")
    rng = np.random.default_rng([seed, obj])
    jitter = rng.uniform(-0.25, 0.25, size=cells.shape)
    position = origin + (cells + 0.5 + jitter) * spacing
    require_inside(position, f"particles of object {obj}")

    count = len(position)
    velocity = velocity_to_sim(domain, per_point_velocity(state, from_sim(domain, position)))
    _, nearest = cKDTree(sim_vertices).query(position)
    volume = spacing ** 3

    def column(value):
        return np.full(count, float(value))

    return ParticleSet(
        position=position,
        velocity=velocity,
        mass=column(params.density * volume),
        volume=column(volume),
        F=np.tile(np.eye(3), (count, 1, 1)),
        C=np.zeros((count, 3, 3)),
        color=mesh.colors[nearest].astype(np.float64),
        object_id=np.full(count, obj, dtype=np.int32),
        particle_id=(np.uint64(obj) << np.uint64(32)) | np.arange(count, dtype=np.uint64),
        mu=column(params.lame_mu),
        lam=column(params.lame_lambda),
        youngs=column(params.youngs),
        density=column(params.density),
        damping=column(params.damping),
        friction=column(params.friction),
    )


# --- Collider ---

def estimate_normals(points: np.ndarray, queries: np.ndarray, toward: np.ndarray, k: int = NORMAL_NEIGHBORS) -> np.ndarray:
    """Plane-fit normals at query locations, oriented along `toward`.

    Args:
        points: (N, 3) surface samples.
        queries: (M, 3) locations needing a normal.
        toward: (M, 3) or (3,) direction the normal should face.
        k: Neighbors per plane fit.

    Returns:
        (M, 3) unit normals.
    """
    toward = np.broadcast_to(np.asarray(toward, dtype=np.float64), queries.shape)
    kk = min(k, len(points))
    if kk < 3:
        normals = toward.copy()
    else:
        _, nb = cKDTree(points).query(queries, k=kk)
        neigh = points[nb]
        centered = neigh - neigh.mean(axis=1, keepdims=True)
        cov = np.einsum("mki,mkj->mij", centered, centered)
        _, vecs = np.linalg.eigh(cov)
        normals = vecs[:, :, 0]
    sign = np.where(np.sum(normals * toward, axis=1) < 0.0, -1.0, 1.0)
    normals = normals * sign[:, None]
    norm = np.linalg.norm(normals, axis=1, keepdims=True)
    norm[norm == 0.0] = 1.0
    return normals / norm


def build_collider(
    cloud: BackgroundPointCloud,
    domain: SimDomain,
    friction: float,
    camera_centers: Optional[np.ndarray] = None,
) -> Collider:
    """Turns the filtered background cloud into a dilated node occupancy.

    Nodes nearest to a transformed point are occupied, the occupancy is
    dilated by one node, and each occupied node gets a plane-fit normal facing
    the mean camera position. Without cameras, normals face against gravity.

    Args:
        cloud: Filtered background points in meters.
        domain: The simulation domain.
        friction: Background Coulomb coefficient.
        camera_centers: Optional (K, 3) camera positions in meters.

    Returns:
        The collider; empty, with a warning, if the cloud is empty.
    """
    n = domain.grid_resolution
    if len(cloud) == 0:
        warnings.warn("empty background cloud; simulating without a collider", SimloopWarning)
        return Collider.empty(n, friction)

    dx = domain.dx
    points, _ = clamp_to_domain(to_sim(domain, cloud.points), "collider points")
    idx = np.clip(np.rint(points / dx).astype(np.int64), 0, n - 1)
    occupancy = np.zeros((n, n, n), dtype=bool)
    occupancy[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    occupancy = binary_dilation(occupancy, structure=generate_binary_structure(3, 1))
    nodes = np.argwhere(occupancy)
    node_pos = nodes * dx

    if camera_centers is not None and len(camera_centers):
        viewpoint = to_sim(domain, np.asarray(camera_centers, dtype=np.float64)).mean(axis=0)
        toward = viewpoint - node_pos
    else:
        g = domain.gravity_sim
        toward = -g / np.linalg.norm(g) if np.linalg.norm(g) > 0 else np.array([0.0, 1.0, 0.0])

    normals = estimate_normals(points, node_pos, toward)
    flat = np.ravel_multi_index(nodes.T, (n, n, n)).astype(np.int64)
    return Collider(grid_resolution=n, node_index=flat, normals=normals, friction=float(friction))


# --- Diagnostics ---

def kinetic_energy(particles: ParticleSet) -> float:
    return 0.5 * float(np.sum(particles.mass * np.sum(particles.velocity ** 2, axis=1)))


def elastic_energy(particles: ParticleSet) -> float:
    """Fixed-corotated energy density times initial volume, summed."""
    sig = np.linalg.svd(particles.F, compute_uv=False)
    J = np.linalg.det(particles.F)
    psi = particles.mu * np.sum((sig - 1.0) ** 2, axis=1) + 0.5 * particles.lam * (J - 1.0) ** 2
    return float(np.sum(particles.volume * psi))


def potential_energy(particles: ParticleSet, gravity_sim: np.ndarray) -> float:
    return -float(np.sum(particles.mass * (particles.position @ np.asarray(gravity_sim))))


def total_momentum(particles: ParticleSet) -> np.ndarray:
    return np.sum(particles.mass[:, None] * particles.velocity, axis=0)
