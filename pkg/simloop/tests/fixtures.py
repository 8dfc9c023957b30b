"""
Synthetic scenes shared by the tests.

A static camera looks down world -z at textured balls in front of a
checkered floor (y = 0) and back wall (z = -0.5). Every pixel is ray-cast
analytically, so RGB, depth and labels agree exactly, and feature matches
come from projecting the same surface points at two frame times.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from simloop.guidance_lib.material_map import MaterialDescriptor
from simloop.guidance_lib.scene_bundle import (
    CameraFrame,
    DepthMap,
    FeatureMatchSet,
    ObjectMask,
    ObjectMesh,
    SceneBundle,
    write_bundle,
)

WIDTH = HEIGHT = 64
FOCAL = 64.0
CAMERA_CENTER = np.array([0.0, 0.5, 1.6])
# Image x follows world +x, image y follows world -y.
CAMERA_ROTATION = np.diag([1.0, -1.0, -1.0])
FLOOR_Y = 0.0
WALL_Z = -0.5
GRAVITY = (0.0, -9.8, 0.0)


def make_camera(frame: int = 1, width: int = WIDTH, height: int = HEIGHT) -> CameraFrame:
    return CameraFrame(
        fx=FOCAL, fy=FOCAL, cx=width / 2.0, cy=height / 2.0,
        rotation=CAMERA_ROTATION, translation=-CAMERA_ROTATION @ CAMERA_CENTER,
        width=width, height=height, frame=frame,
    )


def rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def ball_texture(local: np.ndarray) -> np.ndarray:
    """Octant colors on a ball, from object-local directions."""
    local = np.atleast_2d(local)
    return 0.2 + 0.6 * (local > 0.0).astype(np.float64)


def uv_sphere(radius: float, n_lat: int = 12, n_lon: int = 16):
    """Vertices and outward-wound triangles of a latitude/longitude sphere."""
    verts = [[0.0, 0.0, radius]]
    for i in range(1, n_lat):
        phi = math.pi * i / n_lat
        for j in range(n_lon):
            lam = 2.0 * math.pi * j / n_lon
            verts.append([radius * math.sin(phi) * math.cos(lam),
                          radius * math.sin(phi) * math.sin(lam),
                          radius * math.cos(phi)])
    verts.append([0.0, 0.0, -radius])
    south = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * n_lon + (j % n_lon)

    faces = []
    for j in range(n_lon):
        faces.append([0, ring(1, j), ring(1, j + 1)])
        faces.append([south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)])
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append([a, c, b])
            faces.append([b, c, d])
    return np.array(verts), np.array(faces, dtype=np.int64)


def sphere_mesh(object_id: int, radius: float = 0.2) -> ObjectMesh:
    vertices, faces = uv_sphere(radius)
    return ObjectMesh(object_id=object_id, vertices=vertices, faces=faces,
                      colors=ball_texture(vertices / radius))


def cube_mesh(object_id: int, size: float, color=(0.8, 0.3, 0.2)) -> ObjectMesh:
    h = size / 2.0
    vertices = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    faces = np.array([
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
    ], dtype=np.int64)
    return ObjectMesh(object_id=object_id, vertices=vertices, faces=faces,
                      colors=np.tile(np.asarray(color, dtype=np.float64), (8, 1)))


@dataclass
class BallSpec:
    """A scripted ball: ballistic center, constant spin about world +z."""
    object_id: int
    center: np.ndarray
    radius: float = 0.2
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    spin: float = 0.0
    material: Dict[str, str] = field(default_factory=lambda: {
        "composition": "rubber", "bounce": "high", "roughness": "smooth"})

    def center_at(self, time: float, gravity=GRAVITY) -> np.ndarray:
        g = np.asarray(gravity, dtype=np.float64)
        return np.asarray(self.center, dtype=np.float64) + np.asarray(self.velocity) * time + 0.5 * g * time * time

    def rotation_at(self, time: float) -> np.ndarray:
        return rotation_z(self.spin * time)


def default_ball() -> BallSpec:
    return BallSpec(object_id=1, center=np.array([0.0, 0.45, 0.0]), velocity=np.array([0.3, 0.0, 0.0]))


def _pixel_rays(width: int, height: int) -> np.ndarray:
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    d_cam = np.stack([(u - width / 2.0) / FOCAL, (v - height / 2.0) / FOCAL, np.ones_like(u)], axis=-1)
    # Camera +z has unit length along these rays, so the ray parameter is depth.
    return d_cam @ CAMERA_ROTATION


def _hit_sphere(rays: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    oc = CAMERA_CENTER - center
    a = np.sum(rays * rays, axis=-1)
    b = rays @ oc
    c = float(oc @ oc) - radius * radius
    disc = b * b - a * c
    s = np.full(a.shape, np.inf)
    ok = disc >= 0.0
    s[ok] = (-b[ok] - np.sqrt(disc[ok])) / a[ok]
    s[s <= 0.0] = np.inf
    return s


def _checker(a: np.ndarray, b: np.ndarray, dark, light) -> np.ndarray:
    parity = (np.floor(a / 0.1) + np.floor(b / 0.1)).astype(np.int64) % 2
    return np.where(parity[..., None] == 1, np.asarray(light), np.asarray(dark))


def render_scene(balls: Sequence[BallSpec], time: float, width: int = WIDTH, height: int = HEIGHT,
                 gravity=GRAVITY):
    """Ray-casts one frame. Returns (rgb uint8, depth float32, labels uint8)."""
    rays = _pixel_rays(width, height)
    with np.errstate(divide="ignore"):
        s_floor = np.where(rays[..., 1] < 0.0, (FLOOR_Y - CAMERA_CENTER[1]) / rays[..., 1], np.inf)
    s_wall = np.full(rays.shape[:2], CAMERA_CENTER[2] - WALL_Z)
    depth = np.minimum(s_floor, s_wall)
    hit = CAMERA_CENTER + depth[..., None] * rays
    color = np.where((s_floor < s_wall)[..., None],
                     _checker(hit[..., 0], hit[..., 2], (0.3, 0.45, 0.3), (0.6, 0.7, 0.55)),
                     _checker(hit[..., 0], hit[..., 1], (0.5, 0.4, 0.3), (0.8, 0.7, 0.6)))
    labels = np.zeros(rays.shape[:2], dtype=np.uint8)

    for ball in balls:
        center = ball.center_at(time, gravity)
        s = _hit_sphere(rays, center, ball.radius)
        front = s < depth
        if not np.any(front):
            continue
        depth = np.where(front, s, depth)
        points = CAMERA_CENTER + s[front][:, None] * rays[front]
        local = (points - center) @ ball.rotation_at(time) / ball.radius
        color[front] = ball_texture(local)
        labels[front] = ball.object_id

    rgb = np.clip(np.rint(color * 255.0), 0, 255).astype(np.uint8)
    return rgb, depth.astype(np.float32), labels


def _ball_matches(ball: BallSpec, frame_a: int, frame_b: int, fps: float, count: int, seed: int,
                  gravity=GRAVITY) -> FeatureMatchSet:
    camera = make_camera()
    ta, tb = (frame_a - 1) / fps, (frame_b - 1) / fps
    rng = np.random.default_rng(seed + ball.object_id)
    # Directions on the cap facing the camera.
    dirs = rng.normal(size=(count, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs[:, 2] = np.abs(dirs[:, 2]) + 0.6
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    local = dirs * ball.radius
    pa = ball.center_at(ta, gravity) + local @ ball.rotation_at(ta).T
    pb = ball.center_at(tb, gravity) + local @ ball.rotation_at(tb).T
    uva, _ = camera.project(pa)
    uvb, _ = camera.project(pb)
    return FeatureMatchSet(object_id=ball.object_id, frame_a=frame_a, frame_b=frame_b,
                           points_a=uva, points_b=uvb, dt=tb - ta)


def _ball_flow(ball: BallSpec, labels: np.ndarray, t: int, fps: float, gravity=GRAVITY) -> np.ndarray:
    camera = make_camera()
    (u0, v0), (u1, v1) = camera.project(np.stack([ball.center_at((t - 1) / fps, gravity),
                                                  ball.center_at(t / fps, gravity)]))[0]
    flow = np.zeros(labels.shape + (2,), dtype=np.float32)
    flow[labels == ball.object_id] = (u1 - u0, v1 - v0)
    return flow


def make_scene(
    num_frames: int = 6,
    fps: float = 25.0,
    balls: Optional[List[BallSpec]] = None,
    gravity=GRAVITY,
    match_count: int = 40,
    match_frames=(1, 2),
    template_flow: bool = False,
    seed: int = 0,
) -> SceneBundle:
    """Builds an in-memory bundle of the scripted scene."""
    balls = balls if balls is not None else [default_ball()]
    frames, depths, masks, cameras = [], [], [], []
    for t in range(1, num_frames + 1):
        rgb, depth, labels = render_scene(balls, (t - 1) / fps, gravity=gravity)
        frames.append(rgb)
        depths.append(DepthMap(depth, frame=t))
        masks.append(ObjectMask(labels, frame=t))
        cameras.append(make_camera(frame=t))

    flows = {}
    if template_flow:
        for t in range(1, num_frames):
            flows[t] = sum(_ball_flow(b, masks[t - 1].labels, t, fps, gravity) for b in balls)

    frame_b = min(match_frames[1], num_frames)
    matches = {}
    for b in balls:
        if frame_b > match_frames[0] and match_count:
            matches[b.object_id] = _ball_matches(b, match_frames[0], frame_b, fps, match_count, seed, gravity)
        else:
            matches[b.object_id] = FeatureMatchSet(b.object_id, 1, frame_b, np.zeros((0, 2)), np.zeros((0, 2)), 1.0 / fps)

    return SceneBundle(
        frames=frames, depths=depths, masks=masks, cameras=cameras,
        meshes={b.object_id: sphere_mesh(b.object_id, b.radius) for b in balls},
        matches=matches,
        materials={b.object_id: MaterialDescriptor.from_labels(**b.material) for b in balls},
        fps=fps,
        object_ids=[b.object_id for b in balls],
        template_flows=flows,
    )


def write_scene(path: str, **kwargs) -> SceneBundle:
    """Builds the scripted scene and writes it as a bundle directory."""
    bundle = make_scene(**kwargs)
    write_bundle(bundle, path)
    return bundle
