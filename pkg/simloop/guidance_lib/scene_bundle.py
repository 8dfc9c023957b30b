"""
Canonical data model for perception artifacts and the bundle loader/writer.

A bundle directory holds everything the upstream perception stack produced
for one template video: RGB frames, metric depth, object masks, camera poses,
per-object meshes, feature matches and material descriptors. Frames are
numbered from 1 everywhere, matching the `%04d` file names on disk.

Conventions: depth is positive along camera +z; a world point x maps to camera
coordinates as R @ x + t; pixel u = fx * x / z + cx with no half-pixel offset.
"""
import csv
import json
import os
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import cv2
import numpy as np
from plyfile import PlyData, PlyElement
from scipy.spatial import cKDTree

from .exceptions import (
    BundleIncompleteError,
    EmptyBackgroundError,
    SimloopWarning,
    ValidationError,
)
from .material_map import MaterialDescriptor

ORTHONORMAL_TOL = 1e-6
MATCHES_HEADER = ["frame_a", "frame_b", "xa", "ya", "xb", "yb", "dt_seconds"]


@dataclass(frozen=True, eq=False)
class CameraFrame:
    """A pinhole camera with a world-to-camera rigid transform.

    Attributes:
        fx, fy: Focal lengths in pixels.
        cx, cy: Principal point in pixels.
        rotation: 3x3 world-to-camera rotation.
        translation: World-to-camera translation in meters.
        width, height: Image size in pixels.
        frame: 1-based frame index.
    """
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int
    frame: int = 1

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

        where = f"camera for frame {self.frame}"
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise ValidationError(f"{where}: non-finite extrinsics")
        if not np.allclose(rot @ rot.T, np.eye(3), atol=ORTHONORMAL_TOL) or abs(np.linalg.det(rot) - 1.0) > ORTHONORMAL_TOL:
            raise ValidationError(f"{where}: rotation is not orthonormal with determinant +1")
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"{where}: focal lengths must be > 0 (fx={self.fx}, fy={self.fy})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError(f"{where}: principal point ({self.cx}, {self.cy}) outside the {self.width}x{self.height} image")

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def view_axis_world(self) -> np.ndarray:
        """The camera +z axis expressed in world coordinates."""
        return self.rotation.T @ np.array([0.0, 0.0, 1.0])

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    def project(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Projects world points to pixels.

        Returns:
            A tuple `(uv, depth)` with `uv` of shape (N, 2) and camera-space
            depth of shape (N,). Points with depth <= 0 get NaN pixels.
        """
        cam = self.world_to_camera(np.atleast_2d(points))
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * cam[:, 0] / z + self.cx
            v = self.fy * cam[:, 1] / z + self.cy
        uv = np.stack([u, v], axis=1)
        uv[z <= 0] = np.nan
        return uv, z

    def back_project(self, uv: np.ndarray, depth: np.ndarray) -> np.ndarray:
        """Lifts pixels with metric depth to world points."""
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        d = np.asarray(depth, dtype=np.float64).reshape(-1)
        x = (uv[:, 0] - self.cx) / self.fx * d
        y = (uv[:, 1] - self.cy) / self.fy * d
        return self.camera_to_world(np.stack([x, y, d], axis=1))

    def to_dict(self) -> Dict:
        return {
            "frame": self.frame,
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "R": self.rotation.reshape(-1).tolist(),
            "t": self.translation.tolist(),
        }


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel metric depth; non-finite or non-positive values are invalid."""
    depth: np.ndarray
    frame: int = 1

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.depth) & (self.depth > 0)


@dataclass(frozen=True, eq=False)
class ObjectMask:
    """Per-pixel object-ID labels, 0 for background."""
    labels: np.ndarray
    frame: int = 1

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True, eq=False)
class ObjectMesh:
    """A triangle mesh in object-local coordinates with per-vertex RGB in [0, 1]."""
    object_id: int
    vertices: np.ndarray
    faces: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        where = f"mesh of object {self.object_id}"
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3 or len(self.vertices) == 0:
            raise ValidationError(f"{where}: mesh is empty or not (V, 3)")
        if not np.all(np.isfinite(self.vertices)):
            raise ValidationError(f"{where}: NaN vertex coordinates")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValidationError(f"{where}: triangle indices out of range")
        if self.colors.shape != self.vertices.shape:
            raise ValidationError(f"{where}: one RGB color per vertex is required")


@dataclass(frozen=True, eq=False)
class FeatureMatchSet:
    """Matched pixel pairs of one object between two frames.

    Attributes:
        object_id: The object the matches belong to.
        frame_a, frame_b: 1-based frame pair.
        points_a, points_b: (N, 2) pixel coordinates in frames a and b.
        dt: Real-time interval between the frames in seconds.
    """
    object_id: int
    frame_a: int
    frame_b: int
    points_a: np.ndarray
    points_b: np.ndarray
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError(f"matches of object {self.object_id}: Δt must be > 0 (got {self.dt})")
        if self.points_a.shape != self.points_b.shape:
            raise ValidationError(f"matches of object {self.object_id}: point lists differ in length")

    def __len__(self) -> int:
        return len(self.points_a)


@dataclass(frozen=True, eq=False)
class BackgroundPointCloud:
    """World-space static background points with color and source frame."""
    points: np.ndarray
    colors: np.ndarray
    source_frames: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "BackgroundPointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.int32))

    @property
    def extent(self) -> float:
        """Largest axis-aligned side of the cloud, 0 for fewer than two points."""
        if len(self.points) == 0:
            return 0.0
        return float(np.max(np.ptp(self.points, axis=0)))


@dataclass(eq=False)
class SceneBundle:
    """All per-frame perception inputs for one template video.

    Per-frame lists are indexed from 0 in memory; use the accessor methods
    with 1-based frame numbers.
    """
    frames: List[np.ndarray]
    depths: List[DepthMap]
    masks: List[ObjectMask]
    cameras: List[CameraFrame]
    meshes: Dict[int, ObjectMesh]
    matches: Dict[int, FeatureMatchSet]
    materials: Dict[int, MaterialDescriptor]
    fps: float
    object_ids: List[int]
    template_flows: Dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames[0].shape[0]

    @property
    def width(self) -> int:
        return self.frames[0].shape[1]

    @property
    def duration(self) -> float:
        """Length of the video in seconds."""
        return self.num_frames / self.fps

    def frame(self, t: int) -> np.ndarray:
        return self.frames[t - 1]

    def depth(self, t: int) -> DepthMap:
        return self.depths[t - 1]

    def mask(self, t: int) -> ObjectMask:
        return self.masks[t - 1]

    def camera(self, t: int) -> CameraFrame:
        return self.cameras[t - 1]

    def validate(self):
        """Checks cross-file consistency.

        Raises:
            ValidationError: Naming the frame or object that is inconsistent.
        """
        if not self.frames:
            raise ValidationError("bundle has no frames; frame 1 is required")
        if not self.fps > 0:
            raise ValidationError(f"fps must be > 0 (got {self.fps})")
        n = len(self.frames)
        for name, seq in (("depths", self.depths), ("masks", self.masks), ("cameras", self.cameras)):
            if len(seq) != n:
                raise ValidationError(f"{name} has {len(seq)} entries but there are {n} frames")

        h, w = self.height, self.width
        expected_ids = list(range(1, len(self.object_ids) + 1))
        if sorted(self.object_ids) != expected_ids:
            raise ValidationError(f"object IDs must be dense 1..N (got {self.object_ids})")
        declared = set(self.object_ids) | {0}

        for i in range(n):
            t = i + 1
            if self.frames[i].shape != (h, w, 3):
                raise ValidationError(f"frame {t}: RGB resolution {self.frames[i].shape[:2]} differs from {(h, w)}")
            if self.depths[i].depth.shape != (h, w):
                raise ValidationError(f"frame {t}: depth resolution {self.depths[i].depth.shape} differs from frame resolution {(h, w)}")
            if self.masks[i].labels.shape != (h, w):
                raise ValidationError(f"frame {t}: mask resolution {self.masks[i].labels.shape} differs from frame resolution {(h, w)}")
            cam = self.cameras[i]
            if (cam.width, cam.height) != (w, h):
                raise ValidationError(f"frame {t}: camera image size {(cam.width, cam.height)} differs from {(w, h)}")
            extra = set(np.unique(self.masks[i].labels).tolist()) - declared
            if extra:
                raise ValidationError(f"frame {t}: mask labels {sorted(extra)} are not declared object IDs")

        for obj in self.object_ids:
            if obj not in self.meshes:
                raise ValidationError(f"object {obj}: no mesh")
            if obj not in self.matches:
                raise ValidationError(f"object {obj}: no feature matches")
            if obj not in self.materials:
                raise ValidationError(f"object {obj}: no material descriptor")
            m = self.matches[obj]
            for f in (m.frame_a, m.frame_b):
                if not 1 <= f <= n:
                    raise ValidationError(f"object {obj}: match frame {f} outside 1..{n}")

        for t, flow in self.template_flows.items():
            if flow.shape != (h, w, 2):
                raise ValidationError(f"template flow {t}: shape {flow.shape} differs from {(h, w, 2)}")


# --- Low-level readers and writers ---

def _require_file(root: str, rel: str) -> str:
    path = os.path.join(root, rel)
    if not os.path.isfile(path):
        raise BundleIncompleteError(f"incomplete bundle: missing {rel}")
    return path


def read_depth(path: str) -> np.ndarray:
    """Reads a `.f32` depth raster: ASCII "W H\\n" header then little-endian float32."""
    with open(path, "rb") as f:
        header = f.readline()
        try:
            w, h = (int(v) for v in header.decode("ascii").split())
        except (UnicodeDecodeError, ValueError):
            raise BundleIncompleteError(f"{path}: malformed depth header {header!r}")
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != w * h:
        raise BundleIncompleteError(f"{path}: expected {w * h} depth values, found {data.size}")
    return data.reshape(h, w).astype(np.float32)


def write_depth(path: str, depth: np.ndarray):
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(np.ascontiguousarray(depth, dtype="<f4").tobytes())


def read_rgb(path: str) -> np.ndarray:
    img = cv2.imread(path, cv2.IMREAD_COLOR)
    if img is None:
        raise BundleIncompleteError(f"could not decode image {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def write_rgb(path: str, rgb: np.ndarray):
    if not cv2.imwrite(path, cv2.cvtColor(np.ascontiguousarray(rgb, dtype=np.uint8), cv2.COLOR_RGB2BGR)):
        raise BundleIncompleteError(f"could not write image {path}")


def read_labels(path: str) -> np.ndarray:
    img = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if img is None:
        raise BundleIncompleteError(f"could not decode mask {path}")
    if img.ndim != 2:
        raise ValidationError(f"{path}: masks must be single-channel")
    return img.astype(np.uint8)


def write_labels(path: str, labels: np.ndarray):
    if not cv2.imwrite(path, np.ascontiguousarray(labels, dtype=np.uint8)):
        raise BundleIncompleteError(f"could not write mask {path}")


def read_mesh(path: str, object_id: int) -> ObjectMesh:
    """Reads an ASCII or binary PLY mesh with x y z red green blue per vertex."""
    ply = PlyData.read(path)
    vert = ply["vertex"]
    vertices = np.stack([vert["x"], vert["y"], vert["z"]], axis=1).astype(np.float64)
    names = vert.data.dtype.names
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([vert["red"], vert["green"], vert["blue"]], axis=1).astype(np.float64) / 255.0
    else:
        colors = np.full_like(vertices, 0.5)
    faces = np.zeros((0, 3), dtype=np.int64)
    if "face" in ply:
        face_el = ply["face"]
        key = "vertex_indices" if "vertex_indices" in face_el.data.dtype.names else "vertex_index"
        rows = [np.asarray(r, dtype=np.int64) for r in face_el[key]]
        if rows and any(len(r) != 3 for r in rows):
            raise ValidationError(f"mesh of object {object_id}: only triangle faces are supported")
        if rows:
            faces = np.stack(rows)
    return ObjectMesh(object_id=object_id, vertices=vertices, faces=faces, colors=colors)


def write_mesh(path: str, mesh: ObjectMesh):
    vertex = np.empty(len(mesh.vertices), dtype=[("x", "f4"), ("y", "f4"), ("z", "f4"),
                                                  ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    for i, axis in enumerate("xyz"):
        vertex[axis] = mesh.vertices[:, i]
    rgb = np.clip(np.rint(mesh.colors * 255.0), 0, 255).astype(np.uint8)
    for i, channel in enumerate(("red", "green", "blue")):
        vertex[channel] = rgb[:, i]
    face = np.empty(len(mesh.faces), dtype=[("vertex_indices", "i4", (3,))])
    face["vertex_indices"] = mesh.faces
    PlyData([PlyElement.describe(vertex, "vertex"), PlyElement.describe(face, "face")], text=True).write(path)


def read_matches(path: str, object_id: int, fps: float, num_frames: int) -> FeatureMatchSet:
    """Reads a match CSV. All rows must agree on the frame pair and Δt.

    A file with a header and no rows yields an empty set for frames (1, 2) at
    the video frame interval.
    """
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != MATCHES_HEADER:
            raise ValidationError(f"matches of object {object_id}: header must be {','.join(MATCHES_HEADER)}")
        rows = list(reader)

    if not rows:
        return FeatureMatchSet(object_id, 1, min(2, num_frames), np.zeros((0, 2)), np.zeros((0, 2)), 1.0 / fps)

    try:
        data = np.array([[float(r[k]) for k in MATCHES_HEADER] for r in rows], dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise ValidationError(f"matches of object {object_id}: non-numeric value ({e})")
    pairs = np.unique(data[:, [0, 1, 6]], axis=0)
    if len(pairs) != 1:
        raise ValidationError(f"matches of object {object_id}: rows span more than one frame pair or Δt")
    frame_a, frame_b, dt = pairs[0]
    return FeatureMatchSet(
        object_id=object_id,
        frame_a=int(frame_a),
        frame_b=int(frame_b),
        points_a=data[:, 2:4].copy(),
        points_b=data[:, 4:6].copy(),
        dt=float(dt),
    )


def write_matches(path: str, matches: FeatureMatchSet):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MATCHES_HEADER)
        for (xa, ya), (xb, yb) in zip(matches.points_a, matches.points_b):
            writer.writerow([matches.frame_a, matches.frame_b, repr(float(xa)), repr(float(ya)),
                             repr(float(xb)), repr(float(yb)), repr(float(matches.dt))])


# --- Bundle I/O ---

def load_bundle(path: str) -> SceneBundle:
    """Loads and validates a bundle directory.

    Args:
        path: The bundle root, laid out as frames/, depth/, masks/, objects/,
            matches/ plus cameras.json, materials.json and meta.json. An
            optional template_flow/%04d.flo holds template flow t -> t+1.

    Returns:
        A validated `SceneBundle`.

    Raises:
        BundleIncompleteError: If a required file is missing, naming it.
        ValidationError: If files disagree with each other.
        MaterialError: If a material label is outside the vocabulary.
    """
    if not os.path.isdir(path):
        raise BundleIncompleteError(f"bundle directory not found: {path}")

    with open(_require_file(path, "meta.json"), "r", encoding="utf-8") as f:
        meta = json.load(f)
    try:
        fps = float(meta["fps"])
        width, height = int(meta["width"]), int(meta["height"])
        num_frames = int(meta["num_frames"])
        object_ids = [int(o) for o in meta["object_ids"]]
    except KeyError as e:
        raise ValidationError(f"meta.json is missing {e}")

    with open(_require_file(path, "cameras.json"), "r", encoding="utf-8") as f:
        camera_rows = json.load(f)
    by_frame = {int(row["frame"]): row for row in camera_rows}

    frames, depths, masks, cameras = [], [], [], []
    for t in range(1, num_frames + 1):
        frames.append(read_rgb(_require_file(path, f"frames/{t:04d}.png")))
        depths.append(DepthMap(read_depth(_require_file(path, f"depth/{t:04d}.f32")), frame=t))
        masks.append(ObjectMask(read_labels(_require_file(path, f"masks/{t:04d}.png")), frame=t))
        if t not in by_frame:
            raise BundleIncompleteError(f"incomplete bundle: cameras.json has no entry for frame {t}")
        row = by_frame[t]
        cameras.append(CameraFrame(
            fx=float(row["fx"]), fy=float(row["fy"]), cx=float(row["cx"]), cy=float(row["cy"]),
            rotation=np.asarray(row["R"], dtype=np.float64).reshape(3, 3),
            translation=np.asarray(row["t"], dtype=np.float64),
            width=width, height=height, frame=t,
        ))

    meshes, matches = {}, {}
    for obj in object_ids:
        meshes[obj] = read_mesh(_require_file(path, f"objects/obj_{obj:02d}.ply"), obj)
        matches[obj] = read_matches(_require_file(path, f"matches/obj_{obj:02d}.csv"), obj, fps, num_frames)

    with open(_require_file(path, "materials.json"), "r", encoding="utf-8") as f:
        material_rows = json.load(f)
    materials = {
        int(row["object_id"]): MaterialDescriptor.from_labels(row["composition"], row["bounce"], row["roughness"])
        for row in material_rows
    }

    template_flows = {}
    flow_dir = os.path.join(path, "template_flow")
    if os.path.isdir(flow_dir):
        # Imported here to keep scene_bundle free of a module-level cycle.
        from .render_guidance import load_template_flow
        for t in range(1, num_frames):
            flow_path = os.path.join(flow_dir, f"{t:04d}.flo")
            if os.path.isfile(flow_path):
                template_flows[t] = load_template_flow(flow_path).flow

    return SceneBundle(
        frames=frames, depths=depths, masks=masks, cameras=cameras,
        meshes=meshes, matches=matches, materials=materials,
        fps=fps, object_ids=object_ids, template_flows=template_flows,
    )


def write_bundle(bundle: SceneBundle, path: str):
    """Writes a bundle in the layout `load_bundle` reads.

    Integer rasters round-trip exactly; depth is stored as float32 and mesh
    coordinates as float32 PLY properties.
    """
    for sub in ("frames", "depth", "masks", "objects", "matches"):
        os.makedirs(os.path.join(path, sub), exist_ok=True)

    for t in range(1, bundle.num_frames + 1):
        write_rgb(os.path.join(path, "frames", f"{t:04d}.png"), bundle.frame(t))
        write_depth(os.path.join(path, "depth", f"{t:04d}.f32"), bundle.depth(t).depth)
        write_labels(os.path.join(path, "masks", f"{t:04d}.png"), bundle.mask(t).labels)

    with open(os.path.join(path, "cameras.json"), "w", encoding="utf-8") as f:
        json.dump([cam.to_dict() for cam in bundle.cameras], f, indent=2)

    for obj in bundle.object_ids:
        write_mesh(os.path.join(path, "objects", f"obj_{obj:02d}.ply"), bundle.meshes[obj])
        write_matches(os.path.join(path, "matches", f"obj_{obj:02d}.csv"), bundle.matches[obj])

    with open(os.path.join(path, "materials.json"), "w", encoding="utf-8") as f:
        json.dump([{"object_id": obj, **bundle.materials[obj].to_dict()} for obj in bundle.object_ids], f, indent=2)

    with open(os.path.join(path, "meta.json"), "w", encoding="utf-8") as f:
        json.dump({
            "fps": bundle.fps,
            "width": bundle.width,
            "height": bundle.height,
            "num_frames": bundle.num_frames,
            "object_ids": list(bundle.object_ids),
        }, f, indent=2)

    if bundle.template_flows:
        from .render_guidance import FlowField, write_flow
        os.makedirs(os.path.join(path, "template_flow"), exist_ok=True)
        for t, flow in sorted(bundle.template_flows.items()):
            write_flow(FlowField(flow=flow, source=t, target=t + 1),
                       os.path.join(path, "template_flow", f"{t:04d}.flo"))


# --- Background aggregation ---

def build_background_points(bundle: SceneBundle) -> BackgroundPointCloud:
    """Back-projects every valid background pixel of every frame to world space.

    Raises:
        EmptyBackgroundError: If no frame has a background pixel with valid depth.
    """
    points, colors, sources = [], [], []
    for t in range(1, bundle.num_frames + 1):
        depth = bundle.depth(t)
        keep = depth.valid & (bundle.mask(t).labels == 0)
        if not np.any(keep):
            continue
        v, u = np.nonzero(keep)
        uv = np.stack([u, v], axis=1).astype(np.float64)
        points.append(bundle.camera(t).back_project(uv, depth.depth[v, u]))
        colors.append(bundle.frame(t)[v, u].astype(np.float64) / 255.0)
        sources.append(np.full(len(u), t, dtype=np.int32))

    if not points:
        raise EmptyBackgroundError("empty background: no valid background pixels in any frame")
    return BackgroundPointCloud(np.concatenate(points), np.concatenate(colors), np.concatenate(sources))


def default_voxel_size(cloud: BackgroundPointCloud) -> float:
    """1/128 of the cloud's largest extent, with a floor for degenerate clouds."""
    return max(cloud.extent / 128.0, 1e-6)


def filter_background_points(
    cloud: BackgroundPointCloud,
    voxel_size: float,
    min_neighbors: int,
    radius: float,
) -> BackgroundPointCloud:
    """Voxel-subsamples a cloud, then drops sparse outliers.

    Each occupied voxel is replaced by the centroid of its points (color is
    averaged, the source frame is the earliest). A point survives the outlier
    pass when at least `min_neighbors` other points lie within `radius`.

    Args:
        cloud: The raw cloud.
        voxel_size: Voxel side in meters, > 0.
        min_neighbors: Minimum neighbor count.
        radius: Neighbor search radius in meters.

    Returns:
        The filtered cloud. Never larger than the input; deterministic for a
        given input order.
    """
    if not voxel_size > 0:
        raise ValidationError(f"voxel_size must be > 0 (got {voxel_size})")
    if len(cloud) == 0:
        return BackgroundPointCloud.empty()

    keys = np.floor(cloud.points / voxel_size).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    n_vox = int(inverse.max()) + 1
    counts = np.bincount(inverse, minlength=n_vox).astype(np.float64)

    centroids = np.stack([np.bincount(inverse, weights=cloud.points[:, i], minlength=n_vox) for i in range(3)], axis=1)
    centroids /= counts[:, None]
    colors = np.stack([np.bincount(inverse, weights=cloud.colors[:, i], minlength=n_vox) for i in range(3)], axis=1)
    colors /= counts[:, None]
    sources = np.full(n_vox, np.iinfo(np.int32).max, dtype=np.int32)
    np.minimum.at(sources, inverse, cloud.source_frames.astype(np.int32))

    finite = np.all(np.isfinite(centroids), axis=1)
    centroids, colors, sources = centroids[finite], colors[finite], sources[finite]

    if min_neighbors > 0 and len(centroids):
        tree = cKDTree(centroids)
        neighbors = tree.query_ball_point(centroids, r=radius, return_length=True) - 1
        keep = neighbors >= min_neighbors
        centroids, colors, sources = centroids[keep], colors[keep], sources[keep]

    if len(centroids) == 0:
        warnings.warn("background filtering removed every point; the collider will be empty", SimloopWarning)
    return BackgroundPointCloud(centroids, colors, sources)
