"""
Readers and writers for stage artifacts in the output directory.

Binary layouts are little-endian numpy structured records, so a file written
on one machine reads back identically on another.
"""
import hashlib
import json
import os
from typing import Any, Dict, List

import numpy as np
from plyfile import PlyData, PlyElement

from .dynamics_init import ObjectInitState
from .exceptions import ArtifactIOError
from .mpm_sim import ParticleSnapshot, SimTrajectory
from .render_guidance import CorrespondenceSet
from .scene_bundle import BackgroundPointCloud
from .sim_domain import SimDomain

TRAJECTORY_MAGIC = b"SLTRAJ\x00\x00"
TRAJECTORY_VERSION = 1

TRAJECTORY_HEADER = np.dtype([
    ("magic", "S8"),
    ("version", "<u4"),
    ("num_particles", "<u4"),
    ("num_frames", "<u4"),
    ("reserved", "<u4"),
    ("fps", "<f8"),
])
PARTICLE_RECORD = np.dtype([
    ("particle_id", "<u8"),
    ("position", "<f4", (3,)),
    ("velocity", "<f4", (3,)),
    ("color", "<f4", (3,)),
    ("object_id", "<u4"),
])
CORRESPONDENCE_RECORD = np.dtype([
    ("particle_id", "<u8"),
    ("p1x", "<f4"), ("p1y", "<f4"),
    ("qtx", "<f4"), ("qty", "<f4"),
    ("visible", "u1"),
])


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


# --- JSON ---

def write_json(path: str, data: Any):
    """Writes JSON with sorted keys so equal data gives equal bytes."""
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise ArtifactIOError(f"cannot write {path}: {e}")


def read_json(path: str) -> Any:
    if not os.path.isfile(path):
        raise ArtifactIOError(f"artifact not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ArtifactIOError(f"{path}: invalid JSON ({e.msg}, line {e.lineno})")


def write_init_states(path: str, states: List[ObjectInitState]):
    write_json(path, [s.to_dict() for s in states])


def read_init_states(path: str) -> List[ObjectInitState]:
    return [ObjectInitState.from_dict(row) for row in read_json(path)]


def write_domain(path: str, domain: SimDomain, extra: Dict[str, Any] = None):
    data = domain.to_dict()
    data.update(extra or {})
    write_json(path, data)


def read_domain(path: str) -> SimDomain:
    data = read_json(path)
    try:
        return SimDomain.from_dict(data)
    except (KeyError, TypeError, ValueError) as e:
        raise ArtifactIOError(f"{path}: malformed domain ({e})")


# --- Trajectory ---

def write_trajectory(path: str, traj: SimTrajectory):
    """Header, then F blocks of N particle records in particle-ID order.

    Records are packed float32 (48 bytes each); positions and velocities are
    rounded to single precision on write.
    """
    header = np.zeros(1, dtype=TRAJECTORY_HEADER)
    header["magic"] = TRAJECTORY_MAGIC
    header["version"] = TRAJECTORY_VERSION
    header["num_particles"] = traj.num_particles
    header["num_frames"] = traj.num_frames
    header["fps"] = traj.fps
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(np.asarray(traj.times, dtype="<f8").tobytes())
        for snap in traj.snapshots:
            rec = np.empty(len(snap), dtype=PARTICLE_RECORD)
            rec["particle_id"] = snap.particle_id
            rec["position"] = snap.position
            rec["velocity"] = snap.velocity
            rec["color"] = snap.color
            rec["object_id"] = snap.object_id
            f.write(rec.tobytes())


def is_trajectory_file(path: str) -> bool:
    with open(path, "rb") as f:
        return f.read(len(TRAJECTORY_MAGIC)) == TRAJECTORY_MAGIC


def read_trajectory_header(path: str) -> Dict[str, Any]:
    with open(path, "rb") as f:
        raw = f.read(TRAJECTORY_HEADER.itemsize)
    if len(raw) < TRAJECTORY_HEADER.itemsize:
        raise ArtifactIOError(f"{path}: truncated trajectory header")
    # S8 fields drop trailing NULs on read, so compare the raw bytes.
    if raw[:len(TRAJECTORY_MAGIC)] != TRAJECTORY_MAGIC:
        raise ArtifactIOError(f"{path}: not a trajectory file")
    header = np.frombuffer(raw, dtype=TRAJECTORY_HEADER)[0]
    if int(header["version"]) != TRAJECTORY_VERSION:
        raise ArtifactIOError(f"{path}: unsupported trajectory version {int(header['version'])}")
    return {
        "num_particles": int(header["num_particles"]),
        "num_frames": int(header["num_frames"]),
        "fps": float(header["fps"]),
    }


def read_trajectory(path: str) -> SimTrajectory:
    if not os.path.isfile(path):
        raise ArtifactIOError(f"artifact not found: {path}")
    meta = read_trajectory_header(path)
    n, frames = meta["num_particles"], meta["num_frames"]
    expected = TRAJECTORY_HEADER.itemsize + 8 * frames + PARTICLE_RECORD.itemsize * n * frames
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) != expected:
        raise ArtifactIOError(f"{path}: expected {expected} bytes, found {len(raw)}")
    offset = TRAJECTORY_HEADER.itemsize
    times = np.frombuffer(raw, dtype="<f8", count=frames, offset=offset).copy()
    offset += 8 * frames
    records = np.frombuffer(raw, dtype=PARTICLE_RECORD, count=n * frames, offset=offset).reshape(frames, n)
    snapshots = [
        ParticleSnapshot(
            particle_id=block["particle_id"].astype(np.uint64),
            position=block["position"].astype(np.float64),
            velocity=block["velocity"].astype(np.float64),
            color=block["color"].astype(np.float64),
            object_id=block["object_id"].astype(np.int32),
        )
        for block in records
    ]
    return SimTrajectory(snapshots=snapshots, times=times, fps=meta["fps"])


# --- Correspondences ---

def write_correspondences(path: str, corr: CorrespondenceSet):
    rec = np.zeros(len(corr), dtype=CORRESPONDENCE_RECORD)
    rec["particle_id"] = corr.particle_id
    rec["p1x"], rec["p1y"] = corr.p_ref[:, 0], corr.p_ref[:, 1]
    rec["qtx"], rec["qty"] = corr.q_t[:, 0], corr.q_t[:, 1]
    rec["visible"] = corr.visible_in_reference
    with open(path, "wb") as f:
        f.write(rec.tobytes())


def read_correspondences(path: str, frame: int, reference_frame: int = 1) -> CorrespondenceSet:
    """Reads a packed correspondence file; object IDs come from the particle IDs."""
    if not os.path.isfile(path):
        raise ArtifactIOError(f"artifact not found: {path}")
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) % CORRESPONDENCE_RECORD.itemsize:
        raise ArtifactIOError(f"{path}: size {len(raw)} is not a multiple of {CORRESPONDENCE_RECORD.itemsize}")
    rec = np.frombuffer(raw, dtype=CORRESPONDENCE_RECORD)
    visible = rec["visible"].astype(bool)
    p_ref = np.stack([rec["p1x"], rec["p1y"]], axis=1).astype(np.float64)
    p_ref[~visible] = np.nan
    particle_id = rec["particle_id"].astype(np.uint64)
    return CorrespondenceSet(
        frame=frame,
        reference_frame=reference_frame,
        particle_id=particle_id,
        object_id=(particle_id >> np.uint64(32)).astype(np.int32),
        p_ref=p_ref,
        q_t=np.stack([rec["qtx"], rec["qty"]], axis=1).astype(np.float64),
        visible_in_reference=visible,
    )


# --- Background cloud ---

def write_point_cloud(path: str, cloud: BackgroundPointCloud):
    vertex = np.empty(len(cloud), dtype=[("x", "f8"), ("y", "f8"), ("z", "f8"),
                                          ("red", "u1"), ("green", "u1"), ("blue", "u1"),
                                          ("frame", "i4")])
    for i, axis in enumerate("xyz"):
        vertex[axis] = cloud.points[:, i]
    rgb = np.clip(np.rint(cloud.colors * 255.0), 0, 255).astype(np.uint8)
    for i, channel in enumerate(("red", "green", "blue")):
        vertex[channel] = rgb[:, i]
    vertex["frame"] = cloud.source_frames
    PlyData([PlyElement.describe(vertex, "vertex")]).write(path)


def read_point_cloud(path: str) -> BackgroundPointCloud:
    if not os.path.isfile(path):
        raise ArtifactIOError(f"artifact not found: {path}")
    vert = PlyData.read(path)["vertex"]
    if len(vert.data) == 0:
        return BackgroundPointCloud.empty()
    points = np.stack([vert["x"], vert["y"], vert["z"]], axis=1).astype(np.float64)
    colors = np.stack([vert["red"], vert["green"], vert["blue"]], axis=1).astype(np.float64) / 255.0
    return BackgroundPointCloud(points, colors, np.asarray(vert["frame"], dtype=np.int32))
