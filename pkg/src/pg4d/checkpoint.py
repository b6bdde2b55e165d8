"""Binary checkpoints: header + flat parameter vector + CRC32.

Layout (all little-endian):

    magic   4 bytes  b"PG4D"
    u32     format version (currently 1)
    u32     splat count
    u32 x5  grid_x, grid_y, grid_t, features, hidden
    u32     camera count
    f64 x3  scene background color
    f64 x4  field bounds (xmin, ymin, xmax, ymax)
    per camera: f64 x4 (center_x, center_y, rotation, zoom), u32 x2 (w, h)
    f64 x N flat parameters: splat block then field block
    u32     CRC32 of everything above

Loads verify the checksum and round-trip bit-exactly. The header carries
the cameras, background and bounds so a checkpoint renders standalone.
"""

import struct
import zlib
from pathlib import Path

import numpy as np

from .field import DeformationField
from .params import FieldShape, ParamLayout
from .splats import SPLAT_DIM, Camera, Scene, array_to_scene, scene_to_array

MAGIC = b"PG4D"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, scene: Scene, field: DeformationField, cameras):
    splat_arr = scene_to_array(scene)
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<I", splat_arr.shape[0]),
        struct.pack("<5I", field.shape.grid_x, field.shape.grid_y, field.shape.grid_t,
                    field.shape.features, field.shape.hidden),
        struct.pack("<I", len(cameras)),
        np.asarray(scene.background, dtype="<f8").tobytes(),
        np.asarray(field.bounds, dtype="<f8").tobytes(),
    ]
    for cam in cameras:
        parts.append(struct.pack("<4d", cam.center[0], cam.center[1], cam.rotation, cam.zoom))
        parts.append(struct.pack("<2I", cam.resolution[0], cam.resolution[1]))
    parts.append(np.concatenate([splat_arr.ravel(), field.vec]).astype("<f8").tobytes())
    blob = b"".join(parts)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    Path(path).write_bytes(blob)


def load_checkpoint(path):
    """Returns ``(scene, field, cameras)``; raises CheckpointError on any
    corruption (bad magic, truncation, checksum mismatch)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError as e:
        raise CheckpointError(f"checkpoint not found: {path}") from e
    if len(blob) < 4 + 4 + 4:
        raise CheckpointError(f"truncated checkpoint: {path}")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError(f"checksum mismatch in {path}")
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic in {path}")
    off = 4

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} in {path}")
    (n_splats,) = take("<I")
    gx, gy, gt, feats, hidden = take("<5I")
    (n_cams,) = take("<I")
    background = np.frombuffer(blob, dtype="<f8", count=3, offset=off).copy()
    off += 24
    bounds = tuple(np.frombuffer(blob, dtype="<f8", count=4, offset=off))
    off += 32
    cameras = []
    for _ in range(n_cams):
        cx, cy, rot, zoom = take("<4d")
        w, h = take("<2I")
        cameras.append(Camera(center=np.array([cx, cy]), rotation=rot, zoom=zoom,
                              resolution=(w, h)))
    shape = FieldShape(grid_x=gx, grid_y=gy, grid_t=gt, features=feats, hidden=hidden)
    layout = ParamLayout(n_splats=n_splats, field_shape=shape)
    expected = off + 8 * layout.size + 4
    if len(blob) != expected:
        raise CheckpointError(f"truncated checkpoint: {path} "
                              f"({len(blob)} bytes, expected {expected})")
    params = np.frombuffer(blob, dtype="<f8", count=layout.size, offset=off).copy()
    scene = array_to_scene(layout.view(params, "splats"), background)
    field = DeformationField(shape, bounds, vec=params[n_splats * SPLAT_DIM:].copy())
    return scene, field, cameras
