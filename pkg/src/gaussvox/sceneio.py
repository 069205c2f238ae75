"""Bit-exact binary formats for scenes and grids, plus synthetic targets.

Both formats are little-endian with no padding so files parse identically on
any platform.

SGAU scene file:
    magic "SGAU" | u16 version (=1) | u16 class_count | u64 gaussian_count
    then per gaussian (10 + class_count) float32:
    mean[3], scale[3], rotation[4] (w, x, y, z), semantics[class_count]

SVOX grid file:
    magic "SVOX" | u16 version (=1) | u16 class_count | u32 dims[3]
    | f32 origin[3] | f32 cell_size[3] | u8 payload_kind
    payload_kind 0: labels u8[X*Y*Z]
    payload_kind 1: labels u8[X*Y*Z] then scores f32[X*Y*Z * class_count]
"""

from __future__ import annotations

import struct

import numpy as np

from .core import GaussianScene
from .errors import CapacityError, FormatError
from .grid import MAX_VOXELS, GridSpec, OccupancyGrid

SCENE_MAGIC = b"SGAU"
GRID_MAGIC = b"SVOX"
FORMAT_VERSION = 1

_SCENE_HEADER = struct.Struct("<4sHHQ")
_GRID_HEADER = struct.Struct("<4sHHIIIffffffB")


def write_scene(scene: GaussianScene, path) -> None:
    p = len(scene)
    c = scene.class_count
    records = np.concatenate(
        [scene.means, scene.scales, scene.rotations, scene.logits], axis=1
    ).astype("<f4")
    with open(path, "wb") as f:
        f.write(_SCENE_HEADER.pack(SCENE_MAGIC, FORMAT_VERSION, c, p))
        f.write(records.tobytes())


def read_scene(path) -> GaussianScene:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _SCENE_HEADER.size:
        raise FormatError(
            f"truncated header: need {_SCENE_HEADER.size} bytes, have {len(data)}",
            len(data),
        )
    magic, version, c, p = _SCENE_HEADER.unpack_from(data, 0)
    if magic != SCENE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {SCENE_MAGIC!r}", 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if c < 1:
        raise FormatError("class_count must be >= 1", 6)
    expected = p * (10 + c) * 4
    actual = len(data) - _SCENE_HEADER.size
    if actual != expected:
        raise FormatError(
            f"record section is {actual} bytes, expected {expected}", _SCENE_HEADER.size
        )
    records = np.frombuffer(data, dtype="<f4", offset=_SCENE_HEADER.size).reshape(p, 10 + c)
    return GaussianScene(
        records[:, 0:3], records[:, 3:6], records[:, 6:10], records[:, 10:]
    )


def write_grid(grid: OccupancyGrid, path) -> None:
    spec = grid.spec
    kind = 0 if grid.scores is None else 1
    with open(path, "wb") as f:
        f.write(
            _GRID_HEADER.pack(
                GRID_MAGIC, FORMAT_VERSION, grid.class_count,
                *spec.dims, *spec.origin, *spec.cell_size, kind,
            )
        )
        f.write(grid.labels.tobytes())
        if kind == 1:
            f.write(grid.scores.astype("<f4").tobytes())


def read_grid(path) -> OccupancyGrid:
    with open(path, "rb") as f:
        data = f.read()
    hs = _GRID_HEADER.size
    if len(data) < hs:
        raise FormatError(f"truncated header: need {hs} bytes, have {len(data)}", len(data))
    magic, version, c, dx, dy, dz, ox, oy, oz, cx, cy, cz, kind = _GRID_HEADER.unpack_from(
        data, 0
    )
    if magic != GRID_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {GRID_MAGIC!r}", 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if c < 1 or c > 255:
        raise FormatError(f"class_count {c} out of range [1, 255]", 6)
    if dx < 1 or dy < 1 or dz < 1:
        raise FormatError(f"non-positive dims ({dx}, {dy}, {dz})", 8)
    v = dx * dy * dz
    if v > MAX_VOXELS:
        raise CapacityError(f"grid of {v} voxels exceeds the addressable limit of {MAX_VOXELS}")
    if kind not in (0, 1):
        raise FormatError(f"unknown payload_kind {kind}", hs - 1)
    expected = v + (v * c * 4 if kind == 1 else 0)
    actual = len(data) - hs
    if actual != expected:
        raise FormatError(f"payload is {actual} bytes, expected {expected}", hs)
    if not all(s > 0 for s in (cx, cy, cz)):
        raise FormatError(f"non-positive cell size ({cx}, {cy}, {cz})", 20)
    labels = np.frombuffer(data, dtype=np.uint8, offset=hs, count=v)
    scores = None
    if kind == 1:
        scores = np.frombuffer(data, dtype="<f4", offset=hs + v).reshape(v, c)
    spec = GridSpec((ox, oy, oz), (cx, cy, cz), (dx, dy, dz))
    try:
        return OccupancyGrid(spec, c, labels.copy(), None if scores is None else scores.copy())
    except ValueError as e:
        raise FormatError(str(e), hs) from e


def _shape_mask(shape: dict, centers: np.ndarray) -> np.ndarray:
    kind = shape.get("kind")
    if kind == "box":
        lo = np.asarray(shape["min"], dtype=np.float64)
        hi = np.asarray(shape["max"], dtype=np.float64)
        return np.all((centers >= lo) & (centers <= hi), axis=1)
    if kind == "sphere":
        ctr = np.asarray(shape["center"], dtype=np.float64)
        r = float(shape["radius"])
        return np.sum((centers - ctr) ** 2, axis=1) <= r * r
    if kind == "plane":
        axis = shape["axis"]
        if isinstance(axis, str):
            axis = "xyz".index(axis)
        half = 0.5 * float(shape.get("thickness", 0.0))
        return np.abs(centers[:, axis] - float(shape["offset"])) <= half
    raise ValueError(f"unknown shape kind {kind!r}")


def gen_synthetic(
    spec: GridSpec,
    shapes: list[dict],
    class_count: int,
    emit_scene: bool = False,
    seed: int = 0,
):
    """Rasterize simple shapes into a labeled grid; later shapes overwrite.

    Each shape dict carries ``kind`` (box / sphere / plane), ``cls`` and its
    pose fields.  With ``emit_scene`` a generating GaussianScene is returned
    as well: one small gaussian per occupied voxel whose cutoff splat
    reproduces the labels on the non-empty voxels.
    """
    centers = spec.voxel_centers()
    labels = np.zeros(spec.num_voxels, dtype=np.uint8)
    for shape in shapes:
        cls = int(shape["cls"])
        if not (0 <= cls < class_count):
            raise ValueError(f"shape class {cls} out of range for {class_count} classes")
        labels[_shape_mask(shape, centers)] = cls
    grid = OccupancyGrid(spec, class_count, labels)
    if not emit_scene:
        return grid

    occupied = np.flatnonzero(labels != 0)
    n = occupied.size
    cell = np.asarray(spec.cell_size)
    scales = np.tile((0.4 * cell).astype(np.float32), (n, 1))
    rotations = np.zeros((n, 4), dtype=np.float32)
    rotations[:, 0] = 1.0
    sem = np.full((n, class_count), 0.1 / max(1, class_count - 1), dtype=np.float32)
    sem[np.arange(n), labels[occupied]] = 0.9
    scene = GaussianScene(
        centers[occupied].astype(np.float32), scales, rotations, sem
    )
    return grid, scene
