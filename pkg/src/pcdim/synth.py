"""Synthetic scene generation and the brute-force occupancy oracle.

Primitives cover the archetypes the descriptor is built around: line
segments, planar rectangles, box volumes, and a tree-like composite (a
Gaussian crown of short random sticks whose apparent dimension drops from
volumetric to linear as the level deepens). Generation is deterministic
given the scene seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .pointio import PointData


@dataclass
class Primitive:
    class_label: int = 0
    intensity_mean: float = 100.0
    intensity_sigma: float = 5.0
    max_echo: int = 1


@dataclass
class LineSegment(Primitive):
    start: tuple = (0.0, 0.0, 0.0)
    end: tuple = (1.0, 0.0, 0.0)
    density: float = 100.0  # points per meter

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        a, b = np.asarray(self.start, float), np.asarray(self.end, float)
        length = float(np.linalg.norm(b - a))
        n = max(1, int(round(self.density * length)))
        t = rng.uniform(0.0, 1.0, size=n)
        return a + t[:, None] * (b - a)


@dataclass
class PlaneRect(Primitive):
    origin: tuple = (0.0, 0.0, 0.0)
    u: tuple = (1.0, 0.0, 0.0)
    v: tuple = (0.0, 1.0, 0.0)
    density: float = 1000.0  # points per square meter

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        o = np.asarray(self.origin, float)
        u, v = np.asarray(self.u, float), np.asarray(self.v, float)
        area = float(np.linalg.norm(np.cross(u, v)))
        n = max(1, int(round(self.density * area)))
        s = rng.uniform(0.0, 1.0, size=(n, 2))
        return o + s[:, :1] * u + s[:, 1:] * v


@dataclass
class BoxVolume(Primitive):
    lo: tuple = (0.0, 0.0, 0.0)
    size: tuple = (1.0, 1.0, 1.0)
    density: float = 10000.0  # points per cubic meter

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        lo = np.asarray(self.lo, float)
        size = np.asarray(self.size, float)
        n = max(1, int(round(self.density * float(np.prod(size)))))
        return lo + rng.uniform(0.0, 1.0, size=(n, 3)) * size


@dataclass
class TreeCrown(Primitive):
    """Volumetric crown of short line clusters (sticks).

    Stick anchors spread across the whole crown so coarse levels look
    volumetric; each stick is sampled densely enough to look linear at the
    deep levels.
    """

    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0
    n_sticks: int = 40
    stick_length: float | None = None   # default radius/2
    points_per_stick: int = 12

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        c = np.asarray(self.center, float)
        length = self.stick_length if self.stick_length is not None else self.radius / 2.0
        anchors = c + rng.uniform(-self.radius, self.radius, size=(self.n_sticks, 3))
        dirs = rng.normal(size=(self.n_sticks, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        t = rng.uniform(0.0, 1.0, size=(self.n_sticks, self.points_per_stick, 1))
        pts = anchors[:, None, :] + t * dirs[:, None, :] * length
        return pts.reshape(-1, 3)


@dataclass
class SceneSpec:
    primitives: list = field(default_factory=list)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise DataError("noise sigma must be >= 0")


_PRIMITIVE_TYPES = {
    "line": LineSegment,
    "plane": PlaneRect,
    "box": BoxVolume,
    "tree": TreeCrown,
}


def scene_from_json(path: str) -> SceneSpec:
    """Load a SceneSpec from a JSON document ({"seed", "noise_sigma",
    "primitives": [{"type": ..., ...}, ...]})."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    prims = []
    for entry in doc.get("primitives", []):
        entry = dict(entry)
        kind = entry.pop("type", None)
        if kind not in _PRIMITIVE_TYPES:
            raise DataError(f"unknown primitive type {kind!r}")
        cls = _PRIMITIVE_TYPES[kind]
        try:
            prims.append(cls(**{k: tuple(v) if isinstance(v, list) else v
                                for k, v in entry.items()}))
        except TypeError as exc:
            raise DataError(f"bad {kind} primitive: {exc}") from None
    return SceneSpec(primitives=prims,
                     noise_sigma=float(doc.get("noise_sigma", 0.0)),
                     seed=int(doc.get("seed", 0)))


def generate(spec: SceneSpec) -> PointData:
    """Sample every primitive, attach labels/attributes, apply noise."""
    if not spec.primitives:
        raise DataError("scene spec has no primitives")
    rng = np.random.default_rng(spec.seed)
    xyz_parts, label_parts, inten_parts, echo_parts = [], [], [], []
    for prim in spec.primitives:
        pts = prim.sample(rng)
        n = pts.shape[0]
        xyz_parts.append(pts)
        label_parts.append(np.full(n, prim.class_label, dtype=np.int32))
        inten_parts.append(
            rng.normal(prim.intensity_mean, prim.intensity_sigma, size=n).astype(np.float32))
        echo_parts.append(rng.integers(1, prim.max_echo + 1, size=n).astype(np.int32))
    xyz = np.vstack(xyz_parts)
    if spec.noise_sigma > 0:
        xyz = xyz + rng.normal(0.0, spec.noise_sigma, size=xyz.shape)
    return PointData(
        xyz=xyz,
        intensity=np.concatenate(inten_parts),
        num_echo=np.concatenate(echo_parts),
        class_label=np.concatenate(label_parts),
        source="synth",
    )


def oracle_ppl(xyz: np.ndarray, cube_lo, cube_size, max_level: int) -> np.ndarray:
    """Ground-truth occupancy per level via an explicit dense voxel grid.

    Deliberately independent of the Morton-code path: per-axis quantization
    into a 2^L-cubed boolean grid, then a nonzero count.
    """
    if not 1 <= max_level <= 8:
        raise DataError("oracle grid only fits memory for levels 1..8")
    lo = np.asarray(cube_lo, dtype=np.float64)
    size = np.asarray(cube_size, dtype=np.float64)
    if (size <= 0).any():
        raise DataError(f"degenerate cube: size {size}")
    xyz = np.atleast_2d(xyz)
    counts = np.empty(max_level, dtype=np.int64)
    for level in range(1, max_level + 1):
        n = 2 ** level
        q = np.floor((xyz - lo) / size * n).astype(np.int64)
        q = np.clip(q, 0, n - 1)
        grid = np.zeros((n, n, n), dtype=bool)
        grid[q[:, 0], q[:, 1], q[:, 2]] = True
        counts[level - 1] = int(grid.sum())
    return counts
