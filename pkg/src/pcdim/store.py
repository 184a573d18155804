"""File-based patch store: grid partitioning, per-patch statistics, queries.

Points are regrouped into axis-aligned grid cells ("patches"): 3-D cubes for
terrestrial data or 2-D columns (z unbounded) for airborne data. Cells are
half-open intervals [lo, hi) aligned to multiples of the cell size from a
configurable origin, so partitioning is deterministic.

On disk a store is one directory:

    manifest.txt   grid spec, attribute schema, reference height, and one
                   index line per patch carrying its cached statistics
    patches.bin    per-patch binary blocks, little-endian: a uint32 point
                   count, then count x 3 float64 xyz triples, then one
                   32-bit column per attribute present (intensity float32,
                   num_echo int32, class int32)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .pointio import PointData

_MANIFEST_MAGIC = "pcdim-store 1"


@dataclass(frozen=True)
class GridSpec:
    """Partitioning grid: per-axis cell edge lengths and origin.

    Cubic mode bounds all three axes and requires equal edges; columnar
    mode bins on x,y only (k is fixed to 0) for airborne-style data.
    """

    cell_size: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    columnar: bool = False

    def __post_init__(self):
        if any(not (s > 0) for s in self.cell_size):
            raise DataError(f"grid cell sizes must be > 0, got {self.cell_size}")
        if not self.columnar:
            sx, sy, sz = self.cell_size
            if not (sx == sy == sz):
                raise DataError(f"cubic grid needs equal edge lengths, got {self.cell_size}")

    @classmethod
    def cubic(cls, edge: float, origin=(0.0, 0.0, 0.0)) -> "GridSpec":
        return cls((edge, edge, edge), tuple(origin), columnar=False)

    @classmethod
    def columnar_grid(cls, edge_xy: float, origin=(0.0, 0.0, 0.0)) -> "GridSpec":
        return cls((edge_xy, edge_xy, edge_xy), tuple(origin), columnar=True)

    def cell_index(self, xyz: np.ndarray) -> np.ndarray:
        """Integer (i,j,k) per point; half-open cells, k=0 in columnar mode."""
        rel = (np.atleast_2d(xyz) - np.asarray(self.origin)) / np.asarray(self.cell_size)
        idx = np.floor(rel).astype(np.int64)
        if self.columnar:
            idx[:, 2] = 0
        return idx

    def cell_bounds(self, index) -> tuple[np.ndarray, np.ndarray]:
        """(lo, hi) corners of a cell; hi z is +inf in columnar mode."""
        idx = np.asarray(index, dtype=np.float64)
        lo = np.asarray(self.origin) + idx * np.asarray(self.cell_size)
        hi = lo + np.asarray(self.cell_size)
        if self.columnar:
            lo[2], hi[2] = -np.inf, np.inf
        return lo, hi

    def cell_center(self, index) -> np.ndarray:
        """Cell center; z center is 0 in columnar mode (columns share one z)."""
        idx = np.asarray(index, dtype=np.float64)
        c = np.asarray(self.origin) + (idx + 0.5) * np.asarray(self.cell_size)
        if self.columnar:
            c[2] = 0.0
        return c


@dataclass
class PatchStats:
    """Cached per-patch statistics (what the feature set needs)."""

    count: int
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    z_min: float
    z_max: float
    z_mean: float
    altitude_mean: float
    intensity_min: float | None = None
    intensity_max: float | None = None
    intensity_mean: float | None = None
    num_echo_min: float | None = None
    num_echo_max: float | None = None
    num_echo_mean: float | None = None

    def value(self, name: str) -> float | None:
        """Look up a stat by its query name (e.g. 'z_mean', 'altitude', 'count')."""
        if name == "altitude":
            return self.altitude_mean
        if name == "count":
            return float(self.count)
        if hasattr(self, name):
            return getattr(self, name)
        raise DataError(f"unknown patch stat {name!r}")


def compute_stats(points: PointData, reference_height: float) -> PatchStats:
    """Recompute statistics from raw points (also used to verify cached ones)."""
    xyz = points.xyz
    z = xyz[:, 2]
    stats = PatchStats(
        count=xyz.shape[0],
        bbox_min=xyz.min(axis=0),
        bbox_max=xyz.max(axis=0),
        z_min=float(z.min()),
        z_max=float(z.max()),
        z_mean=float(z.mean()),
        altitude_mean=float(z.mean()) - reference_height,
    )
    if points.intensity is not None:
        v = points.intensity.astype(np.float64)
        stats.intensity_min = float(v.min())
        stats.intensity_max = float(v.max())
        stats.intensity_mean = float(v.mean())
    if points.num_echo is not None:
        v = points.num_echo.astype(np.float64)
        stats.num_echo_min = float(v.min())
        stats.num_echo_max = float(v.max())
        stats.num_echo_mean = float(v.mean())
    return stats


@dataclass
class Patch:
    """One grid cell worth of points plus cached statistics."""

    patch_id: str
    grid_index: tuple[int, int, int]
    points: PointData
    stats: PatchStats
    dominant_class: int | None = None
    mix: float | None = None

    def __len__(self) -> int:
        return len(self.points)


def patch_id_for(index) -> str:
    i, j, k = (int(v) for v in index)
    return f"p_{i}_{j}_{k}"


def _dominant_and_mix(labels: np.ndarray) -> tuple[int, float]:
    values, counts = np.unique(labels, return_counts=True)
    top = int(np.argmax(counts))
    return int(values[top]), float(counts[top] / labels.size)


@dataclass
class PatchStore:
    """Immutable after ingest; all lookups run off the in-memory index."""

    grid: GridSpec
    reference_height: float
    patches: dict[tuple[int, int, int], Patch] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.patches)

    def __iter__(self):
        return iter(self.ordered())

    @property
    def attributes(self) -> tuple[str, ...]:
        first = next(iter(self.patches.values()))
        return first.points.attributes

    def ordered(self) -> list[Patch]:
        """Patches in deterministic grid-index order."""
        return [self.patches[k] for k in sorted(self.patches)]

    def get(self, patch_id: str) -> Patch:
        for p in self.patches.values():
            if p.patch_id == patch_id:
                return p
        raise KeyError(patch_id)

    # -- queries ----------------------------------------------------------

    def query(self, box=None, polygon=None, attr_ranges=None) -> list[Patch]:
        """Patches whose bbox intersects the spatial filter and whose stats
        satisfy every attribute range predicate.

        box: (x0, y0, z0, x1, y1, z1); polygon: Nx2 xy ring or a shapely
        Polygon; attr_ranges: {stat_name: (lo, hi)} closed intervals.
        """
        prepared_poly = None
        if polygon is not None:
            from shapely.geometry import Polygon

            poly = polygon if isinstance(polygon, Polygon) else Polygon(np.asarray(polygon))
            if not poly.is_valid or poly.area <= 0:
                raise DataError("degenerate polygon filter (zero area)")
            prepared_poly = poly
        if box is not None:
            x0, y0, z0, x1, y1, z1 = box
            if x1 < x0 or y1 < y0 or z1 < z0:
                raise DataError(f"malformed box {box}: max corner below min corner")

        out = []
        for patch in self.ordered():
            lo, hi = patch.stats.bbox_min, patch.stats.bbox_max
            if box is not None:
                if hi[0] < x0 or lo[0] > x1 or hi[1] < y0 or lo[1] > y1 \
                        or hi[2] < z0 or lo[2] > z1:
                    continue
            if prepared_poly is not None:
                from shapely.geometry import box as shp_box

                if not prepared_poly.intersects(shp_box(lo[0], lo[1], hi[0], hi[1])):
                    continue
            if attr_ranges and not self._stats_match(patch, attr_ranges):
                continue
            out.append(patch)
        return out

    @staticmethod
    def _stats_match(patch: Patch, attr_ranges) -> bool:
        for name, (lo, hi) in attr_ranges.items():
            v = patch.stats.value(name)
            if v is None:
                raise DataError(f"stat {name!r} not available (attribute missing from store)")
            if not (lo <= v <= hi):
                return False
        return True

    def neighbors(self, seed, radius_xy: float, radius_z: float) -> set[tuple[int, int, int]]:
        """Seed cells plus every stored cell whose center is within radius_xy
        of a seed center in x and in y, and radius_z in z. Extensive and
        monotone in the radii; radius 0 is the identity.
        """
        if radius_xy < 0 or radius_z < 0:
            raise DataError("dilation radii must be >= 0")
        seed_idx = set()
        for s in seed:
            if isinstance(s, Patch):
                seed_idx.add(s.grid_index)
            elif isinstance(s, str):
                seed_idx.add(self.get(s).grid_index)
            else:
                seed_idx.add(tuple(int(v) for v in s))

        sx, sy, sz = self.grid.cell_size
        eps = 1e-9
        di_max = int(math.floor(radius_xy / sx + eps))
        dj_max = int(math.floor(radius_xy / sy + eps))
        dk_max = 0 if self.grid.columnar else int(math.floor(radius_z / sz + eps))
        offsets = [(di, dj, dk)
                   for di in range(-di_max, di_max + 1)
                   for dj in range(-dj_max, dj_max + 1)
                   for dk in range(-dk_max, dk_max + 1)]

        result = set(seed_idx)
        for (i, j, k) in seed_idx:
            for di, dj, dk in offsets:
                cand = (i + di, j + dj, k + dk)
                if cand in self.patches:
                    result.add(cand)
        return result

    def patches_for_indices(self, indices) -> list[Patch]:
        return [self.patches[idx] for idx in sorted(indices)]

    # -- persistence -------------------------------------------------------

    def save(self, store_dir) -> None:
        store_dir = Path(store_dir)
        store_dir.mkdir(parents=True, exist_ok=True)
        attrs = self.attributes
        lines = [
            _MANIFEST_MAGIC,
            f"mode: {'columnar' if self.grid.columnar else 'cubic'}",
            f"cell_size: {_floats(self.grid.cell_size)}",
            f"origin: {_floats(self.grid.origin)}",
            f"reference_height: {self.reference_height!r}",
            f"attributes: {' '.join(attrs) if attrs else '-'}",
            f"patch_count: {len(self.patches)}",
            "patches:",
        ]
        offset = 0
        with open(store_dir / "patches.bin", "wb") as blob:
            for patch in self.ordered():
                n = len(patch)
                blob.write(np.uint32(n).astype("<u4").tobytes())
                blob.write(patch.points.xyz.astype("<f8").tobytes())
                if patch.points.intensity is not None:
                    blob.write(patch.points.intensity.astype("<f4").tobytes())
                if patch.points.num_echo is not None:
                    blob.write(patch.points.num_echo.astype("<i4").tobytes())
                if patch.points.class_label is not None:
                    blob.write(patch.points.class_label.astype("<i4").tobytes())
                s = patch.stats
                fields = [
                    patch.patch_id,
                    *map(str, patch.grid_index),
                    str(offset), str(n),
                    "-" if patch.dominant_class is None else str(patch.dominant_class),
                    "-" if patch.mix is None else repr(patch.mix),
                    _floats(s.bbox_min), _floats(s.bbox_max),
                    repr(s.z_min), repr(s.z_max), repr(s.z_mean), repr(s.altitude_mean),
                ]
                if "intensity" in attrs:
                    fields += [repr(s.intensity_min), repr(s.intensity_max),
                               repr(s.intensity_mean)]
                if "num_echo" in attrs:
                    fields += [repr(s.num_echo_min), repr(s.num_echo_max),
                               repr(s.num_echo_mean)]
                lines.append(" ".join(fields))
                offset = blob.tell()
        (store_dir / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, store_dir) -> "PatchStore":
        store_dir = Path(store_dir)
        manifest = store_dir / "manifest.txt"
        if not manifest.exists():
            raise DataError(f"{manifest}: no such store manifest")
        lines = manifest.read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != _MANIFEST_MAGIC:
            raise DataError(f"{manifest}: not a pcdim store (bad magic)")
        header: dict[str, str] = {}
        body_at = None
        for ln, line in enumerate(lines[1:], start=1):
            if line.strip() == "patches:":
                body_at = ln + 1
                break
            key, _, value = line.partition(":")
            header[key.strip()] = value.strip()
        if body_at is None:
            raise DataError(f"{manifest}: missing patches section")

        grid = GridSpec(
            cell_size=tuple(float(v) for v in header["cell_size"].split()),
            origin=tuple(float(v) for v in header["origin"].split()),
            columnar=header["mode"] == "columnar",
        )
        ref = float(header["reference_height"])
        attrs = tuple(header["attributes"].split()) if header["attributes"] != "-" else ()
        store = cls(grid=grid, reference_height=ref)

        blob = (store_dir / "patches.bin").read_bytes()
        for line in lines[body_at:]:
            if not line.strip():
                continue
            store._load_patch_line(line, attrs, blob)
        if len(store) != int(header["patch_count"]):
            raise DataError(f"{manifest}: patch_count mismatch")
        if not store.patches:
            raise DataError(f"{manifest}: store holds no patches")
        return store

    def _load_patch_line(self, line: str, attrs, blob: bytes) -> None:
        f = line.split()
        pid, idx = f[0], (int(f[1]), int(f[2]), int(f[3]))
        offset, n = int(f[4]), int(f[5])
        dom = None if f[6] == "-" else int(f[6])
        mix = None if f[7] == "-" else float(f[7])
        pos = 8
        bbox_min = np.array([float(v) for v in f[pos:pos + 3]]); pos += 3
        bbox_max = np.array([float(v) for v in f[pos:pos + 3]]); pos += 3
        z_min, z_max, z_mean, alt = (float(v) for v in f[pos:pos + 4]); pos += 4
        stats = PatchStats(count=n, bbox_min=bbox_min, bbox_max=bbox_max,
                           z_min=z_min, z_max=z_max, z_mean=z_mean, altitude_mean=alt)
        if "intensity" in attrs:
            stats.intensity_min, stats.intensity_max, stats.intensity_mean = \
                (float(v) for v in f[pos:pos + 3])
            pos += 3
        if "num_echo" in attrs:
            stats.num_echo_min, stats.num_echo_max, stats.num_echo_mean = \
                (float(v) for v in f[pos:pos + 3])
            pos += 3

        declared = np.frombuffer(blob, dtype="<u4", count=1, offset=offset)[0]
        if declared != n:
            raise DataError(f"patch {pid}: block count {declared} != manifest count {n}")
        at = offset + 4
        xyz = np.frombuffer(blob, dtype="<f8", count=3 * n, offset=at).reshape(n, 3).copy()
        at += 24 * n
        intensity = num_echo = labels = None
        if "intensity" in attrs:
            intensity = np.frombuffer(blob, dtype="<f4", count=n, offset=at).copy()
            at += 4 * n
        if "num_echo" in attrs:
            num_echo = np.frombuffer(blob, dtype="<i4", count=n, offset=at).copy()
            at += 4 * n
        if "class" in attrs:
            labels = np.frombuffer(blob, dtype="<i4", count=n, offset=at).copy()
        points = PointData(xyz=xyz, intensity=intensity, num_echo=num_echo,
                           class_label=labels, source=pid)
        self.patches[idx] = Patch(patch_id=pid, grid_index=idx, points=points,
                                  stats=stats, dominant_class=dom, mix=mix)


def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def ingest(data: PointData, grid: GridSpec, reference_height: float = 0.0) -> PatchStore:
    """Partition point records into grid patches and compute their statistics.

    Every point lands in exactly one patch (half-open cells). dominant_class
    and mix are filled in when the stream carries class labels.
    """
    if len(data) == 0:
        raise DataError("cannot ingest an empty point stream")
    idx = grid.cell_index(data.xyz)
    order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0]))
    sorted_idx = idx[order]
    boundaries = np.nonzero((np.diff(sorted_idx, axis=0) != 0).any(axis=1))[0] + 1
    groups = np.split(order, boundaries)

    store = PatchStore(grid=grid, reference_height=reference_height)
    for rows in groups:
        cell = tuple(int(v) for v in idx[rows[0]])
        pts = data.take(np.sort(rows))
        stats = compute_stats(pts, reference_height)
        patch = Patch(patch_id=patch_id_for(cell), grid_index=cell, points=pts, stats=stats)
        if pts.class_label is not None:
            patch.dominant_class, patch.mix = _dominant_and_mix(pts.class_label)
        store.patches[cell] = patch
    return store
