"""Octree-cell occupancy descriptor without building an octree.

Per-axis coordinates are quantized to level-L integer cells and interleaved
into 63-bit Morton keys; occupancy at any coarser level is a distinct-count
over right-shifted keys. The MidOc ordering picks one representative point
per occupied cell, level by level, skipping cells already covered by an
earlier pick, which encodes a level-of-detail gradient in the point order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .store import GridSpec, Patch

MAX_LEVEL = 21  # 3*21 = 63 bits


@dataclass
class PplVector:
    """Occupied-cell counts per octree level (level 0 is implicit and = 1)."""

    counts: np.ndarray          # int64, counts[i] is level i+1
    mode: str = "occupancy"     # "occupancy" | "midoc"

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.mode not in ("occupancy", "midoc"):
            raise DataError(f"unknown ppl mode {self.mode!r}")

    @property
    def max_level(self) -> int:
        return len(self.counts)

    def __getitem__(self, level: int) -> int:
        """1-based level access, matching the descriptor definition."""
        if not 1 <= level <= self.max_level:
            raise IndexError(f"level {level} outside 1..{self.max_level}")
        return int(self.counts[level - 1])


@dataclass
class MidOcOrdering:
    """Permutation of point indices listing per-level picks first.

    order[:boundaries[k]] are exactly the points picked for levels 1..k+1;
    unpicked points follow in input order.
    """

    order: np.ndarray
    level_counts: np.ndarray

    @property
    def boundaries(self) -> np.ndarray:
        return np.cumsum(self.level_counts)


def _part1by2(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64) & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def _compact1by2(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64) & np.uint64(0x1249249249249249)
    v = (v | (v >> np.uint64(2))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v >> np.uint64(4))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v >> np.uint64(8))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v >> np.uint64(16))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v >> np.uint64(32))) & np.uint64(0x1FFFFF)
    return v


def _check_cube(cube_lo, cube_size) -> tuple[np.ndarray, np.ndarray]:
    lo = np.asarray(cube_lo, dtype=np.float64)
    size = np.asarray(cube_size, dtype=np.float64)
    if (size <= 0).any():
        raise DataError(f"degenerate quantization cube: size {size}")
    return lo, size


def quantize(xyz: np.ndarray, cube_lo, cube_size, level: int) -> np.ndarray:
    """Per-axis cell indices floor((c - lo)/edge * 2^level), clamped into range.

    Points exactly on the max face land in the last cell.
    """
    if not 1 <= level <= MAX_LEVEL:
        raise DataError(f"level must be in 1..{MAX_LEVEL}, got {level}")
    lo, size = _check_cube(cube_lo, cube_size)
    n = 1 << level
    q = np.floor((np.atleast_2d(xyz) - lo) / size * n).astype(np.int64)
    return np.clip(q, 0, n - 1)


def morton_codes(xyz: np.ndarray, cube_lo, cube_size, level: int) -> np.ndarray:
    """Interleaved-bit cell keys for an array of points (x lowest bit)."""
    q = quantize(xyz, cube_lo, cube_size, level).astype(np.uint64)
    return (_part1by2(q[:, 0])
            | (_part1by2(q[:, 1]) << np.uint64(1))
            | (_part1by2(q[:, 2]) << np.uint64(2)))


def morton_code(point, cube_lo, cube_size, level: int) -> int:
    """Single-point convenience wrapper around morton_codes."""
    return int(morton_codes(np.asarray(point, dtype=np.float64).reshape(1, 3),
                            cube_lo, cube_size, level)[0])


def morton_cell_center(keys: np.ndarray, cube_lo, cube_size, level: int) -> np.ndarray:
    """Centers of the cells addressed by level-`level` Morton keys."""
    lo, size = _check_cube(cube_lo, cube_size)
    keys = np.asarray(keys, dtype=np.uint64)
    q = np.column_stack([
        _compact1by2(keys),
        _compact1by2(keys >> np.uint64(1)),
        _compact1by2(keys >> np.uint64(2)),
    ]).astype(np.float64)
    return lo + (q + 0.5) * size / (1 << level)


def patch_cube(patch: Patch, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Quantization cube of a patch: its grid cell, so ppl vectors are
    comparable across patches.

    In columnar mode the column is cropped to the patch z-extent rounded
    outward to the cell edge; flat patches keep one edge of height.
    """
    lo, hi = grid.cell_bounds(patch.grid_index)
    if grid.columnar:
        edge = grid.cell_size[2]
        oz = grid.origin[2]
        z_lo = oz + np.floor((patch.stats.z_min - oz) / edge) * edge
        z_hi = oz + np.ceil((patch.stats.z_max - oz) / edge) * edge
        if z_hi <= z_lo:
            z_hi = z_lo + edge
        lo = np.array([lo[0], lo[1], z_lo])
        hi = np.array([hi[0], hi[1], z_hi])
    return lo, hi - lo


def _distinct_sorted(sorted_keys: np.ndarray) -> int:
    if sorted_keys.size == 0:
        return 0
    return 1 + int(np.count_nonzero(np.diff(sorted_keys)))


def ppl_occupancy(xyz: np.ndarray, cube_lo, cube_size, max_level: int) -> PplVector:
    """Count occupied octree cells per level 1..max_level.

    A single key pass at max_level suffices: the level-l key of a point is
    its max-level key shifted right by 3*(max_level - l).
    """
    if not 1 <= max_level <= MAX_LEVEL:
        raise DataError(f"max_level must be in 1..{MAX_LEVEL}, got {max_level}")
    if np.atleast_2d(xyz).shape[0] < 1:
        raise DataError("patch has no points")
    keys = np.sort(morton_codes(xyz, cube_lo, cube_size, max_level))
    counts = np.empty(max_level, dtype=np.int64)
    for level in range(1, max_level + 1):
        shift = np.uint64(3 * (max_level - level))
        counts[level - 1] = _distinct_sorted(keys >> shift)
    return PplVector(counts=counts, mode="occupancy")


def ppl_for_patch(patch: Patch, grid: GridSpec, max_level: int) -> PplVector:
    lo, size = patch_cube(patch, grid)
    return ppl_occupancy(patch.points.xyz, lo, size, max_level)


def midoc_order(xyz: np.ndarray, cube_lo, cube_size,
                max_level: int) -> tuple[MidOcOrdering, PplVector]:
    """Pick one representative per occupied cell per level.

    Cells containing a point picked at an earlier level are already covered
    and are skipped, so picked points do not count for the next levels. The
    representative is the point closest to the cell center (ties broken by
    lowest input index). Returns the ordering and the midoc-mode ppl.
    """
    if not 1 <= max_level <= MAX_LEVEL:
        raise DataError(f"max_level must be in 1..{MAX_LEVEL}, got {max_level}")
    xyz = np.atleast_2d(np.asarray(xyz, dtype=np.float64))
    n = xyz.shape[0]
    if n < 1:
        raise DataError("patch has no points")
    lo, size = _check_cube(cube_lo, cube_size)
    keys_max = morton_codes(xyz, lo, size, max_level)
    picked = np.zeros(n, dtype=bool)
    pick_lists: list[np.ndarray] = []
    level_counts = np.zeros(max_level, dtype=np.int64)

    for level in range(1, max_level + 1):
        shift = np.uint64(3 * (max_level - level))
        keys = keys_max >> shift
        blocked = np.unique(keys[picked])
        cand = np.nonzero(~picked & ~np.isin(keys, blocked))[0]
        if cand.size == 0:
            pick_lists.append(np.empty(0, dtype=np.int64))
            continue
        centers = morton_cell_center(keys[cand], lo, size, level)
        dist2 = ((xyz[cand] - centers) ** 2).sum(axis=1)
        # group by cell key, then closest-to-center, then lowest index
        rank = np.lexsort((cand, dist2, keys[cand]))
        ordered = cand[rank]
        ordered_keys = keys[ordered]
        heads = np.ones(ordered.size, dtype=bool)
        heads[1:] = np.diff(ordered_keys) != 0
        picks = ordered[heads]
        picked[picks] = True
        pick_lists.append(picks)
        level_counts[level - 1] = picks.size

    rest = np.nonzero(~picked)[0]
    order = np.concatenate([*pick_lists, rest]).astype(np.int64)
    return (MidOcOrdering(order=order, level_counts=level_counts),
            PplVector(counts=level_counts, mode="midoc"))


def midoc_for_patch(patch: Patch, grid: GridSpec,
                    max_level: int) -> tuple[MidOcOrdering, PplVector]:
    lo, size = patch_cube(patch, grid)
    return midoc_order(patch.points.xyz, lo, size, max_level)
