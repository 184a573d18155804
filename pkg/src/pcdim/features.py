"""Per-patch feature vectors for classification.

Feature-set profiles mirror the two acquisition styles: terrestrial
("paris": relative altitude, footprint area, patch height) and airborne
("vosges": mean z), both on top of the normalized ppl counts and the
intensity/echo means. Occupancy counts are normalized by the maximum
number of cells per level (8^L) so every ppl feature lies in (0, 1].

Profiles fail loudly when the store lacks a required attribute; nothing is
imputed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, SchemaError
from .octree import PplVector
from .store import Patch

PPL_FEATURES = ("ppl_norm_1", "ppl_norm_2", "ppl_norm_3", "ppl_norm_4")

PROFILES = {
    "paris": (*PPL_FEATURES, "mean_intensity", "mean_num_echo",
              "mean_altitude", "bbox_area_2d", "patch_height"),
    "vosges": (*PPL_FEATURES, "mean_intensity", "mean_num_echo", "mean_z"),
}

# which store attribute a feature needs, beyond coordinates
_FEATURE_SOURCE = {
    "mean_intensity": "intensity",
    "mean_num_echo": "num_echo",
}


@dataclass
class FeatureVector:
    patch_id: str
    profile: str
    names: tuple
    values: np.ndarray
    label: int | None = None
    mix: float | None = None

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.values))


def profile_features(profile, custom=None) -> tuple:
    if profile == "custom":
        if not custom:
            raise DataError("custom profile needs an explicit feature list")
        return tuple(custom)
    if profile not in PROFILES:
        raise DataError(f"unknown feature profile {profile!r}")
    return PROFILES[profile]


def validate_profile(profile: str, attributes, custom=None) -> tuple:
    """Check the store schema carries everything the profile needs."""
    names = profile_features(profile, custom)
    missing = sorted({_FEATURE_SOURCE[n] for n in names
                      if n in _FEATURE_SOURCE and _FEATURE_SOURCE[n] not in attributes})
    if missing:
        raise SchemaError(
            f"profile {profile!r} needs attribute(s) {missing} absent from the store")
    return names


def _feature_value(name: str, patch: Patch, ppl: PplVector) -> float:
    s = patch.stats
    if name.startswith("ppl_norm_"):
        level = int(name.rsplit("_", 1)[1])
        if level > ppl.max_level:
            raise DataError(f"feature {name} needs ppl level {level}, "
                            f"got {ppl.max_level} levels")
        return ppl[level] / float(8 ** level)
    if name == "mean_intensity":
        return s.intensity_mean
    if name == "mean_num_echo":
        return s.num_echo_mean
    if name == "mean_z":
        return s.z_mean
    if name == "mean_altitude":
        return s.altitude_mean
    if name == "bbox_area_2d":
        return float((s.bbox_max[0] - s.bbox_min[0]) * (s.bbox_max[1] - s.bbox_min[1]))
    if name == "patch_height":
        return float(s.bbox_max[2] - s.bbox_min[2])
    if name == "footprint_area_2d":
        return footprint_area_2d(patch.points.xyz)
    raise DataError(f"unknown feature {name!r}")


def extract_features(patch: Patch, ppl: PplVector, profile: str = "paris",
                     custom=None) -> FeatureVector:
    """Assemble one patch's feature vector for the given profile.

    Deterministic in (patch, ppl, profile). Raises SchemaError when a
    required source attribute is absent rather than imputing a value.
    """
    names = validate_profile(profile, patch.points.attributes, custom)
    values = np.array([_feature_value(n, patch, ppl) for n in names], dtype=np.float64)
    return FeatureVector(patch_id=patch.patch_id, profile=profile, names=names,
                         values=values, label=patch.dominant_class, mix=patch.mix)


def footprint_area_2d(xyz: np.ndarray, diameter: float = 0.05) -> float:
    """Disk-union footprint area: points stamped with the given diameter on a
    raster of diameter/2 resolution. Optional alternative to the bounding-box
    area when point footprints matter.
    """
    if diameter <= 0:
        raise DataError("footprint diameter must be > 0")
    xy = np.atleast_2d(xyz)[:, :2]
    res = diameter / 2.0
    r = diameter / 2.0
    lo = xy.min(axis=0) - diameter
    extent = np.maximum(xy.max(axis=0) + diameter - lo, res)
    shape = np.ceil(extent / res).astype(int) + 1
    grid = np.zeros(shape, dtype=bool)
    # candidate window around each point, pixel centers within r
    w = int(np.ceil(r / res)) + 1
    offs = np.array([(dx, dy) for dx in range(-w, w + 1) for dy in range(-w, w + 1)])
    pix = np.floor((xy - lo) / res).astype(int)
    for dx, dy in offs:
        cand = pix + (dx, dy)
        centers = lo + (cand + 0.5) * res
        ok = ((centers - xy) ** 2).sum(axis=1) <= r * r
        ok &= (cand >= 0).all(axis=1) & (cand < shape).all(axis=1)
        grid[cand[ok, 0], cand[ok, 1]] = True
    return float(grid.sum()) * res * res


# -- CSV surface shared by the CLI and the forest tooling -------------------

def write_features_csv(path, rows: list[FeatureVector]) -> None:
    if not rows:
        raise DataError("no feature rows to write")
    names = rows[0].names
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("patch_id,label,mix," + ",".join(names) + "\n")
        for fv in rows:
            label = "" if fv.label is None else str(fv.label)
            mix = "" if fv.mix is None else repr(float(fv.mix))
            vals = ",".join(repr(float(v)) for v in fv.values)
            fh.write(f"{fv.patch_id},{label},{mix},{vals}\n")


def read_features_csv(path):
    """Returns (patch_ids, labels or None, mixes or None, feature_names, X)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[:3] != ["patch_id", "label", "mix"]:
            raise DataError(f"{path}: not a features CSV")
        names = tuple(header[3:])
        ids, labels, mixes, rows = [], [], [], []
        for ln, line in enumerate(fh, start=2):
            parts = line.strip().split(",")
            if len(parts) != len(header):
                raise DataError(f"{path}:{ln}: expected {len(header)} fields")
            ids.append(parts[0])
            labels.append(None if parts[1] == "" else int(parts[1]))
            mixes.append(None if parts[2] == "" else float(parts[2]))
            try:
                rows.append([float(v) for v in parts[3:]])
            except ValueError:
                raise DataError(f"{path}:{ln}: non-numeric feature") from None
    if not rows:
        raise DataError(f"{path}: no feature rows")
    y = None if any(v is None for v in labels) else np.array(labels, dtype=np.int64)
    m = None if any(v is None for v in mixes) else np.array(mixes, dtype=np.float64)
    return ids, y, m, names, np.array(rows, dtype=np.float64)
