"""Scalar geometric dimensionality from ppl vectors and from the structure tensor.

Two per-level readings of a ppl vector are fused into one estimate in [0, 3]:

    static      lods[i] = log2(ppl[i]) / i
    difference  lodd[1] = log2(ppl[1]),  lodd[i] = log2(ppl[i] / ppl[i-1])

(the level-0 count is implicit and = 1). Their union, plotted against the
level index, is fit either by a robust RANSAC line (value at the middle of
the abscissa, slope as confidence) or by a median/MAD inlier mean.

The covariance baseline converts structure-tensor eigenvalues into the
probability triple [p_1D, p_2D, p_3D] via sqrt-eigenvalue differences and
reads the dimension as their index-weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import DataError
from .octree import PplVector

DIM_MIN, DIM_MAX = 0.0, 3.0


@dataclass
class DimProfile:
    """Per-level dimensionality readings of one ppl vector."""

    levels: np.ndarray      # 1..n
    dim_lods: np.ndarray    # static mode
    dim_lodd: np.ndarray    # difference mode
    from_midoc: bool = False  # midoc counts under-estimate occupancy at deep levels

    def union_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Dim_LODA: static and difference values side by side, duplicated
        level abscissae kept."""
        x = np.concatenate([self.levels, self.levels]).astype(np.float64)
        y = np.concatenate([self.dim_lods, self.dim_lodd])
        return x, y


@dataclass
class DimEstimate:
    value: float
    confidence: float
    method: str            # "ransac" | "median"
    clamped: bool = False


@dataclass
class CovDim:
    """Structure-tensor dimensionality: probabilities for 1D/2D/3D and their
    index-weighted sum in [1, 3]."""

    p_dim: np.ndarray
    value: float


def dim_profile(ppl: PplVector) -> DimProfile:
    """Per-level static and difference dimensionality of a ppl vector.

    Saturated levels (ppl[i] == ppl[i-1]) legitimately give lodd = 0. Any
    zero count makes the level empty and is an error.
    """
    counts = ppl.counts.astype(np.float64)
    if (counts <= 0).any():
        level = int(np.nonzero(counts <= 0)[0][0]) + 1
        raise DataError(f"ppl level {level} has count 0; dimensionality undefined")
    levels = np.arange(1, ppl.max_level + 1, dtype=np.float64)
    lods = np.log2(counts) / levels
    prev = np.concatenate([[1.0], counts[:-1]])  # implicit level-0 count
    lodd = np.log2(counts / prev)
    return DimProfile(levels=levels, dim_lods=lods, dim_lodd=lodd,
                      from_midoc=ppl.mode == "midoc")


def _clamp(value: float) -> tuple[float, bool]:
    clamped = not DIM_MIN <= value <= DIM_MAX
    return float(min(max(value, DIM_MIN), DIM_MAX)), clamped


def dim_lod_ransac(profile: DimProfile, iterations: int = 100,
                   inlier_tol: float = 0.15, seed: int | None = None) -> DimEstimate:
    """Robust line fit over the union profile; the line's value at the middle
    of the abscissa range is the dimension, |slope| the confidence (0 ideal).

    Two-point samples; consensus by |residual| <= inlier_tol; ties broken by
    inlier residual sum, then sample order. When `iterations` covers all
    point pairs the enumeration is exhaustive and the result is independent
    of the seed.
    """
    x, y = profile.union_points()
    if x.size < 2:
        raise DataError("profile needs at least 2 points for a line fit")
    if np.ptp(x) == 0:
        raise DataError("all profile points share one abscissa; line fit undefined")

    pairs = [(i, j) for i, j in combinations(range(x.size), 2) if x[i] != x[j]]
    if iterations < len(pairs):
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(pairs), size=iterations, replace=False)
        pairs = [pairs[int(c)] for c in chosen]

    best = None  # (n_inliers, -residual_sum, order, mask)
    for order, (i, j) in enumerate(pairs):
        a = (y[j] - y[i]) / (x[j] - x[i])
        b = y[i] - a * x[i]
        resid = np.abs(y - (a * x + b))
        mask = resid <= inlier_tol
        key = (int(mask.sum()), -float(resid[mask].sum()), -order)
        if best is None or key > best[0]:
            best = (key, mask)
    mask = best[1]

    # least-squares refit on the consensus set
    a, b = np.polyfit(x[mask], y[mask], 1) if np.ptp(x[mask]) > 0 else (0.0, float(y[mask].mean()))
    x_mid = (x.min() + x.max()) / 2.0
    value, clamped = _clamp(a * x_mid + b)
    return DimEstimate(value=value, confidence=abs(float(a)),
                       method="ransac", clamped=clamped)


def dim_lod_median(profile: DimProfile, mad_factor: float = 2.5) -> DimEstimate:
    """Median/MAD inlier filter over the union profile, then the inlier mean.

    Confidence is the inlier fraction. A zero MAD keeps only the points equal
    to the median.
    """
    _, y = profile.union_points()
    if y.size == 0:
        raise DataError("empty profile")
    med = float(np.median(y))
    dev = np.abs(y - med)
    mad = float(np.median(dev))
    if mad == 0:
        mask = y == med
    else:
        mask = dev <= mad_factor * mad
    value, clamped = _clamp(float(y[mask].mean()))
    return DimEstimate(value=value, confidence=float(mask.sum() / y.size),
                       method="median", clamped=clamped)


def dim_cov(xyz: np.ndarray) -> CovDim:
    """Structure-tensor dimensionality of a point set.

    Covariance about the barycentre, eigenvalues l1 >= l2 >= l3, s_i =
    sqrt(l_i); p = [(s1-s2)/s1, (s2-s3)/s1, s3/s1] renormalized to sum 1.
    """
    xyz = np.atleast_2d(np.asarray(xyz, dtype=np.float64))
    if xyz.shape[0] < 3:
        raise DataError(f"dimensionality undefined for {xyz.shape[0]} point(s); need >= 3")
    centered = xyz - xyz.mean(axis=0)
    cov = centered.T @ centered / xyz.shape[0]
    eigvals = np.linalg.eigvalsh(cov)[::-1]
    sigma = np.sqrt(np.clip(eigvals, 0.0, None))
    if sigma[0] <= 0:
        raise DataError("all points coincide; dimensionality undefined")
    p = np.array([sigma[0] - sigma[1], sigma[1] - sigma[2], sigma[2]]) / sigma[0]
    p = p / p.sum()
    return CovDim(p_dim=p, value=float(np.dot([1.0, 2.0, 3.0], p)))


@dataclass
class AgreementReport:
    """How often the octree and covariance dimensions agree below a threshold."""

    threshold: float
    n_patches: int
    patch_fraction: float
    point_fraction: float
    pearson: float
    spearman: float
    disagreeing: list = field(default_factory=list)  # (patch_id, |diff|), worst first

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "n_patches": self.n_patches,
            "patch_fraction": self.patch_fraction,
            "point_fraction": self.point_fraction,
            "pearson": self.pearson,
            "spearman": self.spearman,
            "disagreeing": [[pid, d] for pid, d in self.disagreeing],
        }


def _rank(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    ranks[order] = np.arange(1, values.size + 1)
    # average ranks over ties
    for v in np.unique(values):
        tie = values == v
        if tie.sum() > 1:
            ranks[tie] = ranks[tie].mean()
    return ranks


def _corr(a: np.ndarray, b: np.ndarray) -> float:
    # constant inputs agree perfectly by convention
    if a.size < 2 or np.ptp(a) == 0 or np.ptp(b) == 0:
        return 1.0
    return float(np.corrcoef(a, b)[0, 1])


def agreement_report(patch_ids, dim_lod, dim_cov_values, point_counts,
                     threshold: float = 0.5) -> AgreementReport:
    """Compare per-patch Dim_LOD and Dim_cov at the given agreement threshold.

    Correlations are computed over the agreeing subset only; disagreeing
    patch ids come back sorted by |difference| for inspection.
    """
    lod = np.asarray(dim_lod, dtype=np.float64)
    cov = np.asarray(dim_cov_values, dtype=np.float64)
    counts = np.asarray(point_counts, dtype=np.float64)
    ids = list(patch_ids)
    if not (len(ids) == lod.size == cov.size == counts.size):
        raise DataError("agreement inputs must be parallel arrays")
    diff = np.abs(lod - cov)
    agree = diff <= threshold
    pearson = _corr(lod[agree], cov[agree])
    spearman = _corr(_rank(lod[agree]), _rank(cov[agree]))
    bad = np.nonzero(~agree)[0]
    bad = bad[np.argsort(-diff[bad], kind="stable")]
    return AgreementReport(
        threshold=threshold,
        n_patches=len(ids),
        patch_fraction=float(agree.mean()),
        point_fraction=float(counts[agree].sum() / counts.sum()),
        pearson=pearson,
        spearman=spearman,
        disagreeing=[(ids[i], float(diff[i])) for i in bad],
    )
