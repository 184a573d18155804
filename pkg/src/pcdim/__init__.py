"""Patch-based point cloud analytics.

Partitions point clouds into grid patches, describes each patch by its
octree-cell occupancy per level (ppl), reduces that to a scalar geometric
dimensionality with a structure-tensor baseline for comparison, and feeds
simple patch features into a random-forest classifier whose confidence and
spatial structure support precision/recall boosting.
"""

from .errors import PcdimError, DataError, SchemaError
from .pointio import PointData, read_points, read_points_csv, read_points_ply
from .store import GridSpec, Patch, PatchStats, PatchStore, ingest
from .octree import PplVector, MidOcOrdering, morton_code, ppl_occupancy, midoc_order
from .dims import (DimProfile, DimEstimate, CovDim, dim_profile, dim_lod_ransac,
                   dim_lod_median, dim_cov, agreement_report)

__version__ = "0.1.0"
