"""Primitive-type recognition by lowest fitting error, and the two
approximation measures used to score fits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import fitters as ft
from . import geometry as geo
from . import hough as ht
from .geometry import PointCloud, PrimitiveParams


class ClassificationError(RuntimeError):
    """Raised when every family fit fails for a cloud."""


def mfe(cloud: PointCloud, prim: PrimitiveParams) -> float:
    """Mean point-to-surface distance normalized by the bbox diagonal."""
    if len(cloud) < 2:
        raise ValueError("mean fitting error is undefined for single-point clouds")
    l = geo.bbox_diagonal(cloud)
    if l == 0.0:
        raise ValueError("degenerate cloud: zero bounding-box diagonal")
    d = geo.distance_to_primitive(cloud.points, prim)
    return float(np.mean(d) / l)


def directed_hausdorff(cloud: PointCloud, prim: PrimitiveParams) -> float:
    """Largest point-to-surface distance over the cloud."""
    return float(np.max(geo.distance_to_primitive(cloud.points, prim)))


def mfe_sampled(cloud: PointCloud, prim: PrimitiveParams, n_samples: int = 50_000,
                rng=12345, extent: float | None = None) -> float:
    """MFE against a dense sampling of the surface instead of the closed form.

    Used to cross-check the analytic distance backend; the gap shrinks as
    ``n_samples`` grows.  ``extent`` defaults to twice the cloud's bbox
    diagonal for the unbounded families.
    """
    if len(cloud) < 2:
        raise ValueError("mean fitting error is undefined for single-point clouds")
    if extent is None:
        extent = 2.0 * geo.bbox_diagonal(cloud)
    surf = geo.sample_surface(prim, n_samples, rng, extent=extent)
    d, _ = cKDTree(surf.points).query(cloud.points)
    return float(np.mean(d) / geo.bbox_diagonal(cloud))


@dataclass(frozen=True)
class ClassifierConfig:
    use_hough: bool = False
    k_neighbors: int = 20
    bins: int = 64
    search_halfwidth: float = 0.25


@dataclass(frozen=True)
class ClassifiedFit:
    """Winning family plus the per-family error table of one cloud."""

    kind: int
    params: PrimitiveParams
    mfe_by_kind: dict[int, float]
    failures: dict[int, str] = field(default_factory=dict)


def _hough_family_fit(cloud: PointCloud, kind: int, normals: ft.NormalField,
                      config: ClassifierConfig) -> PrimitiveParams:
    if kind == geo.PLANE:
        return ht.hough_plane(cloud, (config.bins,) * 3)
    std = ht.standardize_pose(cloud, kind, normals)
    return ht.hough_refine(std, kind, bins=config.bins,
                           search_halfwidth=config.search_halfwidth)


def classify(cloud: PointCloud, config: ClassifierConfig | None = None) -> ClassifiedFit:
    """Fit all five families and return the one with the lowest MFE.

    Families whose fit raises, or whose refinement does not converge, are
    recorded as failures and skipped; exact ties break toward the lower kind
    code.  Raises ClassificationError only when every family fails.
    """
    config = config or ClassifierConfig()
    if len(cloud) < 10:
        raise ValueError("classification needs at least 10 points")
    k = min(config.k_neighbors, len(cloud) - 1)
    normals = ft.estimate_normals(cloud, k=k)
    table: dict[int, float] = {}
    params_by_kind: dict[int, PrimitiveParams] = {}
    failures: dict[int, str] = {}
    for kind in geo.ALL_KINDS:
        try:
            if config.use_hough:
                params = _hough_family_fit(cloud, kind, normals, config)
            else:
                outcome = ft.FAMILY_FITTERS[kind](cloud, normals)
                if not outcome.converged:
                    failures[kind] = "refinement did not converge"
                    continue
                params = outcome.params
            table[kind] = mfe(cloud, params)
            params_by_kind[kind] = params
        except (ft.DegenerateFitError, ht.WindowMissError, np.linalg.LinAlgError,
                ValueError) as exc:
            failures[kind] = str(exc)
    if not table:
        detail = "; ".join(f"{geo.KIND_NAMES[k]}: {v}" for k, v in failures.items())
        raise ClassificationError(f"all families failed: {detail}")
    chosen = min(table, key=lambda kind: (table[kind], kind))
    return ClassifiedFit(chosen, params_by_kind[chosen], table, failures)
