"""Voting-based recognition: plane detection in Hesse normal form, pose
standardization per family, and reduced-space parameter voting.

The full parameter spaces of the curved families are too large to vote over
directly, so each family is first brought to a standard pose (rotational
axis on z, center/vertex at the origin) from direct estimates; the remaining
low-dimensional parameters are then voted in a window around those
estimates and the winning cell is polished by local least squares.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import fitters as ft
from . import geometry as geo
from .geometry import (ConeParams, CylinderParams, PlaneParams, PointCloud,
                       PrimitiveParams, RigidTransform, SphereParams,
                       TorusParams)


class WindowMissError(RuntimeError):
    """Raised when no point votes inside the search window."""


class HoughBoundaryWarning(UserWarning):
    """The winning cell touches the window boundary; the true value may lie
    outside the searched range."""


@dataclass(frozen=True)
class Accumulator:
    """Dense vote grid over a boxed parameter domain."""

    counts: np.ndarray
    edges: tuple[np.ndarray, ...]
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.counts.ndim != len(self.edges) or len(self.edges) != len(self.labels):
            raise ValueError("counts, edges and labels must agree in dimension")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def centers(self, dim: int) -> np.ndarray:
        e = self.edges[dim]
        return 0.5 * (e[:-1] + e[1:])

    def argmax_cell(self) -> tuple[int, ...]:
        """Index of the most voted cell; ties break to the lexicographically
        smallest index."""
        return np.unravel_index(int(np.argmax(self.counts)), self.counts.shape)

    def on_boundary(self, cell: tuple[int, ...]) -> bool:
        return any(i == 0 or i == s - 1 for i, s in zip(cell, self.counts.shape))


def _bin_index(values: np.ndarray, lo: float, hi: float, nbins: int) -> np.ndarray:
    """Bin indices for values, -1 when outside [lo, hi)."""
    idx = np.floor((values - lo) / (hi - lo) * nbins).astype(np.int64)
    idx[(values < lo) | (values >= hi)] = -1
    return idx


def _normalize_bins(bins, ndim: int, minimum: int = 8) -> tuple[int, ...]:
    if np.isscalar(bins):
        out = (int(bins),) * ndim
    else:
        out = tuple(int(b) for b in bins)
    if len(out) != ndim or any(b < minimum for b in out):
        raise ValueError(f"need {ndim} bin counts of at least {minimum}")
    return out


# ---------------------------------------------------------------------------
# plane detection
# ---------------------------------------------------------------------------

def plane_accumulator(cloud: PointCloud, bins=(64, 64, 64)) -> Accumulator:
    """Vote planes n(theta, phi) . x = rho over the full direction sphere.

    Each point votes exactly one rho cell per direction column, so the total
    count is n_points * n_theta * n_phi.
    """
    n_theta, n_phi, n_rho = _normalize_bins(bins, 3)
    pts = cloud.points - cloud.points.mean(axis=0)
    rho_max = float(np.linalg.norm(pts, axis=1).max()) * (1.0 + 1e-9) + 1e-12
    theta = (np.arange(n_theta) + 0.5) * (np.pi / n_theta)
    phi = (np.arange(n_phi) + 0.5) * (2.0 * np.pi / n_phi)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    dirs = np.stack([np.sin(tt) * np.cos(pp),
                     np.sin(tt) * np.sin(pp),
                     np.cos(tt)], axis=-1).reshape(-1, 3)
    dots = pts @ dirs.T                                   # (n_points, n_dirs)
    idx = np.clip(((dots + rho_max) / (2.0 * rho_max) * n_rho).astype(np.int64),
                  0, n_rho - 1)
    flat = np.arange(dirs.shape[0])[None, :] * n_rho + idx
    counts = np.bincount(flat.ravel(), minlength=dirs.shape[0] * n_rho)
    counts = counts.reshape(n_theta, n_phi, n_rho)
    edges = (np.linspace(0.0, np.pi, n_theta + 1),
             np.linspace(0.0, 2.0 * np.pi, n_phi + 1),
             np.linspace(-rho_max, rho_max, n_rho + 1))
    return Accumulator(counts, edges, ("theta", "phi", "rho"))


def hough_plane(cloud: PointCloud, bins=(64, 64, 64)) -> PlaneParams:
    """Plane of the most voted Hesse-form cell, polished by a least-squares
    fit on the points within one rho-bin of the cell."""
    if len(cloud) < 3:
        raise ValueError("plane detection needs at least 3 points")
    acc = plane_accumulator(cloud, bins)
    it, ip, ir = acc.argmax_cell()
    theta = acc.centers(0)[it]
    phi = acc.centers(1)[ip]
    rho = acc.centers(2)[ir]
    normal = np.array([np.sin(theta) * np.cos(phi),
                       np.sin(theta) * np.sin(phi),
                       np.cos(theta)])
    centroid = cloud.points.mean(axis=0)
    delta_rho = acc.edges[2][1] - acc.edges[2][0]
    inliers = np.abs((cloud.points - centroid) @ normal - rho) <= delta_rho
    if inliers.sum() >= 3:
        try:
            return ft.fit_plane(PointCloud(cloud.points[inliers])).params
        except ft.DegenerateFitError:
            pass
    return PlaneParams(geo.canonicalize_axis(normal), centroid + rho * normal)


# ---------------------------------------------------------------------------
# pose standardization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StandardizedCloud:
    """Cloud mapped to the family's standard pose, with the applied motion
    and the direct parameter estimates that localize the later search."""

    cloud: PointCloud
    transform: RigidTransform
    kind: int
    estimates: dict

    def __post_init__(self) -> None:
        for value in self.estimates.values():
            if not np.all(np.isfinite(value)):
                raise ValueError("estimates must be finite")


def _sphere_center_from_normals(pts: np.ndarray, normals: ft.NormalField) -> np.ndarray:
    """Least-squares intersection of the normal lines (p_i, n_i)."""
    nv = normals.normals[normals.valid]
    pv = pts[normals.valid]
    if len(nv) < 3:
        raise ft.DegenerateFitError("too few valid normals")
    proj = len(nv) * np.eye(3) - nv.T @ nv
    rhs = pv.sum(axis=0) - nv.T @ np.einsum("ij,ij->i", nv, pv)
    sv = np.linalg.svd(proj, compute_uv=False)
    if sv[-1] <= 1e-9 * sv[0]:
        raise ft.DegenerateFitError("normal lines are nearly parallel (planar data?)")
    return np.linalg.solve(proj, rhs)


_Z = np.array([0.0, 0.0, 1.0])


def standardize_pose(cloud: PointCloud, kind: int,
                     normals: ft.NormalField) -> StandardizedCloud:
    """Move the cloud so the family's natural frame sits at the origin with
    the rotational axis (or plane normal) on z, and report the direct
    estimates of the remaining parameters."""
    pts = cloud.points
    estimates: dict = {}
    if kind == geo.PLANE:
        out = ft.fit_plane(cloud)
        rot = geo.rotation_between(out.params.normal, _Z)
        anchor = pts.mean(axis=0)
    elif kind == geo.SPHERE:
        center = _sphere_center_from_normals(pts, normals)
        rot = np.eye(3)
        anchor = center
        estimates["radius"] = float(np.mean(np.linalg.norm(pts - center, axis=1)))
    elif kind == geo.CYLINDER:
        axis, center, radius = ft.cylinder_initial_estimate(cloud, normals)
        rot = geo.rotation_between(axis, _Z)
        anchor = center + ((pts.mean(axis=0) - center) @ axis) * axis
        estimates["radius"] = float(radius)
    elif kind == geo.CONE:
        vertex, axis, alpha = ft.cone_initial_estimate(cloud, normals)
        rot = geo.rotation_between(axis, _Z)
        anchor = vertex
        estimates["alpha"] = float(alpha)
    elif kind == geo.TORUS:
        center, axis, r_first, r_second = ft.torus_initial_estimate(pts)
        rot = geo.rotation_between(axis, _Z)
        anchor = center
        estimates["radius_first"] = float(r_first)
        estimates["radius_second"] = float(max(r_second, 1e-6))
    else:
        raise ValueError(f"unknown primitive kind {kind}")
    transform = RigidTransform(rot, -rot @ anchor)
    return StandardizedCloud(geo.apply_transform(cloud, transform), transform,
                             kind, estimates)


# ---------------------------------------------------------------------------
# reduced-space voting
# ---------------------------------------------------------------------------

def _vote_per_slice(lo: float, hi: float, nbins: int,
                    slice_count: int, slice_of_primary) -> np.ndarray:
    """Accumulate (slice, primary-bin) votes; ``slice_of_primary(j)`` returns
    the primary values of every point for slice j."""
    counts = np.zeros((slice_count, nbins), dtype=np.int64)
    for j in range(slice_count):
        idx = _bin_index(slice_of_primary(j), lo, hi, nbins)
        ok = idx >= 0
        if ok.any():
            counts[j] += np.bincount(idx[ok], minlength=nbins)
    return counts


def refine_accumulator(std: StandardizedCloud, bins=64,
                       search_halfwidth: float = 0.25) -> Accumulator:
    """Vote the family's residual parameters around the direct estimates.

    Windows span +/- ``search_halfwidth`` of the relevant estimate; offset
    dimensions use a quarter of the primary bin count to keep the grids
    tractable.
    """
    if not 0.0 < search_halfwidth <= 1.0:
        raise ValueError("search halfwidth must lie in (0, 1]")
    pts = std.cloud.points
    kind = std.kind
    w = search_halfwidth
    nb = int(bins) if np.isscalar(bins) else int(bins[0])
    if nb < 8:
        raise ValueError("need at least 8 bins")
    nb_off = max(8, nb // 4)

    if kind == geo.SPHERE:
        r0 = std.estimates["radius"]
        r_lo, r_hi = r0 * (1.0 - w), r0 * (1.0 + w)
        off = w * r0
        edges_off = [np.linspace(-off, off, nb_off + 1)] * 3
        centers = [0.5 * (e[:-1] + e[1:]) for e in edges_off]
        grid = np.stack(np.meshgrid(*centers, indexing="ij"), axis=-1).reshape(-1, 3)
        counts = _vote_per_slice(
            r_lo, r_hi, nb, len(grid),
            lambda j: np.linalg.norm(pts - grid[j], axis=1))
        counts = counts.reshape(nb_off, nb_off, nb_off, nb)
        edges = (*edges_off, np.linspace(r_lo, r_hi, nb + 1))
        return Accumulator(counts, edges, ("ox", "oy", "oz", "radius"))

    if kind == geo.CYLINDER:
        r0 = std.estimates["radius"]
        r_lo, r_hi = r0 * (1.0 - w), r0 * (1.0 + w)
        off = w * r0
        edges_off = [np.linspace(-off, off, nb_off + 1)] * 2
        centers = [0.5 * (e[:-1] + e[1:]) for e in edges_off]
        grid = np.stack(np.meshgrid(*centers, indexing="ij"), axis=-1).reshape(-1, 2)
        xy = pts[:, :2]
        counts = _vote_per_slice(
            r_lo, r_hi, nb, len(grid),
            lambda j: np.linalg.norm(xy - grid[j], axis=1))
        counts = counts.reshape(nb_off, nb_off, nb)
        edges = (*edges_off, np.linspace(r_lo, r_hi, nb + 1))
        return Accumulator(counts, edges, ("ox", "oy", "radius"))

    if kind == geo.CONE:
        a0 = std.estimates["alpha"]
        a_lo = max(a0 * (1.0 - w), np.radians(0.5))
        a_hi = min(a0 * (1.0 + w), np.radians(89.5))
        z_span = max(float(pts[:, 2].max() - pts[:, 2].min()), 1e-6)
        oz_edges = np.linspace(-w * z_span, w * z_span, nb + 1)
        oz_centers = 0.5 * (oz_edges[:-1] + oz_edges[1:])
        rho = np.hypot(pts[:, 0], pts[:, 1])
        counts = _vote_per_slice(
            a_lo, a_hi, nb, nb,
            lambda j: np.arctan2(rho, pts[:, 2] - oz_centers[j]))
        edges = (oz_edges, np.linspace(a_lo, a_hi, nb + 1))
        return Accumulator(counts, edges, ("oz", "alpha"))

    if kind == geo.TORUS:
        r1_0 = std.estimates["radius_first"]
        r2_0 = std.estimates["radius_second"]
        r1_edges = np.linspace(r1_0 * (1.0 - w), r1_0 * (1.0 + w), nb + 1)
        r1_centers = 0.5 * (r1_edges[:-1] + r1_edges[1:])
        r2_lo, r2_hi = r2_0 * (1.0 - w), r2_0 * (1.0 + w)
        rho = np.hypot(pts[:, 0], pts[:, 1])
        counts = _vote_per_slice(
            r2_lo, r2_hi, nb, nb,
            lambda j: np.hypot(rho - r1_centers[j], pts[:, 2]))
        edges = (r1_edges, np.linspace(r2_lo, r2_hi, nb + 1))
        return Accumulator(counts, edges, ("radius_first", "radius_second"))

    raise ValueError(f"voting is not defined for kind {kind}")


def _cell_params(std: StandardizedCloud, acc: Accumulator,
                 cell: tuple[int, ...]) -> np.ndarray:
    """Gauss-Newton start vector at a cell center: positions in the standard
    frame, axis angles preset for the equator chart of the polish step."""
    vals = [acc.centers(d)[i] for d, i in enumerate(cell)]
    kind = std.kind
    if kind == geo.SPHERE:
        ox, oy, oz, r = vals
        return np.array([ox, oy, oz, r])
    if kind == geo.CYLINDER:
        ox, oy, r = vals
        return np.array([ox, oy, 0.0, np.pi / 2.0, 0.0, r])
    if kind == geo.CONE:
        oz, alpha = vals
        return np.array([0.0, 0.0, oz, np.pi / 2.0, 0.0, alpha])
    r1, r2 = vals
    return np.array([0.0, 0.0, 0.0, np.pi / 2.0, 0.0, r1, r2])


def _polish_window_peak(std: StandardizedCloud, acc: Accumulator,
                        cell: tuple[int, ...]) -> PrimitiveParams:
    """Local least squares from the winning cell, on the cell's inliers."""
    pts = std.cloud.points
    kind = std.kind
    # the spherical chart is ill-conditioned at the pole, so refine in a frame
    # where the standard-pose axis (z) sits on the equator
    q = geo.rotation_between(_Z, np.array([1.0, 0.0, 0.0]))
    pts_rot = pts @ q.T

    x0 = _cell_params(std, acc, cell)
    if kind == geo.SPHERE:
        model = ft.RESIDUAL_MODELS[geo.SPHERE]
        x0 = np.concatenate([q @ x0[:3], [x0[3]]])
        band = acc.edges[3][1] - acc.edges[3][0]
    else:
        model = ft.RESIDUAL_MODELS[kind]
        x0 = np.concatenate([q @ x0[:3], x0[3:]])
        band = acc.edges[-1][1] - acc.edges[-1][0]
        if kind == geo.CONE:
            # angular bin converted to a distance band at the median slant
            med = np.median(np.linalg.norm(pts - np.array([0, 0, x0[2]]), axis=1))
            band = band * med + (acc.edges[0][1] - acc.edges[0][0])

    res0, _ = model(x0, pts_rot)
    inliers = np.abs(res0) <= band
    target = pts_rot[inliers] if inliers.sum() >= 10 else pts_rot
    x, _, _ = ft.gauss_newton(model, x0, target)

    if kind == geo.SPHERE:
        return SphereParams(float(x[3]), q.T @ x[:3])
    axis_rot, _, _ = ft._sph_dir(x[3], x[4])
    axis = q.T @ axis_rot
    center = q.T @ x[:3]
    if kind == geo.CYLINDER:
        if x[5] <= 0.0:
            raise ft.DegenerateFitError("window refinement collapsed the radius")
        return CylinderParams(float(x[5]), geo.canonicalize_axis(axis), center)
    if kind == geo.CONE:
        alpha = float(np.clip(x[5], np.radians(0.5), np.radians(89.5)))
        return ConeParams(alpha, axis / np.linalg.norm(axis), center)
    r1, r2 = float(x[5]), float(x[6])
    if not r1 > r2 > 0.0:
        raise ft.DegenerateFitError("window refinement left the ring-torus region")
    return TorusParams(r1, r2, geo.canonicalize_axis(axis), center)


def hough_refine(std: StandardizedCloud, kind: int | None = None, bins=64,
                 search_halfwidth: float = 0.25) -> PrimitiveParams:
    """Vote in the reduced window, polish the winning cell, and map the
    result back to the original frame.

    Raises WindowMissError when no vote lands in the window; warns with
    HoughBoundaryWarning when the peak touches the window boundary.
    """
    if kind is not None and kind != std.kind:
        raise ValueError("kind does not match the standardized cloud")
    acc = refine_accumulator(std, bins=bins, search_halfwidth=search_halfwidth)
    if acc.total == 0:
        raise WindowMissError(
            f"no votes inside the {geo.KIND_NAMES[std.kind]} search window")
    cell = acc.argmax_cell()
    if acc.on_boundary(cell):
        warnings.warn("winning cell touches the search-window boundary",
                      HoughBoundaryWarning, stacklevel=2)
    params_std = _polish_window_peak(std, acc, cell)
    return geo.transform_params(params_std, std.transform.inverse())


# ---------------------------------------------------------------------------
# voting-based normals (alternative to the k-NN PCA estimator)
# ---------------------------------------------------------------------------

def estimate_normals_hough(cloud: PointCloud, k: int = 20,
                           bins: int = 16) -> ft.NormalField:
    """Per-point normals from a small Hesse-form vote in each neighborhood,
    polished by a plane fit on the winning cell's inliers."""
    n = len(cloud)
    if k < 3:
        raise ValueError("k must be >= 3")
    if n <= k:
        raise ValueError(f"cloud of {n} points is too small for k={k}")
    tree = cKDTree(cloud.points)
    _, idx = tree.query(cloud.points, k=k)
    hoods = cloud.points[idx]
    hoods = hoods - hoods.mean(axis=1, keepdims=True)

    theta = (np.arange(bins) + 0.5) * (np.pi / bins)
    phi = (np.arange(bins) + 0.5) * (2.0 * np.pi / bins)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    dirs = np.stack([np.sin(tt) * np.cos(pp),
                     np.sin(tt) * np.sin(pp),
                     np.cos(tt)], axis=-1).reshape(-1, 3)
    n_rho = bins
    rho_max = np.linalg.norm(hoods, axis=2).max(axis=1) * (1 + 1e-9) + 1e-12  # (n,)

    dots = np.einsum("nkd,md->nkm", hoods, dirs)            # (n, k, n_dirs)
    scale = (2.0 * rho_max)[:, None, None]
    rho_idx = np.clip(((dots + rho_max[:, None, None]) / scale * n_rho).astype(np.int64),
                      0, n_rho - 1)
    flat = np.arange(len(dirs))[None, None, :] * n_rho + rho_idx
    counts = np.zeros((n, len(dirs) * n_rho), dtype=np.int32)
    row = np.repeat(np.arange(n), k * len(dirs))
    np.add.at(counts, (row, flat.reshape(n, -1).ravel()), 1)

    best = counts.argmax(axis=1)
    best_dir = dirs[best // n_rho]
    rho_cell = (best % n_rho + 0.5) / n_rho * (2.0 * rho_max) - rho_max
    resid = np.abs(np.einsum("nkd,nd->nk", hoods, best_dir) - rho_cell[:, None])
    inlier = resid <= (2.0 * rho_max / n_rho)[:, None]

    # plane fit per neighborhood restricted to the voted inliers
    wts = inlier.astype(float)
    wsum = np.maximum(wts.sum(axis=1, keepdims=True), 1.0)
    mean = np.einsum("nk,nkd->nd", wts, hoods) / wsum
    centered = hoods - mean[:, None, :]
    cov = np.einsum("nk,nki,nkj->nij", wts, centered, centered) / wsum[..., None]
    evals, evecs = np.linalg.eigh(cov)
    normals = ft._canonicalize_rows(evecs[:, :, 0])
    valid = (evals[:, 1] > 1e-10 * np.maximum(evals[:, 2], 1e-300)) & (wts.sum(axis=1) >= 3)
    fallback = ~valid & (inlier.sum(axis=1) < 3)
    if fallback.any():
        normals[fallback] = ft._canonicalize_rows(best_dir[fallback].copy())
        valid[fallback] = True
    return ft.NormalField(normals, valid)
