"""Direct least-squares estimation of primitive parameters.

Each family gets a closed-form or algebraic initialization followed (for the
curved, non-spherical families) by damped Gauss-Newton refinement of the
orthogonal-distance objective.  Axes are refined through two spherical
angles; to keep that chart well-conditioned the refinement runs in a rotated
frame where the initial axis sits on the equator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import geometry as geo
from .geometry import (ConeParams, CylinderParams, PlaneParams, PointCloud,
                       PrimitiveParams, SphereParams, TorusParams)

MAX_ITERATIONS = 100
REL_TOL = 1e-10
INITIAL_DAMPING = 1e-3
_APERTURE_INIT_CLAMP = (np.radians(1.0), np.radians(89.0))
_APERTURE_VALID = (np.radians(0.5), np.radians(89.5))


class DegenerateFitError(ValueError):
    """Raised when the data cannot constrain the requested family."""


@dataclass(frozen=True)
class NormalField:
    """Per-point unit normals, sign-canonicalized, with a validity mask."""

    normals: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        n = np.asarray(self.normals, dtype=float)
        v = np.asarray(self.valid, dtype=bool)
        if n.ndim != 2 or n.shape[1] != 3 or v.shape != (n.shape[0],):
            raise ValueError("normals must be (n, 3) with an (n,) validity mask")
        object.__setattr__(self, "normals", n)
        object.__setattr__(self, "valid", v)

    def __len__(self) -> int:
        return self.normals.shape[0]


@dataclass(frozen=True)
class FitOutcome:
    """Fitted parameters plus the orthogonal-distance RMS over the cloud."""

    params: PrimitiveParams
    rms_residual: float
    iterations: int
    converged: bool


def _rms_distance(cloud: PointCloud, prim: PrimitiveParams) -> float:
    d = geo.distance_to_primitive(cloud.points, prim)
    return float(np.sqrt(np.mean(d * d)))


def _canonicalize_rows(normals: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Vectorized sign fix: first component with |c| > tol made positive."""
    c0, c1, c2 = normals[:, 0], normals[:, 1], normals[:, 2]
    flip = np.where(np.abs(c0) > tol, c0 < 0.0,
                    np.where(np.abs(c1) > tol, c1 < 0.0, c2 < 0.0))
    out = normals.copy()
    out[flip] *= -1.0
    return out


def estimate_normals(cloud: PointCloud, k: int = 20) -> NormalField:
    """Local-plane normals from the k nearest neighbors of each point.

    The normal is the smallest-eigenvalue eigenvector of the neighborhood
    covariance.  Neighborhoods of rank < 2 are flagged invalid.
    """
    n = len(cloud)
    if k < 3:
        raise ValueError("k must be >= 3")
    if n <= k:
        raise ValueError(f"cloud of {n} points is too small for k={k}")
    tree = cKDTree(cloud.points)
    _, idx = tree.query(cloud.points, k=k)
    hoods = cloud.points[idx]                       # (n, k, 3)
    hoods = hoods - hoods.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", hoods, hoods) / k
    evals, evecs = np.linalg.eigh(cov)
    normals = _canonicalize_rows(evecs[:, :, 0])
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = normals / np.where(norms > 0, norms, 1.0)
    valid = evals[:, 1] > 1e-10 * np.maximum(evals[:, 2], 1e-300)
    return NormalField(normals, valid)


# ---------------------------------------------------------------------------
# residual models: r(x), J(x) for the orthogonal distance of each family
# ---------------------------------------------------------------------------

def _sph_dir(theta: float, phi: float):
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    a = np.array([st * cp, st * sp, ct])
    da_dth = np.array([ct * cp, ct * sp, -st])
    da_dph = np.array([-st * sp, st * cp, 0.0])
    return a, da_dth, da_dph


def _angles_of(axis: np.ndarray) -> tuple[float, float]:
    theta = float(np.arccos(np.clip(axis[2], -1.0, 1.0)))
    phi = float(np.arctan2(axis[1], axis[0]))
    return theta, phi


def plane_residuals(x: np.ndarray, pts: np.ndarray):
    """x = (theta, phi, offset); signed distance to the Hesse-form plane."""
    a, da_dth, da_dph = _sph_dir(x[0], x[1])
    res = pts @ a - x[2]
    jac = np.column_stack([pts @ da_dth, pts @ da_dph, -np.ones(len(pts))])
    return res, jac


def sphere_residuals(x: np.ndarray, pts: np.ndarray):
    """x = (cx, cy, cz, r)."""
    d = pts - x[:3]
    dist = np.linalg.norm(d, axis=1)
    dist = np.where(dist > 1e-12, dist, 1e-12)
    jac = np.column_stack([-d / dist[:, None], -np.ones(len(pts))])
    return dist - x[3], jac


def cylinder_residuals(x: np.ndarray, pts: np.ndarray):
    """x = (px, py, pz, theta, phi, r)."""
    a, da_dth, da_dph = _sph_dir(x[3], x[4])
    d = pts - x[:3]
    h = d @ a
    w = d - np.outer(h, a)
    rho = np.linalg.norm(w, axis=1)
    rho = np.where(rho > 1e-12, rho, 1e-12)
    dr_dc = -w / rho[:, None]
    dr_da = -(h / rho)[:, None] * d
    jac = np.column_stack([dr_dc, dr_da @ da_dth, dr_da @ da_dph, -np.ones(len(pts))])
    return rho - x[5], jac


def cone_residuals(x: np.ndarray, pts: np.ndarray):
    """x = (vx, vy, vz, theta, phi, alpha); signed distance to the single
    nappe opening along the axis, clamped to the vertex behind it."""
    a, da_dth, da_dph = _sph_dir(x[3], x[4])
    alpha = x[5]
    sa, ca = np.sin(alpha), np.cos(alpha)
    d = pts - x[:3]
    h = d @ a
    w = d - np.outer(h, a)
    rho = np.linalg.norm(w, axis=1)
    rho_safe = np.where(rho > 1e-12, rho, 1e-12)
    along = rho * sa + h * ca
    main = along > 0.0

    res = np.where(main, rho * ca - h * sa, np.sqrt(rho * rho + h * h))
    what = w / rho_safe[:, None]
    dres_dv = np.where(main[:, None], -what * ca + a * sa, -d / np.maximum(res, 1e-12)[:, None])
    dr_da = -(h / rho_safe)[:, None] * d  # d rho / d axis
    dres_da = ca * dr_da - sa * d
    zero = np.zeros(len(pts))
    dres_dth = np.where(main, dres_da @ da_dth, zero)
    dres_dph = np.where(main, dres_da @ da_dph, zero)
    dres_dal = np.where(main, -along, zero)
    return res, np.column_stack([dres_dv, dres_dth, dres_dph, dres_dal])


def torus_residuals(x: np.ndarray, pts: np.ndarray):
    """x = (cx, cy, cz, theta, phi, R, r)."""
    a, da_dth, da_dph = _sph_dir(x[3], x[4])
    d = pts - x[:3]
    h = d @ a
    w = d - np.outer(h, a)
    rho = np.linalg.norm(w, axis=1)
    rho_safe = np.where(rho > 1e-12, rho, 1e-12)
    u = rho - x[5]
    q = np.hypot(u, h)
    q = np.where(q > 1e-12, q, 1e-12)
    what = w / rho_safe[:, None]
    dres_dc = -(u / q)[:, None] * what - np.outer(h / q, a)
    dr_da = -(h / rho_safe)[:, None] * d
    dres_da = (u / q)[:, None] * dr_da + (h / q)[:, None] * d
    jac = np.column_stack([dres_dc, dres_da @ da_dth, dres_da @ da_dph,
                           -u / q, -np.ones(len(pts))])
    return q - x[6], jac


RESIDUAL_MODELS = {
    geo.PLANE: plane_residuals,
    geo.SPHERE: sphere_residuals,
    geo.CYLINDER: cylinder_residuals,
    geo.CONE: cone_residuals,
    geo.TORUS: torus_residuals,
}


def gauss_newton(model, x0: np.ndarray, pts: np.ndarray,
                 max_iter: int = MAX_ITERATIONS, rel_tol: float = REL_TOL,
                 damping: float = INITIAL_DAMPING):
    """Damped Gauss-Newton on sum of squared residuals.

    The damping is multiplied by 10 whenever a step would increase the
    objective (step rejected) and divided by 10 on acceptance, so the
    objective never increases.  Returns (x, iterations, converged).
    """
    x = np.asarray(x0, dtype=float).copy()
    res, jac = model(x, pts)
    f = float(res @ res)
    lam = damping
    iterations = 0
    converged = f <= 1e-32
    for _ in range(max_iter):
        if converged:
            break
        iterations += 1
        jtj = jac.T @ jac
        jtr = jac.T @ res
        try:
            step = np.linalg.solve(jtj + lam * np.eye(len(x)), -jtr)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        x_new = x + step
        res_new, jac_new = model(x_new, pts)
        f_new = float(res_new @ res_new)
        if f_new <= f:
            x, res, jac = x_new, res_new, jac_new
            if f - f_new <= rel_tol * max(f, 1e-300) or f_new <= 1e-32:
                converged = True
            f = f_new
            lam = max(lam / 10.0, 1e-15)
        else:
            lam *= 10.0
            if lam > 1e15:
                converged = True  # no productive step left: stationary
                break
    return x, iterations, converged


def _refine_axis_model(kind: int, pts: np.ndarray, center: np.ndarray,
                       axis: np.ndarray, tail: list[float]):
    """Run GN for an axis-bearing family in a frame where the initial axis
    lies on the spherical-chart equator.  Returns (center, axis, tail,
    iterations, converged) back in the input frame."""
    q = geo.rotation_between(axis, np.array([1.0, 0.0, 0.0]))
    pts_rot = pts @ q.T
    x0 = np.concatenate([q @ center, [np.pi / 2.0, 0.0], tail])
    x, iterations, converged = gauss_newton(RESIDUAL_MODELS[kind], x0, pts_rot)
    a_rot, _, _ = _sph_dir(x[3], x[4])
    return q.T @ x[:3], q.T @ a_rot, x[5:], iterations, converged


# ---------------------------------------------------------------------------
# per-family fitters
# ---------------------------------------------------------------------------

def fit_plane(cloud: PointCloud) -> FitOutcome:
    """Total least squares: centroid plus smallest-eigenvalue direction."""
    pts = cloud.points
    if len(pts) < 3:
        raise DegenerateFitError("plane fit needs at least 3 points")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    evals, evecs = np.linalg.eigh(centered.T @ centered / len(pts))
    if evals[1] <= 1e-12 * max(evals[2], 1e-300):
        raise DegenerateFitError("points are collinear or coincident")
    params = PlaneParams(geo.canonicalize_axis(evecs[:, 0]), centroid)
    return FitOutcome(params, _rms_distance(cloud, params), 0, True)


def _algebraic_sphere(pts: np.ndarray) -> SphereParams:
    a = np.column_stack([2.0 * pts, np.ones(len(pts))])
    b = np.einsum("ij,ij->i", pts, pts)
    sol, _, rank, sv = np.linalg.lstsq(a, b, rcond=None)
    if rank < 4 or sv[-1] <= 1e-10 * sv[0]:
        raise DegenerateFitError("points do not determine a sphere (coplanar?)")
    center = sol[:3]
    r_sq = sol[3] + center @ center
    if r_sq <= 0.0:
        raise DegenerateFitError("algebraic sphere fit collapsed")
    return SphereParams(float(np.sqrt(r_sq)), center)


def fit_sphere(cloud: PointCloud, robust: bool = False, rng=None,
               rounds: int = 100, subset_fraction: float = 0.3,
               inlier_tolerance: float = 0.05) -> FitOutcome:
    """Algebraic least-squares sphere.

    With ``robust`` the fit is repeated ``rounds`` times on random subsets of
    ``subset_fraction`` of the points; points whose absolute radial error
    exceeds ``inlier_tolerance`` of the radius are outliers, and the
    consensus with the most inliers is refit on its inlier set.
    """
    pts = cloud.points
    if len(pts) < 4:
        raise DegenerateFitError("sphere fit needs at least 4 points")
    if not robust:
        params = _algebraic_sphere(pts)
        return FitOutcome(params, _rms_distance(cloud, params), 0, True)
    gen = np.random.default_rng(0 if rng is None else rng)
    subset_size = max(4, int(round(subset_fraction * len(pts))))
    best_inliers = None
    for _ in range(rounds):
        subset = gen.choice(len(pts), size=subset_size, replace=False)
        try:
            cand = _algebraic_sphere(pts[subset])
        except DegenerateFitError:
            continue
        err = np.abs(np.linalg.norm(pts - cand.center, axis=1) - cand.radius)
        inliers = err <= inlier_tolerance * cand.radius
        if best_inliers is None or inliers.sum() > best_inliers.sum():
            best_inliers = inliers
    if best_inliers is None or best_inliers.sum() < 4:
        raise DegenerateFitError("robust sphere fit found no usable consensus")
    params = _algebraic_sphere(pts[best_inliers])
    return FitOutcome(params, _rms_distance(cloud, params), 0, True)


def _normal_moment(normals: NormalField) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    nv = normals.normals[normals.valid]
    if len(nv) < 3:
        raise DegenerateFitError("too few valid normals")
    m = nv.T @ nv / len(nv)
    evals, evecs = np.linalg.eigh(m)
    return nv, evals, evecs


def _circle_fit_2d(xy: np.ndarray) -> tuple[np.ndarray, float]:
    """Algebraic (Kasa) circle fit; returns (center, radius)."""
    a = np.column_stack([2.0 * xy, np.ones(len(xy))])
    b = np.einsum("ij,ij->i", xy, xy)
    sol, _, rank, sv = np.linalg.lstsq(a, b, rcond=None)
    if rank < 3 or sv[-1] <= 1e-12 * sv[0]:
        raise DegenerateFitError("projected points do not determine a circle")
    center = sol[:2]
    r_sq = sol[2] + center @ center
    if r_sq <= 0.0:
        raise DegenerateFitError("circle fit collapsed")
    return center, float(np.sqrt(r_sq))


def cylinder_initial_estimate(cloud: PointCloud,
                              normals: NormalField) -> tuple[np.ndarray, np.ndarray, float]:
    """Direct (axis, axis point, radius) estimate without refinement."""
    pts = cloud.points
    _, evals, evecs = _normal_moment(normals)
    # cylinder normals span the plane orthogonal to the axis, so the moment
    # must have one near-zero eigenvalue well separated from the others
    if evals[1] <= 1e-6:
        raise DegenerateFitError("normals nearly parallel: no rotational axis (planar data?)")
    if evals[0] > 0.5 * evals[1]:
        raise DegenerateFitError("normal moment nearly isotropic: axis is ambiguous")
    axis = evecs[:, 0] / np.linalg.norm(evecs[:, 0])
    e1, e2 = geo.orthonormal_frame(axis)
    centroid = pts.mean(axis=0)
    rel = pts - centroid
    xy = np.column_stack([rel @ e1, rel @ e2])
    c2d, radius = _circle_fit_2d(xy)
    center = centroid + c2d[0] * e1 + c2d[1] * e2
    return axis, center, radius


def fit_cylinder(cloud: PointCloud, normals: NormalField) -> FitOutcome:
    """Axis from the normal second moment, radius/center from a projected
    circle fit, then Gauss-Newton on the orthogonal distances."""
    pts = cloud.points
    if len(pts) < 6:
        raise DegenerateFitError("cylinder fit needs at least 6 points")
    if len(normals) != len(pts):
        raise ValueError("normal field does not match the cloud")
    axis, center, radius = cylinder_initial_estimate(cloud, normals)
    center, axis, tail, iterations, converged = _refine_axis_model(
        geo.CYLINDER, pts, center, axis, [radius])
    radius = float(tail[0])
    if radius <= 0.0:
        raise DegenerateFitError("cylinder refinement collapsed the radius")
    axis = geo.canonicalize_axis(axis)
    centroid = pts.mean(axis=0)
    center = center + ((centroid - center) @ axis) * axis  # gauge: nearest to centroid
    params = CylinderParams(radius, axis, center)
    return FitOutcome(params, _rms_distance(cloud, params), iterations, converged)


def cone_initial_estimate(cloud: PointCloud,
                          normals: NormalField) -> tuple[np.ndarray, np.ndarray, float]:
    """Direct (vertex, axis, half aperture) estimate without refinement.

    Every tangent plane of a cone passes through the apex, so the vertex is
    the least-squares intersection of the planes (p_i, n_i); the axis is the
    direction from the vertex around which the point directions cluster at a
    constant angle.
    """
    pts = cloud.points
    nv = normals.normals[normals.valid]
    pv = pts[normals.valid]
    if len(nv) < 6:
        raise DegenerateFitError("too few valid normals")
    m = nv.T @ nv / len(nv)
    evals = np.linalg.eigvalsh(m)
    if evals[0] <= 1e-2:
        raise DegenerateFitError(
            "tangent planes nearly concurrent along a line: vertex unresolved "
            "(cylindrical or planar data?)")
    rhs = np.einsum("ij,ij->i", nv, pv)
    vertex = np.linalg.solve(m * len(nv), nv.T @ rhs)

    offsets = pts - vertex
    norms = np.linalg.norm(offsets, axis=1)
    # directions of points near the (approximate) vertex are hypersensitive
    # to its error; judge the axis candidates on the farther half only
    far = norms >= max(float(np.median(norms)), 1e-9)
    if far.sum() < 6:
        raise DegenerateFitError("points coincide with the estimated vertex")
    u = offsets[far] / norms[far, None]
    u_mean = u.mean(axis=0)

    # no single axis source works for every aperture: the direction moment
    # goes isotropic near 54.7 deg, the normal moment near 35.3 deg, and the
    # mean direction is exact only for full revolutions; pool them and keep
    # whichever direction sees the points at the most constant angle
    _, u_evecs = np.linalg.eigh(u.T @ u / len(u))
    candidates = [u_evecs[:, col] for col in range(3)]
    candidates += [np.linalg.eigh(m)[1][:, col] for col in range(3)]
    if np.linalg.norm(u_mean) > 1e-9:
        candidates.append(u_mean / np.linalg.norm(u_mean))
    best = None
    for cand in candidates:
        if cand @ u_mean < 0.0:
            cand = -cand
        ang = np.arccos(np.clip(u @ cand, -1.0, 1.0))
        spread = float(np.var(ang))
        if best is None or spread < best[0]:
            best = (spread, cand, ang)
    _, axis, ang = best
    alpha = float(np.clip(np.mean(ang), *_APERTURE_INIT_CLAMP))
    return vertex, axis, alpha


def fit_cone(cloud: PointCloud, normals: NormalField) -> FitOutcome:
    """Vertex from the tangent-plane bundle, axis/aperture from the vertex
    directions, then Gauss-Newton.

    The returned axis points from the vertex into the data (nappe opening
    direction).
    """
    pts = cloud.points
    if len(pts) < 6:
        raise DegenerateFitError("cone fit needs at least 6 points")
    if len(normals) != len(pts):
        raise ValueError("normal field does not match the cloud")
    vertex, axis, alpha = cone_initial_estimate(cloud, normals)
    vertex, axis, tail, iterations, converged = _refine_axis_model(
        geo.CONE, pts, vertex, axis, [alpha])
    alpha = float(tail[0])
    if not _APERTURE_VALID[0] <= alpha <= _APERTURE_VALID[1]:
        alpha = float(np.clip(alpha, *_APERTURE_INIT_CLAMP))
        converged = False
    params = ConeParams(alpha, axis / np.linalg.norm(axis), vertex)
    return FitOutcome(params, _rms_distance(cloud, params), iterations, converged)


def torus_initial_estimate(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Spine-circle initialization: best-fit plane gives the axis, a
    projected circle fit gives center and first radius."""
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    evals, evecs = np.linalg.eigh(centered.T @ centered / len(pts))
    if evals[1] <= 1e-12 * max(evals[2], 1e-300):
        raise DegenerateFitError("degenerate point covariance")
    axis = evecs[:, 0] / np.linalg.norm(evecs[:, 0])
    e1, e2 = geo.orthonormal_frame(axis)
    xy = np.column_stack([centered @ e1, centered @ e2])
    c2d, r_first = _circle_fit_2d(xy)
    center = centroid + c2d[0] * e1 + c2d[1] * e2
    h = (pts - center) @ axis
    rho = np.linalg.norm(pts - center - np.outer(h, axis), axis=1)
    r_second = float(np.mean(np.hypot(rho - r_first, h)))
    return center, axis, r_first, r_second


def fit_torus(cloud: PointCloud, normals: NormalField) -> FitOutcome:
    """Spine-circle initialization plus Gauss-Newton, with the fixed fallback
    start (centroid, z-axis, radii 1 and 0.1) tried when the circle-derived
    start fails or refuses to converge."""
    pts = cloud.points
    if len(pts) < 10:
        raise DegenerateFitError("torus fit needs at least 10 points")
    starts = []
    try:
        starts.append(torus_initial_estimate(pts))
    except DegenerateFitError:
        pass
    starts.append((pts.mean(axis=0), np.array([0.0, 0.0, 1.0]), 1.0, 0.1))

    best = None
    for center0, axis0, r1_0, r2_0 in starts:
        if r2_0 <= 0.0 or not np.isfinite(r2_0):
            continue
        center, axis, tail, iterations, converged = _refine_axis_model(
            geo.TORUS, pts, center0, axis0, [r1_0, max(r2_0, 1e-6)])
        r_first, r_second = float(tail[0]), float(tail[1])
        valid = np.isfinite(r_first) and np.isfinite(r_second) and r_first > r_second > 0.0
        if not valid:
            # best iterate is outside the ring-torus region; clamp and flag
            r_second = abs(r_second) if r_second != 0.0 else 1e-9
            r_first = max(abs(r_first), r_second * 1.01 + 1e-12)
            converged = False
        params = TorusParams(r_first, r_second, geo.canonicalize_axis(axis), center)
        outcome = FitOutcome(params, _rms_distance(cloud, params), iterations, converged)
        if best is None:
            best = outcome
        elif (outcome.converged, -outcome.rms_residual) > (best.converged, -best.rms_residual):
            best = outcome
        if best.converged and best.rms_residual < 1e-9:
            break
    return best


FAMILY_FITTERS = {
    geo.PLANE: lambda cloud, normals: fit_plane(cloud),
    geo.SPHERE: lambda cloud, normals: fit_sphere(cloud),
    geo.CYLINDER: fit_cylinder,
    geo.CONE: fit_cone,
    geo.TORUS: fit_torus,
}
