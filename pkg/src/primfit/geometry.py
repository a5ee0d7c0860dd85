"""Primitive surface types, analytic point-to-surface distances, parametric
sampling and rigid motions.

Five surface families are supported: plane (1), cylinder (2), sphere (3),
cone (4) and torus (5).  Points are plain ``(3,)`` float arrays; clouds wrap
an ``(n, 3)`` array.  All parameter containers are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar, Union

import numpy as np

PLANE, CYLINDER, SPHERE, CONE, TORUS = 1, 2, 3, 4, 5
KIND_NAMES = {PLANE: "plane", CYLINDER: "cylinder", SPHERE: "sphere",
              CONE: "cone", TORUS: "torus"}
ALL_KINDS = (PLANE, CYLINDER, SPHERE, CONE, TORUS)

_ZERO_TOL = 1e-12


def canonicalize_axis(v: np.ndarray) -> np.ndarray:
    """Normalize a direction and fix its sign.

    The returned unit vector has its first component larger than
    ``1e-12`` in magnitude made positive, which resolves the +/- ambiguity
    of rotational axes and plane normals.  Idempotent: feeding the result
    back returns it bit-for-bit.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    n = float(np.linalg.norm(v))
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot canonicalize a zero or non-finite vector")
    u = v if abs(n - 1.0) <= _ZERO_TOL else v / n
    for c in u:
        if abs(c) > _ZERO_TOL:
            return -u if c < 0.0 else u
    raise ValueError("cannot canonicalize a zero or non-finite vector")


def is_canonical(v: np.ndarray, tol: float = _ZERO_TOL) -> bool:
    """True when ``v`` is unit within ``tol`` and sign-fixed as above."""
    v = np.asarray(v, dtype=float)
    if v.shape != (3,) or abs(np.linalg.norm(v) - 1.0) > tol:
        return False
    for c in v:
        if abs(c) > tol:
            return c > 0.0
    return False


def orthonormal_frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic pair (e1, e2) completing ``axis`` to a right-handed basis."""
    a = np.asarray(axis, dtype=float)
    helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) <= 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(helper, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(a, e1)
    e2 /= np.linalg.norm(e2)
    return e1, e2


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} must be finite")


@dataclass(frozen=True)
class PointCloud:
    """An ordered set of 3D points with an opaque identifier."""

    points: np.ndarray
    id: str = ""

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"points must have shape (n, 3) with n >= 1, got {pts.shape}")
        _check_finite(pts, "points")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class PlaneParams:
    """Plane through ``point`` with canonical unit ``normal``."""

    kind: ClassVar[int] = PLANE
    normal: np.ndarray
    point: np.ndarray

    def __post_init__(self) -> None:
        n = np.asarray(self.normal, dtype=float)
        p = np.asarray(self.point, dtype=float)
        if not is_canonical(n):
            raise ValueError("plane normal must be a canonical unit vector")
        _check_finite(p, "plane point")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "point", p)


@dataclass(frozen=True)
class CylinderParams:
    """Infinite right circular cylinder: canonical ``axis`` through ``axis_point``."""

    kind: ClassVar[int] = CYLINDER
    radius: float
    axis: np.ndarray
    axis_point: np.ndarray

    def __post_init__(self) -> None:
        if not (self.radius > 0.0 and np.isfinite(self.radius)):
            raise ValueError("cylinder radius must be positive")
        a = np.asarray(self.axis, dtype=float)
        p = np.asarray(self.axis_point, dtype=float)
        if not is_canonical(a):
            raise ValueError("cylinder axis must be a canonical unit vector")
        _check_finite(p, "cylinder axis point")
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "axis", a)
        object.__setattr__(self, "axis_point", p)


@dataclass(frozen=True)
class SphereParams:
    kind: ClassVar[int] = SPHERE
    radius: float
    center: np.ndarray

    def __post_init__(self) -> None:
        if not (self.radius > 0.0 and np.isfinite(self.radius)):
            raise ValueError("sphere radius must be positive")
        c = np.asarray(self.center, dtype=float)
        _check_finite(c, "sphere center")
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "center", c)


@dataclass(frozen=True)
class ConeParams:
    """Single-napped right circular cone.

    ``axis`` is the unit direction the nappe opens along, measured from the
    ``vertex``; ``half_aperture`` is the angle between the axis and any
    generatrix, in (0, pi/2).  Unlike the sign-symmetric families, the axis
    orientation is geometrically meaningful and is therefore stored as-is
    rather than sign-canonicalized.
    """

    kind: ClassVar[int] = CONE
    half_aperture: float
    axis: np.ndarray
    vertex: np.ndarray

    def __post_init__(self) -> None:
        if not (0.0 < self.half_aperture < np.pi / 2):
            raise ValueError("cone half aperture must lie in (0, pi/2)")
        a = np.asarray(self.axis, dtype=float)
        v = np.asarray(self.vertex, dtype=float)
        if abs(np.linalg.norm(a) - 1.0) > 1e-9:
            raise ValueError("cone axis must be a unit vector")
        _check_finite(v, "cone vertex")
        object.__setattr__(self, "half_aperture", float(self.half_aperture))
        object.__setattr__(self, "axis", a)
        object.__setattr__(self, "vertex", v)


@dataclass(frozen=True)
class TorusParams:
    """Ring torus; ``radius_first`` is the spine-circle radius, ``radius_second``
    the tube radius, with first > second > 0."""

    kind: ClassVar[int] = TORUS
    radius_first: float
    radius_second: float
    axis: np.ndarray
    center: np.ndarray

    def __post_init__(self) -> None:
        if not (self.radius_first > self.radius_second > 0.0):
            raise ValueError("torus radii must satisfy first > second > 0")
        a = np.asarray(self.axis, dtype=float)
        c = np.asarray(self.center, dtype=float)
        if not is_canonical(a):
            raise ValueError("torus axis must be a canonical unit vector")
        _check_finite(c, "torus center")
        object.__setattr__(self, "radius_first", float(self.radius_first))
        object.__setattr__(self, "radius_second", float(self.radius_second))
        object.__setattr__(self, "axis", a)
        object.__setattr__(self, "center", c)


PrimitiveParams = Union[PlaneParams, CylinderParams, SphereParams, ConeParams, TorusParams]


def kind_of(prim: PrimitiveParams) -> int:
    return prim.kind


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9:
            raise ValueError("rotation must be orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equivalent to applying ``other`` first, then ``self``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)


def rotation_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rotation matrix taking unit vector ``a`` onto unit vector ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = float(np.dot(a, b))
    axis = np.cross(a, b)
    s = float(np.linalg.norm(axis))
    if s < 1e-14:
        if c > 0.0:
            return np.eye(3)
        # antipodal: rotate by pi about any direction orthogonal to a
        e1, _ = orthonormal_frame(a)
        return 2.0 * np.outer(e1, e1) - np.eye(3)
    axis = axis / s
    k = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def apply_transform(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    return PointCloud(t.apply(cloud.points), cloud.id)


def transform_params(prim: PrimitiveParams, t: RigidTransform) -> PrimitiveParams:
    """Map primitive parameters through a rigid motion.

    Axes of the sign-symmetric families come back canonicalized.  The cone
    axis keeps its orientation (it encodes which way the nappe opens), so
    distances are preserved exactly under the motion.
    """
    r = t.rotation
    if isinstance(prim, PlaneParams):
        return PlaneParams(canonicalize_axis(r @ prim.normal), t.apply(prim.point))
    if isinstance(prim, CylinderParams):
        return CylinderParams(prim.radius, canonicalize_axis(r @ prim.axis),
                              t.apply(prim.axis_point))
    if isinstance(prim, SphereParams):
        return SphereParams(prim.radius, t.apply(prim.center))
    if isinstance(prim, ConeParams):
        axis = r @ prim.axis
        return ConeParams(prim.half_aperture, axis / np.linalg.norm(axis),
                          t.apply(prim.vertex))
    if isinstance(prim, TorusParams):
        return TorusParams(prim.radius_first, prim.radius_second,
                           canonicalize_axis(r @ prim.axis), t.apply(prim.center))
    raise TypeError(f"unsupported primitive type: {type(prim)!r}")


def _axis_coords(points: np.ndarray, origin: np.ndarray,
                 axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Heights along ``axis`` and radial distances from it, per point."""
    d = points - origin
    h = d @ axis
    radial = d - np.outer(h, axis)
    rho = np.linalg.norm(radial, axis=1)
    return h, rho


def distance_to_primitive(p, prim: PrimitiveParams):
    """Euclidean distance from point(s) to the complete surface.

    Accepts a single ``(3,)`` point or an ``(n, 3)`` array; returns a scalar
    or an ``(n,)`` array accordingly.  The cone surface is the closed single
    nappe opening along ``prim.axis``; points behind the vertex measure their
    distance to the vertex itself.
    """
    pts = np.atleast_2d(np.asarray(p, dtype=float))
    if isinstance(prim, PlaneParams):
        d = np.abs((pts - prim.point) @ prim.normal)
    elif isinstance(prim, SphereParams):
        d = np.abs(np.linalg.norm(pts - prim.center, axis=1) - prim.radius)
    elif isinstance(prim, CylinderParams):
        _, rho = _axis_coords(pts, prim.axis_point, prim.axis)
        d = np.abs(rho - prim.radius)
    elif isinstance(prim, ConeParams):
        h, rho = _axis_coords(pts, prim.vertex, prim.axis)
        sa, ca = np.sin(prim.half_aperture), np.cos(prim.half_aperture)
        along = rho * sa + h * ca  # arc length of the closest generatrix point
        d = np.where(along > 0.0,
                     np.abs(rho * ca - h * sa),
                     np.hypot(rho, h))
    elif isinstance(prim, TorusParams):
        h, rho = _axis_coords(pts, prim.center, prim.axis)
        d = np.abs(np.hypot(rho - prim.radius_first, h) - prim.radius_second)
    else:
        raise TypeError(f"unsupported primitive type: {type(prim)!r}")
    return float(d[0]) if np.asarray(p).ndim == 1 else d


def surface_normal_at(prim: PrimitiveParams, points: np.ndarray) -> np.ndarray:
    """Outward unit normals of the surface nearest to each query point.

    For points lying on the surface this is the usual surface normal; off the
    surface it is the gradient of the signed distance field (undefined sets,
    e.g. the exact axis, fall back to an arbitrary perpendicular).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if isinstance(prim, PlaneParams):
        return np.broadcast_to(prim.normal, pts.shape).copy()
    if isinstance(prim, SphereParams):
        d = pts - prim.center
        n = np.linalg.norm(d, axis=1, keepdims=True)
        n[n < 1e-300] = 1.0
        return d / n
    if isinstance(prim, CylinderParams):
        return _radial_unit(pts, prim.axis_point, prim.axis)
    if isinstance(prim, ConeParams):
        what = _radial_unit(pts, prim.vertex, prim.axis)
        sa, ca = np.sin(prim.half_aperture), np.cos(prim.half_aperture)
        return what * ca - prim.axis * sa
    if isinstance(prim, TorusParams):
        h, rho = _axis_coords(pts, prim.center, prim.axis)
        what = _radial_unit(pts, prim.center, prim.axis)
        q = np.hypot(rho - prim.radius_first, h)
        q = np.where(q > 1e-300, q, 1.0)
        return what * ((rho - prim.radius_first) / q)[:, None] + np.outer(h / q, prim.axis)
    raise TypeError(f"unsupported primitive type: {type(prim)!r}")


def _radial_unit(pts: np.ndarray, origin: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """Unit vectors pointing radially away from the axis line, per point."""
    d = pts - origin
    w = d - np.outer(d @ axis, axis)
    wn = np.linalg.norm(w, axis=1, keepdims=True)
    fallback, _ = orthonormal_frame(axis)
    return np.where(wn > 1e-300, w / np.where(wn > 1e-300, wn, 1.0), fallback)


def sample_surface(prim: PrimitiveParams, n: int, rng,
                   extent: float | None = None) -> PointCloud:
    """Draw ``n`` points exactly on the surface via its parametric form.

    ``rng`` is an integer seed or a ``numpy.random.Generator``; a fixed seed
    reproduces the cloud bit for bit.  Plane, cylinder and cone are unbounded,
    so a positive ``extent`` (patch side / axial length / slant height cap)
    must be supplied for them; it is ignored for sphere and torus.
    """
    if n < 1:
        raise ValueError("sample count must be >= 1")
    gen = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    if isinstance(prim, (PlaneParams, CylinderParams, ConeParams)):
        if extent is None or not extent > 0.0:
            raise ValueError(f"{KIND_NAMES[prim.kind]} sampling needs a positive extent")
    if isinstance(prim, PlaneParams):
        e1, e2 = orthonormal_frame(prim.normal)
        uv = gen.uniform(-extent / 2.0, extent / 2.0, size=(n, 2))
        pts = prim.point + np.outer(uv[:, 0], e1) + np.outer(uv[:, 1], e2)
    elif isinstance(prim, CylinderParams):
        e1, e2 = orthonormal_frame(prim.axis)
        t = gen.uniform(-extent / 2.0, extent / 2.0, size=n)
        theta = gen.uniform(0.0, 2.0 * np.pi, size=n)
        radial = np.outer(np.cos(theta), e1) + np.outer(np.sin(theta), e2)
        pts = prim.axis_point + np.outer(t, prim.axis) + prim.radius * radial
    elif isinstance(prim, SphereParams):
        v = gen.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        pts = prim.center + prim.radius * v
    elif isinstance(prim, ConeParams):
        e1, e2 = orthonormal_frame(prim.axis)
        h = gen.uniform(0.0, extent, size=n)
        theta = gen.uniform(0.0, 2.0 * np.pi, size=n)
        rho = h * np.tan(prim.half_aperture)
        radial = np.outer(np.cos(theta), e1) + np.outer(np.sin(theta), e2)
        pts = prim.vertex + np.outer(h, prim.axis) + rho[:, None] * radial
    elif isinstance(prim, TorusParams):
        e1, e2 = orthonormal_frame(prim.axis)
        theta = gen.uniform(0.0, 2.0 * np.pi, size=n)
        phi = gen.uniform(0.0, 2.0 * np.pi, size=n)
        ring = np.outer(np.cos(theta), e1) + np.outer(np.sin(theta), e2)
        pts = (prim.center
               + (prim.radius_first + prim.radius_second * np.cos(phi))[:, None] * ring
               + np.outer(prim.radius_second * np.sin(phi), prim.axis))
    else:
        raise TypeError(f"unsupported primitive type: {type(prim)!r}")
    return PointCloud(pts)


def bbox_diagonal(cloud: PointCloud) -> float:
    """Length of the axis-aligned bounding-box diagonal.

    The box orientation is fixed to the coordinate axes as a normalization
    convention; zero only for single-point clouds.
    """
    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    return float(np.linalg.norm(hi - lo))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly random rotation matrix (via a random unit quaternion)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
