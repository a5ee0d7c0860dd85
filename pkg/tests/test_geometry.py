"""Tests for primitive types, distances, sampling and rigid motions."""

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import cKDTree

from primfit import geometry as geo


def _rng(seed=0):
    return np.random.default_rng(seed)


def random_primitive(kind, rng):
    """Random well-conditioned primitive of the given kind (test helper)."""
    center = rng.uniform(-2, 2, size=3)
    axis = geo.canonicalize_axis(rng.normal(size=3))
    if kind == geo.PLANE:
        return geo.PlaneParams(axis, center)
    if kind == geo.CYLINDER:
        return geo.CylinderParams(rng.uniform(0.5, 3.0), axis, center)
    if kind == geo.SPHERE:
        return geo.SphereParams(rng.uniform(0.5, 3.0), center)
    if kind == geo.CONE:
        opening = rng.normal(size=3)
        opening /= np.linalg.norm(opening)
        return geo.ConeParams(rng.uniform(np.radians(10), np.radians(75)), opening, center)
    if kind == geo.TORUS:
        r1 = rng.uniform(1.0, 3.0)
        return geo.TorusParams(r1, rng.uniform(0.1, 0.9 * min(r1, r1 - 0.05)), axis, center)
    raise ValueError(kind)


def random_transform(rng):
    return geo.RigidTransform(geo.random_rotation(rng), rng.uniform(-5, 5, size=3))


def sample_any(prim, n, rng):
    return geo.sample_surface(prim, n, rng, extent=3.0)


class TestCanonicalizeAxis:
    def test_sign_rule(self):
        npt.assert_allclose(geo.canonicalize_axis(np.array([0, 0, -1.0])), [0, 0, 1])

    def test_normalization(self):
        npt.assert_allclose(geo.canonicalize_axis(np.array([3.0, 0, 0])), [1, 0, 0])

    def test_first_nonzero_is_y(self):
        out = geo.canonicalize_axis(np.array([0.0, -0.6, 0.8]))
        npt.assert_allclose(out, [0.0, 0.6, -0.8])

    def test_zero_vector_raises(self):
        with pytest.raises(ValueError):
            geo.canonicalize_axis(np.zeros(3))

    @given(st.tuples(*[st.floats(-10, 10) for _ in range(3)]))
    def test_idempotent_and_unit(self, v):
        v = np.array(v)
        if np.linalg.norm(v) < 1e-6:
            return
        once = geo.canonicalize_axis(v)
        twice = geo.canonicalize_axis(once)
        assert np.array_equal(once, twice)
        assert abs(np.linalg.norm(once) - 1.0) < 1e-12


class TestDistance:
    def test_sphere_outside(self):
        s = geo.SphereParams(1.0, np.zeros(3))
        assert geo.distance_to_primitive(np.array([2.0, 0, 0]), s) == pytest.approx(1.0)

    def test_plane(self):
        p = geo.PlaneParams(np.array([0, 0, 1.0]), np.zeros(3))
        assert geo.distance_to_primitive(np.array([3.0, 4.0, 5.0]), p) == pytest.approx(5.0)

    def test_torus(self):
        t = geo.TorusParams(2.0, 0.5, np.array([0, 0, 1.0]), np.zeros(3))
        assert geo.distance_to_primitive(np.array([3.0, 0, 0]), t) == pytest.approx(0.5)

    def test_cylinder(self):
        c = geo.CylinderParams(1.0, np.array([0, 0, 1.0]), np.zeros(3))
        assert geo.distance_to_primitive(np.array([2.0, 0, 7.0]), c) == pytest.approx(1.0)

    def test_cone_on_surface(self):
        c = geo.ConeParams(np.pi / 4, np.array([0, 0, 1.0]), np.zeros(3))
        assert geo.distance_to_primitive(np.array([1.0, 0, 1.0]), c) == pytest.approx(0.0, abs=1e-12)

    def test_cone_equatorial_point(self):
        # 45-degree cone: point on the xy-plane at radius 2 is sqrt(2)/ away
        # along the perpendicular to the generatrix.
        c = geo.ConeParams(np.pi / 4, np.array([0, 0, 1.0]), np.zeros(3))
        assert geo.distance_to_primitive(np.array([2.0, 0, 0]), c) == pytest.approx(np.sqrt(2.0))

    def test_cone_behind_vertex_clamps(self):
        c = geo.ConeParams(np.pi / 4, np.array([0, 0, 1.0]), np.zeros(3))
        assert geo.distance_to_primitive(np.array([0, 0, -2.0]), c) == pytest.approx(2.0)

    def test_vectorized_matches_scalar(self):
        rng = _rng(3)
        for kind in geo.ALL_KINDS:
            prim = random_primitive(kind, rng)
            pts = rng.uniform(-4, 4, size=(20, 3))
            batch = geo.distance_to_primitive(pts, prim)
            single = [geo.distance_to_primitive(p, prim) for p in pts]
            npt.assert_allclose(batch, single)


class TestSampleSurface:
    @pytest.mark.parametrize("kind", geo.ALL_KINDS)
    def test_points_lie_on_surface(self, kind):
        prim = random_primitive(kind, _rng(kind))
        cloud = sample_any(prim, 1000, 42)
        assert len(cloud) == 1000
        assert geo.distance_to_primitive(cloud.points, prim).max() <= 1e-9

    def test_deterministic(self):
        s = geo.SphereParams(1.0, np.zeros(3))
        a = geo.sample_surface(s, 500, 7)
        b = geo.sample_surface(s, 500, 7)
        assert np.array_equal(a.points, b.points)

    def test_cone_parametric_relation(self):
        c = geo.ConeParams(np.pi / 4, np.array([0, 0, 1.0]), np.zeros(3))
        cloud = geo.sample_surface(c, 500, 11, extent=2.0)
        h = cloud.points[:, 2]
        rho = np.hypot(cloud.points[:, 0], cloud.points[:, 1])
        assert np.all(h >= 0.0)
        npt.assert_allclose(rho, h * np.tan(np.pi / 4), atol=1e-9)

    def test_unbounded_kinds_need_extent(self):
        with pytest.raises(ValueError):
            geo.sample_surface(geo.PlaneParams(np.array([0, 0, 1.0]), np.zeros(3)), 10, 0)


class TestTransforms:
    def test_identity(self):
        cloud = sample_any(random_primitive(geo.SPHERE, _rng(1)), 100, 0)
        out = geo.apply_transform(cloud, geo.RigidTransform.identity())
        npt.assert_allclose(out.points, cloud.points)

    def test_inverse_roundtrip(self):
        rng = _rng(2)
        t = random_transform(rng)
        cloud = sample_any(random_primitive(geo.TORUS, rng), 200, 1)
        back = geo.apply_transform(geo.apply_transform(cloud, t), t.inverse())
        npt.assert_allclose(back.points, cloud.points, atol=1e-12)

    def test_pairwise_distances_preserved(self):
        rng = _rng(4)
        t = random_transform(rng)
        pts = rng.uniform(-3, 3, size=(50, 3))
        before = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
        moved = t.apply(pts)
        after = np.linalg.norm(moved[:, None] - moved[None, :], axis=-1)
        npt.assert_allclose(after, before, atol=1e-12)

    def test_sphere_translation(self):
        t = geo.RigidTransform(np.eye(3), np.array([1.0, -2.0, 3.0]))
        s = geo.SphereParams(1.5, np.array([0.5, 0.5, 0.5]))
        out = geo.transform_params(s, t)
        npt.assert_allclose(out.center, [1.5, -1.5, 3.5])
        assert out.radius == s.radius

    def test_rigid_equivariance_all_kinds(self):
        rng = _rng(5)
        checks = 0
        while checks < 100:
            kind = geo.ALL_KINDS[checks % 5]
            prim = random_primitive(kind, rng)
            t = random_transform(rng)
            p = rng.uniform(-4, 4, size=3)
            d0 = geo.distance_to_primitive(p, prim)
            d1 = geo.distance_to_primitive(t.apply(p), geo.transform_params(prim, t))
            assert d1 == pytest.approx(d0, abs=1e-9)
            checks += 1


class TestBBoxDiagonal:
    def test_unit_cube_corners(self):
        c = geo.PointCloud(np.array([[0, 0, 0], [1, 1, 1.0]]))
        assert geo.bbox_diagonal(c) == pytest.approx(np.sqrt(3))

    def test_single_point(self):
        assert geo.bbox_diagonal(geo.PointCloud(np.array([[1.0, 2, 3]]))) == 0.0

    def test_right_triangle(self):
        c = geo.PointCloud(np.array([[0, 0, 0], [3, 0, 0], [0, 4, 0.0]]))
        assert geo.bbox_diagonal(c) == pytest.approx(5.0)


class TestAnalyticVsSampled:
    @pytest.mark.parametrize("kind", geo.ALL_KINDS)
    def test_gap_shrinks_with_sample_count(self, kind):
        rng = _rng(100 + kind)
        prim = random_primitive(kind, rng)
        queries = rng.uniform(-4, 4, size=(30, 3))
        analytic = geo.distance_to_primitive(queries, prim)
        gaps = []
        for n in (10**3, 10**4, 10**5):
            surf = geo.sample_surface(prim, n, 1234, extent=12.0)
            sampled = cKDTree(surf.points).query(queries)[0]
            # samples are a subset of the surface, so they can only overestimate
            assert np.all(sampled >= analytic - 1e-9)
            gaps.append(np.max(sampled - analytic))
        assert gaps[2] < gaps[0]
        assert gaps[2] < 0.2


class TestValidation:
    def test_noncanonical_plane_normal_rejected(self):
        with pytest.raises(ValueError):
            geo.PlaneParams(np.array([0, 0, -1.0]), np.zeros(3))

    def test_torus_radius_order_enforced(self):
        with pytest.raises(ValueError):
            geo.TorusParams(0.5, 2.0, np.array([0, 0, 1.0]), np.zeros(3))

    def test_cone_aperture_range(self):
        with pytest.raises(ValueError):
            geo.ConeParams(np.pi / 2, np.array([0, 0, 1.0]), np.zeros(3))

    def test_nonfinite_points_rejected(self):
        with pytest.raises(ValueError):
            geo.PointCloud(np.array([[0.0, 0.0, np.nan]]))

    def test_empty_cloud_rejected(self):
        with pytest.raises(ValueError):
            geo.PointCloud(np.zeros((0, 3)))
