"""Tests for normal estimation and the five family fitters."""

import numpy as np
import numpy.testing as npt
import pytest

from primfit import fitters as ft
from primfit import geometry as geo

from test_geometry import random_primitive, random_transform, sample_any


def _rng(seed=0):
    return np.random.default_rng(seed)


def _angle_between(a, b):
    return np.degrees(np.arccos(np.clip(abs(np.dot(a, b)), -1.0, 1.0)))


class TestEstimateNormals:
    def test_exact_plane(self):
        plane = geo.PlaneParams(np.array([0, 0, 1.0]), np.zeros(3))
        cloud = geo.sample_surface(plane, 400, 0, extent=2.0)
        field = ft.estimate_normals(cloud, k=15)
        assert field.valid.all()
        dots = np.abs(field.normals @ np.array([0, 0, 1.0]))
        assert np.all(dots > np.cos(np.radians(1e-4)))

    def test_sphere_against_analytic_oracle(self):
        sphere = geo.SphereParams(1.0, np.array([0.2, -0.3, 0.5]))
        cloud = geo.sample_surface(sphere, 5000, 1)
        field = ft.estimate_normals(cloud, k=20)
        oracle = geo.surface_normal_at(sphere, cloud.points)
        dots = np.abs(np.einsum("ij,ij->i", field.normals, oracle))
        angles = np.degrees(np.arccos(np.clip(dots, -1, 1)))
        # random sampling makes a few neighborhoods lopsided, so the very
        # worst normals exceed the typical accuracy; bound bulk and tail
        assert np.percentile(angles[field.valid], 99) <= 2.0
        assert angles[field.valid].max() <= 5.0

    def test_k_larger_than_cloud_errors(self):
        cloud = geo.PointCloud(_rng(0).uniform(size=(10, 3)))
        with pytest.raises(ValueError):
            ft.estimate_normals(cloud, k=10)


class TestFitPlane:
    def test_exact(self):
        cloud = geo.sample_surface(geo.PlaneParams(np.array([0, 0, 1.0]), np.zeros(3)),
                                   300, 2, extent=2.0)
        out = ft.fit_plane(cloud)
        npt.assert_allclose(out.params.normal, [0, 0, 1], atol=1e-9)
        assert out.rms_residual <= 1e-12

    def test_symmetric_pair_keeps_normal(self):
        rng = _rng(3)
        base = rng.uniform(-1, 1, size=(200, 2))
        pts = np.column_stack([base, np.zeros(200)])
        eps = 1e-3
        pts = np.vstack([pts, [0.3, 0.3, eps], [0.3, 0.3, -eps]])
        out = ft.fit_plane(geo.PointCloud(pts))
        npt.assert_allclose(out.params.normal, [0, 0, 1], atol=1e-9)

    def test_noisy_within_half_degree(self):
        rng = _rng(4)
        prim = random_primitive(geo.PLANE, rng)
        cloud = sample_any(prim, 2000, 5)
        noisy = geo.PointCloud(cloud.points + rng.uniform(-0.01, 0.01, size=cloud.points.shape))
        out = ft.fit_plane(noisy)
        assert _angle_between(out.params.normal, prim.normal) <= 0.5

    def test_collinear_errors(self):
        pts = np.outer(np.linspace(0, 1, 30), np.array([1.0, 2.0, 3.0]))
        with pytest.raises(ft.DegenerateFitError):
            ft.fit_plane(geo.PointCloud(pts))


class TestFitSphere:
    def test_exact_recovery(self):
        prim = geo.SphereParams(1.0, np.array([1.0, 2.0, 3.0]))
        out = ft.fit_sphere(geo.sample_surface(prim, 100, 6))
        assert abs(out.params.radius - 1.0) <= 1e-9
        npt.assert_allclose(out.params.center, prim.center, atol=1e-9)

    def test_robust_vs_outliers(self):
        rng = _rng(7)
        prim = geo.SphereParams(1.0, np.zeros(3))
        cloud = geo.sample_surface(prim, 300, 8)
        n_out = 30
        dirs = rng.normal(size=(n_out, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts = np.vstack([cloud.points, 5.0 * dirs])
        out = ft.fit_sphere(geo.PointCloud(pts), robust=True, rng=1)
        assert abs(out.params.radius - 1.0) <= 0.01

    def test_coplanar_errors(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.0]])
        with pytest.raises(ft.DegenerateFitError):
            ft.fit_sphere(geo.PointCloud(pts))


def _arc_cylinder_cloud(radius=1.0, arc_degrees=180.0, n=2000, seed=9):
    rng = _rng(seed)
    theta = rng.uniform(0, np.radians(arc_degrees), size=n)
    z = rng.uniform(-1, 1, size=n)
    pts = np.column_stack([radius * np.cos(theta), radius * np.sin(theta), z])
    return geo.PointCloud(pts)


class TestFitCylinder:
    def test_half_arc_exact(self):
        cloud = _arc_cylinder_cloud()
        out = ft.fit_cylinder(cloud, ft.estimate_normals(cloud))
        assert _angle_between(out.params.axis, [0, 0, 1]) <= 0.1
        assert abs(out.params.radius - 1.0) <= 1e-6

    def test_plane_data_degenerate(self):
        cloud = geo.sample_surface(geo.PlaneParams(np.array([0, 0, 1.0]), np.zeros(3)),
                                   500, 10, extent=2.0)
        normals = ft.estimate_normals(cloud)
        with pytest.raises(ft.DegenerateFitError):
            ft.fit_cylinder(cloud, normals)

    def test_sphere_data_degenerate(self):
        cloud = geo.sample_surface(geo.SphereParams(1.0, np.zeros(3)), 800, 11)
        normals = ft.estimate_normals(cloud)
        with pytest.raises(ft.DegenerateFitError):
            ft.fit_cylinder(cloud, normals)

    def test_rigid_equivariance(self):
        rng = _rng(12)
        prim = random_primitive(geo.CYLINDER, rng)
        cloud = sample_any(prim, 1500, 13)
        t = random_transform(rng)
        moved = geo.apply_transform(cloud, t)
        base = ft.fit_cylinder(cloud, ft.estimate_normals(cloud))
        mapped = geo.transform_params(base.params, t)
        refit = ft.fit_cylinder(moved, ft.estimate_normals(moved))
        assert abs(refit.params.radius - mapped.radius) <= 1e-6
        assert _angle_between(refit.params.axis, mapped.axis) <= 1e-4
        # compare axis lines via the distance of one anchor to the other axis
        gap = geo.distance_to_primitive(refit.params.axis_point, mapped) \
            - mapped.radius
        assert abs(gap + mapped.radius - 0.0) <= mapped.radius + 1e-6


class TestFitCone:
    def test_exact(self):
        alpha = np.radians(30.0)
        prim = geo.ConeParams(alpha, np.array([0, 0, 1.0]), np.array([0.5, -0.5, 0.2]))
        cloud = geo.sample_surface(prim, 2000, 14, extent=2.0)
        out = ft.fit_cone(cloud, ft.estimate_normals(cloud))
        assert abs(np.degrees(out.params.half_aperture - alpha)) <= 0.2
        assert np.linalg.norm(out.params.vertex - prim.vertex) <= 1e-3 * geo.bbox_diagonal(cloud)
        assert out.params.axis @ prim.axis > 0.99

    def test_cylinder_data_degenerate(self):
        cloud = _arc_cylinder_cloud(arc_degrees=360.0, seed=15)
        normals = ft.estimate_normals(cloud)
        with pytest.raises(ft.DegenerateFitError):
            ft.fit_cone(cloud, normals)

    def test_axis_points_into_data(self):
        rng = _rng(16)
        for seed in range(5):
            prim = random_primitive(geo.CONE, rng)
            cloud = sample_any(prim, 1200, seed)
            out = ft.fit_cone(cloud, ft.estimate_normals(cloud))
            assert out.params.axis @ prim.axis > 0.9


class TestFitTorus:
    def test_exact(self):
        prim = geo.TorusParams(2.0, 0.5, np.array([0, 0, 1.0]), np.zeros(3))
        cloud = geo.sample_surface(prim, 3000, 17)
        out = ft.fit_torus(cloud, ft.estimate_normals(cloud))
        assert abs(out.params.radius_first - 2.0) <= 1e-3
        assert abs(out.params.radius_second - 0.5) <= 1e-3

    def test_half_torus(self):
        prim = geo.TorusParams(2.0, 0.5, np.array([0, 0, 1.0]), np.zeros(3))
        cloud = geo.sample_surface(prim, 6000, 18)
        keep = cloud.points[:, 0] >= 0.0
        half = geo.PointCloud(cloud.points[keep])
        out = ft.fit_torus(half, ft.estimate_normals(half))
        assert abs(out.params.radius_first - 2.0) / 2.0 <= 0.02
        assert abs(out.params.radius_second - 0.5) / 0.5 <= 0.02

    def test_sphere_data_flagged(self):
        cloud = geo.sample_surface(geo.SphereParams(1.0, np.zeros(3)), 1500, 19)
        out = ft.fit_torus(cloud, ft.estimate_normals(cloud))
        assert (not out.converged) or out.params.radius_second >= 0.5 * out.params.radius_first


class TestRefinementContracts:
    @pytest.mark.parametrize("kind", [geo.CYLINDER, geo.CONE, geo.TORUS])
    def test_never_increases_objective(self, kind):
        rng = _rng(20 + kind)
        prim = random_primitive(kind, rng)
        cloud = sample_any(prim, 800, kind)
        noisy = geo.PointCloud(cloud.points + rng.normal(0, 0.01, size=cloud.points.shape))
        out = ft.FAMILY_FITTERS[kind](noisy, ft.estimate_normals(noisy))
        d = geo.distance_to_primitive(noisy.points, prim)
        initial_like = float(np.sqrt(np.mean(d * d)))
        assert out.rms_residual <= initial_like + 1e-12

    @pytest.mark.parametrize("kind", geo.ALL_KINDS)
    def test_exact_data_reaches_tiny_residual(self, kind):
        prim = random_primitive(kind, _rng(30 + kind))
        cloud = sample_any(prim, 1200, 31 + kind)
        out = ft.FAMILY_FITTERS[kind](cloud, ft.estimate_normals(cloud))
        assert out.rms_residual <= 1e-6 * geo.bbox_diagonal(cloud)

    def test_scale_equivariance_plane_sphere(self):
        rng = _rng(40)
        sphere = geo.SphereParams(1.3, np.array([0.1, 0.2, 0.3]))
        cloud = geo.sample_surface(sphere, 400, 41)
        noisy = geo.PointCloud(cloud.points + rng.normal(0, 0.01, size=cloud.points.shape))
        base = ft.fit_sphere(noisy)
        s = 3.7
        scaled = ft.fit_sphere(geo.PointCloud(noisy.points * s))
        assert scaled.params.radius == pytest.approx(s * base.params.radius, rel=1e-9)
        npt.assert_allclose(scaled.params.center, s * base.params.center, atol=1e-9)


class TestJacobians:
    @pytest.mark.parametrize("kind", geo.ALL_KINDS)
    def test_matches_central_differences(self, kind):
        rng = _rng(50 + kind)
        model = ft.RESIDUAL_MODELS[kind]
        dims = {geo.PLANE: 3, geo.SPHERE: 4, geo.CYLINDER: 6, geo.CONE: 6, geo.TORUS: 7}[kind]
        for _ in range(50):
            pts = rng.uniform(-3, 3, size=(12, 3))
            x = rng.uniform(0.2, 1.5, size=dims)
            if kind == geo.CONE:
                x[5] = rng.uniform(np.radians(15), np.radians(70))
            if kind == geo.TORUS:
                x[5], x[6] = rng.uniform(1.5, 3.0), rng.uniform(0.2, 0.8)
            _, jac = model(x, pts)
            step = 1e-6
            fd = np.empty_like(jac)
            for j in range(dims):
                xp, xm = x.copy(), x.copy()
                xp[j] += step
                xm[j] -= step
                fd[:, j] = (model(xp, pts)[0] - model(xm, pts)[0]) / (2 * step)
            scale = np.maximum(np.abs(fd), 1.0)
            assert np.max(np.abs(jac - fd) / scale) <= 1e-4
