import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from conftest import gradient_errors, random_cloud, random_scene
from splatdistill.errors import InitError, ParamError, ShapeError, StateError
from splatdistill.splat import (
    Camera, CapsuleBody, GaussianCloud, TriangleMesh, humanoid, init_from_surface, orbit_cameras,
    project, project_gaussian, render, render_backward,
)
from splatdistill.splat.cloud import logit, quat_to_rotmat, sigmoid


class TestCamera:
    def test_azimuth_wraps(self):
        assert Camera(azimuth=370).azimuth == pytest.approx(10)
        assert Camera(azimuth=-90).azimuth == pytest.approx(270)

    def test_rejects_bad_geometry(self):
        with pytest.raises(ParamError):
            Camera(width=0)
        with pytest.raises(ParamError):
            Camera(radius=0)
        with pytest.raises(ParamError):
            Camera(mode="fisheye")

    def test_front_view_looks_down_minus_z(self):
        cam = Camera(0, 0, 3.0)
        np.testing.assert_allclose(cam.position, [0, 0, 3])
        np.testing.assert_allclose(cam.world_to_camera[2], [0, 0, -1], atol=1e-12)
        # image right is the subject's left (+x)
        np.testing.assert_allclose(cam.world_to_camera[0], [1, 0, 0], atol=1e-12)

    def test_rotation_is_orthonormal(self):
        for cam in orbit_cameras(np.linspace(0, 350, 8), elevation=25):
            W = cam.world_to_camera
            np.testing.assert_allclose(W @ W.T, np.eye(3), atol=1e-12)

    def test_dict_round_trip(self):
        cam = Camera(33, -5, 2.0, 40, 30, mode="orthographic", target=(0.1, 0.2, 0.3))
        assert Camera.from_dict(cam.to_dict()) == cam


class TestCloud:
    def test_activation_round_trip(self):
        c = GaussianCloud.from_activated(np.zeros((2, 3)), [0.1, 0.2, 0.3], [0.25, 0.75], 0.5)
        np.testing.assert_allclose(c.scales[0], [0.1, 0.2, 0.3])
        np.testing.assert_allclose(c.opacities, [0.25, 0.75])
        np.testing.assert_allclose(sigmoid(logit(0.3)), 0.3)

    def test_empty_or_nonpositive_scale_rejected(self):
        with pytest.raises(InitError):
            GaussianCloud.from_activated(np.zeros((0, 3)), 0.1, 0.5, 0.5)
        with pytest.raises(InitError):
            GaussianCloud.from_activated(np.zeros((1, 3)), 0.0, 0.5, 0.5)

    @given(st.lists(st.floats(-3, 3), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 1e-3),
           st.lists(st.floats(-4, 1), min_size=3, max_size=3))
    def test_covariance_is_spd(self, q, log_s):
        c = GaussianCloud(np.zeros((1, 3)), [log_s], [q], [0.0], [[0.5, 0.5, 0.5]])
        S = c.covariances[0]
        np.testing.assert_allclose(S, S.T, atol=1e-14)
        assert np.all(np.linalg.eigvalsh(S) > 0)
        np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(S)), np.sort(np.exp(log_s) ** 2), rtol=1e-8)

    def test_rotation_matches_oracle(self, rng):
        q = rng.standard_normal((5, 4))
        for qi, R in zip(q, quat_to_rotmat(q)):
            np.testing.assert_allclose(R, oracles.rotmat(qi), atol=1e-12)

    def test_gaussian_view(self):
        c = GaussianCloud.from_activated([[1, 2, 3]], 0.2, 0.4, [0.1, 0.2, 0.3], quats=[[2, 0, 0, 0]])
        g = c[0]
        np.testing.assert_allclose(g.rotation, [1, 0, 0, 0])
        np.testing.assert_allclose(g.covariance, 0.04 * np.eye(3))
        assert g.opacity == pytest.approx(0.4)

    def test_normalize_restores_constraints(self):
        c = GaussianCloud(np.zeros((1, 3)), np.zeros((1, 3)), [[0, 3, 0, 4]], [0.0], [[1.5, -0.2, 0.5]])
        c.normalize()
        np.testing.assert_allclose(np.linalg.norm(c.quats), 1.0)
        np.testing.assert_allclose(c.colors, [[1.0, 0.0, 0.5]])

    def test_set_params_bumps_version(self):
        c = GaussianCloud.from_activated(np.zeros((1, 3)), 0.1, 0.5, 0.5)
        v = c.version
        c.set_params(c.params())
        assert c.version == v + 1


class TestSurface:
    def test_single_triangle_samples_stay_inside(self):
        # unit-area right triangle in the z = 0.5 plane
        s = np.sqrt(2.0)
        mesh = TriangleMesh(np.array([[0, 0, 0.5], [s, 0, 0.5], [0, s, 0.5]]), np.array([[0, 1, 2]]))
        np.testing.assert_allclose(mesh.triangle_areas(), [1.0])
        c = init_from_surface(mesh, 3, seed=7)
        assert len(c) == 3
        p = c.means
        np.testing.assert_allclose(p[:, 2], 0.5)
        assert np.all(p[:, 0] >= 0) and np.all(p[:, 1] >= 0) and np.all(p[:, 0] + p[:, 1] <= s + 1e-12)

    def test_initial_attributes(self):
        c = init_from_surface(humanoid(), 50, seed=0)
        np.testing.assert_allclose(c.opacities, 0.1)
        np.testing.assert_allclose(c.colors, 0.5)
        # isotropic, half the mean nearest-neighbor spacing
        from scipy.spatial import cKDTree

        d, _ = cKDTree(c.means).query(c.means, k=2)
        np.testing.assert_allclose(c.scales, 0.5 * d[:, 1].mean())

    def test_count_one_gets_identity_rotation(self):
        c = init_from_surface(humanoid(), 1, seed=0)
        assert len(c) == 1
        np.testing.assert_allclose(c.quats[0], [1, 0, 0, 0])

    def test_capsule_bounds_match_analytic_extent(self):
        body = humanoid()
        c = init_from_surface(body, 10000, seed=3)
        # analytic extent: capsule endpoints grown by their radii
        lo = np.min([np.minimum(cap.p0, cap.p1) - cap.radius for cap in body.capsules], axis=0)
        hi = np.max([np.maximum(cap.p0, cap.p1) + cap.radius for cap in body.capsules], axis=0)
        diag = np.linalg.norm(hi - lo)
        np.testing.assert_allclose(c.means.min(axis=0), lo, atol=0.01 * diag)
        np.testing.assert_allclose(c.means.max(axis=0), hi, atol=0.01 * diag)

    def test_bad_inputs(self):
        with pytest.raises(InitError):
            init_from_surface(humanoid(), 0)
        with pytest.raises(InitError):
            init_from_surface(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int)), 5)
        with pytest.raises(InitError):
            init_from_surface(CapsuleBody(()), 5)
        flat = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0.0]]), np.array([[0, 1, 2]]))
        with pytest.raises(InitError):
            init_from_surface(flat, 5)

    def test_seeded(self):
        a = init_from_surface(humanoid(), 20, seed=5)
        b = init_from_surface(humanoid(), 20, seed=5)
        np.testing.assert_array_equal(a.means, b.means)


class TestProjection:
    def test_orthographic_isotropic(self):
        cam = Camera(0, 0, 3.0, 32, 32, mode="orthographic")
        c = GaussianCloud.from_activated([[0.1, 0.2, 0.0]], 0.05, 0.5, 0.5)
        mean, cov, depth = project_gaussian(c[0], cam)
        k = cam.pixel_scale
        np.testing.assert_allclose(cov, np.diag([(0.05 * k) ** 2] * 2) + 0.3 * np.eye(2), atol=1e-12)
        assert depth == pytest.approx(3.0)

    def test_on_axis_projects_to_center(self):
        cam = Camera(40, 10, 2.5, 33, 21)
        c = GaussianCloud.from_activated([[0, 0, 0]], 0.1, 0.5, 0.5)
        mean, _, _ = project_gaussian(c[0], cam)
        np.testing.assert_allclose(mean, [16, 10], atol=1e-12)

    def test_behind_camera_is_culled(self):
        cam = Camera(0, 0, 1.0)
        c = GaussianCloud.from_activated([[0, 0, 2.0]], 0.1, 0.5, 0.5)
        assert project_gaussian(c[0], cam) is None

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_numeric_jacobian(self, seed):
        rng = np.random.default_rng(seed)
        c = random_cloud(rng, 1)
        for mode in ("perspective", "orthographic"):
            cam = Camera(rng.uniform(0, 360), rng.uniform(-40, 40), rng.uniform(2, 4), 48, 40, mode=mode)
            mean, cov, depth = project_gaussian(c[0], cam)
            m_ref, cov_ref, d_ref = oracles.project_numeric(c.means[0], c.scales[0], c.quats[0], cam)
            np.testing.assert_allclose(mean, m_ref, atol=1e-9)
            np.testing.assert_allclose(cov, cov_ref, atol=1e-5)
            assert depth == pytest.approx(d_ref)

    def test_eigenvalues_at_least_blur(self, rng):
        c = random_cloud(rng, 40, scale=(1e-4, 0.3))
        p = project(c, Camera(20, 10))
        ev = np.linalg.eigvalsh(p.cov2d[p.visible])
        assert np.all(ev >= 0.3 - 1e-12)


def _dense(cloud, cam, bg):
    return oracles.brute_force_render(cloud.means, cloud.scales, cloud.quats, cloud.opacities, cloud.colors, cam, bg)


class TestRender:
    def test_opaque_gaussian_at_pixel_center(self):
        cam = Camera(0, 0, 3.0, 9, 9, mode="orthographic")
        c = GaussianCloud.from_activated([[0, 0, 0]], 0.05, 1.0, [0.2, 0.4, 0.6])
        out = render(c, cam, (0, 0, 0))
        np.testing.assert_allclose(out.image[4, 4], [0.2, 0.4, 0.6], atol=1e-9)

    def test_opaque_front_hides_back(self):
        cam = Camera(0, 0, 3.0, 9, 9, mode="orthographic")
        c = GaussianCloud.from_activated([[0, 0, -0.5], [0, 0, 0.5]], 0.05, [1.0, 1.0], [[0, 1, 0], [1, 0, 0]])
        out = render(c, cam, (0, 0, 1))
        np.testing.assert_allclose(out.image[4, 4], [1, 0, 0], atol=1e-9)

    def test_nothing_visible_is_background(self):
        cam = Camera(0, 0, 1.0, 8, 8)
        c = GaussianCloud.from_activated([[0, 0, 5.0]], 0.1, 0.9, 0.3)
        out = render(c, cam, (0.1, 0.2, 0.3))
        np.testing.assert_allclose(out.image, np.broadcast_to([0.1, 0.2, 0.3], (8, 8, 3)))
        np.testing.assert_array_equal(out.alpha, 0)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_brute_force(self, seed):
        cloud, cam, bg = random_scene(seed)
        out = render(cloud, cam, bg)
        ref, ref_alpha = _dense(cloud, cam, bg)
        np.testing.assert_allclose(out.image, ref, atol=1e-6)
        np.testing.assert_allclose(out.alpha, ref_alpha, atol=1e-6)

    @given(st.integers(0, 10_000))
    def test_alpha_in_unit_interval_and_permutation_invariant(self, seed):
        cloud, cam, bg = random_scene(seed, max_gaussians=24, max_size=16)
        out = render(cloud, cam, bg)
        assert out.alpha.min() >= 0 and out.alpha.max() <= 1
        perm = np.random.default_rng(seed).permutation(len(cloud))
        out2 = render(cloud.subset(perm), cam, bg)
        np.testing.assert_allclose(out2.image, out.image, atol=1e-12)

    def test_transmittance_non_increasing(self):
        cloud, cam, bg = random_scene(3)
        out = render(cloud, cam, bg)
        for tile in out.trace.tiles:
            assert np.all(np.diff(tile.T, axis=0) <= 1e-15)

    def test_tile_sizes_agree(self):
        cloud, cam, bg = random_scene(11)
        a = render(cloud, cam, bg, tile_size=4).image
        b = render(cloud, cam, bg, tile_size=16).image
        c = render(cloud, cam, bg, tile_size=None).image
        np.testing.assert_allclose(a, c, atol=1e-9)
        np.testing.assert_allclose(b, c, atol=1e-9)


class TestRenderBackward:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, seed):
        for name, err in gradient_errors(seed).items():
            assert err < 1e-3, name

    def test_zero_upstream_gives_zero_gradients(self):
        cloud, cam, bg = random_scene(1)
        out = render(cloud, cam, bg)
        for g in render_backward(cloud, out, np.zeros((cam.height, cam.width, 3))).as_dict().values():
            np.testing.assert_array_equal(g, 0)

    def test_color_gradient_positive_for_sum(self):
        cam = Camera(0, 0, 3.0, 16, 16)
        c = GaussianCloud.from_activated([[0, 0, 0]], 0.1, 0.7, 0.3)
        out = render(c, cam, (0, 0, 0))
        g = render_backward(c, out, np.ones((16, 16, 3)))
        assert np.all(g.colors > 0)

    def test_missing_or_stale_trace(self):
        cloud, cam, bg = random_scene(2)
        up = np.zeros((cam.height, cam.width, 3))
        with pytest.raises(StateError):
            render_backward(cloud, render(cloud, cam, bg, keep_trace=False), up)
        out = render(cloud, cam, bg)
        cloud.set_params(cloud.params())
        with pytest.raises(StateError):
            render_backward(cloud, out, up)

    def test_upstream_shape_checked(self):
        cloud, cam, bg = random_scene(2)
        with pytest.raises(ShapeError):
            render_backward(cloud, render(cloud, cam, bg), np.zeros((3, 3, 3)))

    def test_accumulates_densify_statistics(self):
        cloud, cam, bg = random_scene(4)
        out = render(cloud, cam, bg)
        render_backward(cloud, out, np.ones((cam.height, cam.width, 3)))
        assert cloud.backward_passes == 1
        assert np.all(cloud.grad_count[project(cloud, cam).visible] == 1)
        assert np.any(cloud.grad_accum > 0)
