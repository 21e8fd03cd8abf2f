"""Tests for the synthetic scene generator and its oracles."""

from dataclasses import replace

import numpy as np
import pytest

from pipeline.errors import InvisiblePointError, PipelineError, UnderdeterminedError, VisibilityError
from pipeline.scene_synth import SceneConfig, generate_scene, make_views, oracle_match, oracle_triangulate
from pipeline.triangulation import Observation, triangulate


@pytest.fixture(scope="module")
def rectified_scene():
    return generate_scene(SceneConfig(n_points=128, n_views=2, rotation_jitter=0.0, seed=5))


@pytest.fixture(scope="module")
def wide_range_scene():
    return generate_scene(SceneConfig(n_points=512, depth_min=0.5, depth_max=10.0, seed=9,
                                      require_all_visible=False))


class TestSceneConfig:
    @pytest.mark.parametrize("kwargs", [
        {"n_views": 1},
        {"depth_min": 0.0},
        {"depth_min": 3.0, "depth_max": 2.0},
        {"depth_max": float("inf")},
        {"descriptor_dim": 1},
        {"peak_sharpness": 0.0},
        {"descriptor_stride": 8},
        {"descriptor_stride": 4, "peak_sharpness": 3.9},
    ])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(PipelineError):
            SceneConfig(**kwargs)

    def test_splats_as_wide_as_stride(self):
        config = SceneConfig(descriptor_stride=8, peak_sharpness=8.0)
        assert config.descriptor_stride == 8


class TestMakeViews:
    def test_anchor_at_origin(self):
        views = make_views(SceneConfig(n_views=4))
        np.testing.assert_array_equal(views[0].R, np.eye(3))
        np.testing.assert_array_equal(views[0].t, np.zeros(3))

    def test_centers_along_baseline(self):
        views = make_views(SceneConfig(n_views=4, baseline=0.3))
        centers = np.stack([v.center for v in views])
        np.testing.assert_allclose(centers[:, 0], [0.0, 0.1, 0.2, 0.3], atol=1e-12)
        np.testing.assert_allclose(centers[:, 1:], 0.0, atol=1e-12)


class TestGenerateScene:
    def test_deterministic(self):
        config = SceneConfig(n_points=32, n_views=3, seed=11, pixel_noise=0.3)
        a, b = generate_scene(config), generate_scene(config)
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.anchor_pixels, b.anchor_pixels)
        for k in range(3):
            np.testing.assert_array_equal(a.fields[k].values, b.fields[k].values)
            np.testing.assert_array_equal(a.score_maps[k].values, b.score_maps[k].values)
            np.testing.assert_array_equal(a.gt_depths[k].values, b.gt_depths[k].values)
            np.testing.assert_array_equal(a.images[k], b.images[k])

    def test_seed_changes_scene(self):
        a = generate_scene(SceneConfig(n_points=16, seed=1))
        b = generate_scene(SceneConfig(n_points=16, seed=2))
        assert not np.array_equal(a.points, b.points)

    def test_shapes(self, small_scene):
        assert small_scene.points.shape == (64, 3)
        assert small_scene.descriptors.shape == (64, 32)
        assert len(small_scene.views) == len(small_scene.fields) == len(small_scene.gt_depths) == 3
        assert small_scene.fields[0].values.shape == (240, 320, 32)
        assert small_scene.fields[0].values.dtype == np.float32
        assert small_scene.images[0].shape == (240, 320)
        assert small_scene.images[0].dtype == np.uint8

    def test_descriptors_unit_norm(self, small_scene):
        np.testing.assert_allclose(np.linalg.norm(small_scene.descriptors, axis=1), 1.0)
        norms = np.linalg.norm(small_scene.fields[1].values.astype(np.float64), axis=-1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)

    def test_score_peaks_at_anchor_pixels(self, small_scene):
        scores = small_scene.score_maps[0].values
        u, v = small_scene.anchor_pixels[:, 0], small_scene.anchor_pixels[:, 1]
        np.testing.assert_array_equal(scores[v, u], 1.0)

    def test_gt_depth_at_anchor_pixels(self, small_scene):
        gt = small_scene.gt_depths[0]
        u, v = small_scene.anchor_pixels[:, 0], small_scene.anchor_pixels[:, 1]
        np.testing.assert_allclose(gt.values[v, u], small_scene.points[:, 2], atol=1e-9)
        assert gt.n_valid == small_scene.n_points

    def test_gt_depth_in_aux_views(self, small_scene):
        view = small_scene.views[2]
        for j in range(small_scene.n_points):
            pixel = oracle_match(small_scene, j, 2)
            col, row = (int(np.floor(c + 0.5)) for c in pixel)
            _, depth = view.project_points(small_scene.points[j])
            assert small_scene.gt_depths[2].values[row, col] == pytest.approx(depth[0], abs=1e-9)

    def test_depth_range(self, wide_range_scene):
        gt = wide_range_scene.gt_depths[0]
        depths = gt.values[gt.valid_mask]
        assert len(depths) == 512
        assert depths.min() >= 0.5
        assert depths.max() <= 10.0

    def test_points_lie_on_anchor_pixel_rays(self, wide_range_scene):
        pixels = wide_range_scene.anchor_pixels
        assert pixels.dtype.kind == "i"
        depths = wide_range_scene.points[:, 2]
        back = wide_range_scene.views[0].unproject(pixels.astype(float), depths)
        np.testing.assert_allclose(back, wide_range_scene.points, atol=1e-12)
        # uniform in depth, not in frustum volume: about half the points are nearer than the mid-range
        assert 0.4 < np.mean(depths < 5.25) < 0.6

    def test_points_visible_in_every_view(self, small_scene):
        for view in small_scene.views:
            uv, depth = view.project_points(small_scene.points)
            assert np.all(depth > 0)
            assert np.all(view.in_bounds(uv))

    def test_anchor_pixels_separated(self, small_scene):
        p = small_scene.anchor_pixels
        diff = np.abs(p[:, None, :] - p[None, :, :]).max(axis=-1)
        np.fill_diagonal(diff, 99)
        assert diff.min() >= 5

    def test_infeasible_visibility(self):
        with pytest.raises(VisibilityError):
            generate_scene(SceneConfig(n_points=200, image_size=(40, 30)))


class TestOracles:
    def test_anchor_match_is_anchor_pixel(self, small_scene):
        for j in range(small_scene.n_points):
            np.testing.assert_allclose(oracle_match(small_scene, j, 0), small_scene.anchor_pixels[j], atol=1e-9)

    def test_rectified_match_keeps_row(self, rectified_scene):
        for j in range(rectified_scene.n_points):
            aux = oracle_match(rectified_scene, j, 1)
            assert aux[1] == pytest.approx(rectified_scene.anchor_pixels[j, 1], abs=1e-9)
            assert aux[0] < rectified_scene.anchor_pixels[j, 0]

    def test_reprojection_round_trip(self, small_scene):
        for k, view in enumerate(small_scene.views):
            for j in range(small_scene.n_points):
                pixel = oracle_match(small_scene, j, k)
                _, depth = view.project_points(small_scene.points[j])
                np.testing.assert_allclose(view.unproject(pixel, depth)[0], small_scene.points[j], atol=1e-9)

    def test_invisible_point(self, small_scene):
        behind = replace(small_scene, points=np.array([[0.0, 0.0, -1.0]]))
        with pytest.raises(InvisiblePointError):
            oracle_match(behind, 0, 0)

    def test_triangulate_noiseless(self, small_scene):
        for j in range(small_scene.n_points):
            np.testing.assert_allclose(oracle_triangulate(small_scene, j), small_scene.points[j], atol=1e-9)

    def test_agrees_with_svd_triangulation(self, small_scene):
        for j in range(small_scene.n_points):
            obs = [Observation(oracle_match(small_scene, j, k), view.P, 0.7)
                   for k, view in enumerate(small_scene.views)]
            np.testing.assert_allclose(triangulate(obs).z, oracle_triangulate(small_scene, j), atol=1e-9)

    def test_noise_is_seeded(self, small_scene):
        a = oracle_triangulate(small_scene, 3, pixel_noise_sd=0.5, seed=1)
        b = oracle_triangulate(small_scene, 3, pixel_noise_sd=0.5, seed=1)
        c = oracle_triangulate(small_scene, 3, pixel_noise_sd=0.5, seed=2)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)
        assert np.linalg.norm(a - small_scene.points[3]) < 1.0

    def test_underdetermined(self, small_scene):
        far_left = replace(small_scene, points=np.array([[-50.0, 0.0, 1.0]]))
        with pytest.raises(UnderdeterminedError):
            oracle_triangulate(far_left, 0)
