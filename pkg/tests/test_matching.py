"""Tests for descriptor sampling, correlation, softmax and soft-argmax matching."""

import numpy as np
import pytest

from pipeline.errors import DimensionMismatchError, EmptyMapError, PipelineError, SamplingError
from pipeline.geometry import CameraView, EpipolarSampleGrid, sample_epipolar_segment
from pipeline.matching import (
    CorrelationMap,
    DescriptorField,
    bilinear_sample,
    bilinear_sample_many,
    confidence_gradient,
    correlate,
    along_line_spacing,
    match_point,
    refine_match,
    soft_argmax,
    soft_argmax_jacobian,
    spatial_softmax,
)

DIM = 16


def unit(index: int, dim: int = DIM) -> np.ndarray:
    v = np.zeros(dim)
    v[index] = 1.0
    return v


def make_grid(samples, valid=None) -> EpipolarSampleGrid:
    """Single-row grid over explicit sample coordinates (W, 2)."""
    samples = np.asarray(samples, dtype=float).reshape(-1, 1, 2)
    valid = np.ones(samples.shape[:2], dtype=bool) if valid is None else np.asarray(valid).reshape(-1, 1)
    return EpipolarSampleGrid(samples=samples, depths=np.linspace(0.5, 10.0, len(samples)),
                              valid_mask=valid, offset_px=0, source_pixel=(0.0, 0.0))


def horizontal_grid(v: float = 32.0, u_from: int = 10, u_to: int = 50) -> EpipolarSampleGrid:
    u = np.arange(u_from, u_to + 1, dtype=float)
    return make_grid(np.stack([u, np.full_like(u, v)], axis=1))


def constant_field(vector, shape=(48, 64), stride=1) -> DescriptorField:
    return DescriptorField(np.broadcast_to(vector, shape + (len(vector),)).copy(), stride=stride)


def planted_field(centers, shape=(48, 64), sigma=1.5, background_weight=0.02) -> DescriptorField:
    """Gaussian splats of unit(0) over a constant orthogonal background unit(1), stride 1."""
    rows, cols = np.mgrid[0:shape[0], 0:shape[1]].astype(float)
    mass = np.zeros(shape)
    for u, v in centers:
        mass += np.exp(-((cols - u) ** 2 + (rows - v) ** 2) / (2.0 * sigma ** 2))
    values = mass[..., None] * unit(0) + background_weight * unit(1)
    values /= np.linalg.norm(values, axis=-1, keepdims=True)
    return DescriptorField(values, stride=1)


def random_field(seed=0, shape=(6, 5), stride=8) -> DescriptorField:
    values = np.random.default_rng(seed).normal(size=shape + (DIM,))
    values /= np.linalg.norm(values, axis=-1, keepdims=True)
    return DescriptorField(values, stride=stride)


class TestDescriptorField:
    def test_rejects_non_unit(self):
        with pytest.raises(PipelineError):
            DescriptorField(np.ones((4, 4, DIM)))

    def test_default_image_size(self):
        assert random_field().image_size == (40, 48)

    def test_caller_array_left_untouched(self):
        values = random_field().values.copy()
        field = DescriptorField(values, stride=8)
        assert values.flags.writeable
        assert not field.values.flags.writeable
        values[0, 0] = -values[0, 0]
        assert not np.array_equal(field.values[0, 0], values[0, 0])


class TestBilinearSample:
    def test_on_grid_node(self):
        field = random_field()
        np.testing.assert_allclose(bilinear_sample(field, (16.0, 8.0)), field.values[1, 2], atol=1e-15)

    def test_midpoint(self):
        field = random_field()
        expected = (field.values[0, 0] + field.values[0, 1]) / 2.0
        np.testing.assert_allclose(bilinear_sample(field, (4.0, 0.0)), expected, atol=1e-15)

    def test_constant_field(self):
        field = constant_field(unit(3), stride=8)
        for p in [(0.0, 0.0), (13.3, 7.1), (63.0, 47.0)]:
            np.testing.assert_allclose(bilinear_sample(field, p), unit(3), atol=1e-15)

    def test_not_renormalized(self):
        field = DescriptorField(np.stack([unit(0), unit(1)]).reshape(1, 2, DIM), stride=1)
        assert np.linalg.norm(bilinear_sample(field, (0.5, 0.0))) == pytest.approx(np.sqrt(0.5))

    @pytest.mark.parametrize("p", [(-0.1, 0.0), (0.0, -1.0), (40.0, 0.0), (0.0, 48.0), (np.nan, 1.0)])
    def test_out_of_bounds(self, p):
        with pytest.raises(SamplingError):
            bilinear_sample(random_field(), p)

    def test_many_matches_single(self):
        field = random_field()
        points = np.array([[0.0, 0.0], [12.5, 3.25], [39.0, 47.0]])
        expected = np.stack([bilinear_sample(field, p) for p in points])
        np.testing.assert_allclose(bilinear_sample_many(field, points), expected, atol=1e-15)


class TestCorrelate:
    def test_self_correlation(self):
        C = correlate(unit(2), constant_field(unit(2)), horizontal_grid())
        np.testing.assert_allclose(C.values[C.valid_mask], 1.0)

    def test_orthogonal(self):
        C = correlate(unit(2), constant_field(unit(5)), horizontal_grid())
        np.testing.assert_allclose(C.values[C.valid_mask], 0.0)

    def test_invalid_samples_are_minus_inf(self):
        valid = np.ones(41, dtype=bool)
        valid[:5] = False
        grid = make_grid(horizontal_grid().samples.reshape(-1, 2), valid)
        C = correlate(unit(2), constant_field(unit(2)), grid)
        assert np.all(np.isneginf(C.values[:5, 0]))

    def test_clamp_nonneg(self):
        C = correlate(-unit(2), constant_field(unit(2)), horizontal_grid(), clamp_nonneg=True)
        np.testing.assert_array_equal(C.values[C.valid_mask], 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            correlate(np.ones(3) / np.sqrt(3), constant_field(unit(2)), horizontal_grid())

    def test_planted_peak_column(self):
        C = correlate(unit(0), planted_field([(27.0, 32.0)]), horizontal_grid())
        assert C.grid.samples[np.argmax(C.values[:, 0]), 0, 0] == 27.0


class TestSpatialSoftmax:
    def test_uniform(self):
        grid = make_grid(np.zeros((300, 2)))
        p = spatial_softmax(CorrelationMap(np.zeros((300, 1)), grid))
        np.testing.assert_allclose(p, 1.0 / 300)

    def test_two_entries(self):
        grid = make_grid(np.zeros((2, 2)))
        p = spatial_softmax(CorrelationMap(np.array([[0.0], [np.log(3.0)]]), grid))
        np.testing.assert_allclose(p[:, 0], [0.25, 0.75])

    def test_single_valid(self):
        grid = make_grid(np.zeros((3, 2)), [False, True, False])
        p = spatial_softmax(CorrelationMap(np.array([[-np.inf], [0.3], [-np.inf]]), grid))
        np.testing.assert_array_equal(p[:, 0], [0.0, 1.0, 0.0])

    def test_no_valid(self):
        grid = make_grid(np.zeros((3, 2)), [False, False, False])
        with pytest.raises(EmptyMapError):
            spatial_softmax(CorrelationMap(np.full((3, 1), -np.inf), grid))

    def test_large_scale_is_stable(self):
        grid = make_grid(np.zeros((3, 2)))
        p = spatial_softmax(CorrelationMap(np.array([[1.0], [0.99], [-1.0]]), grid), scale=1e4)
        assert np.all(np.isfinite(p))
        assert p.sum() == pytest.approx(1.0)


class TestSoftArgmax:
    def test_point_mass(self):
        grid = make_grid([[1.0, 2.0], [5.0, 7.0], [9.0, 4.0]])
        np.testing.assert_array_equal(soft_argmax(np.array([[0.0], [1.0], [0.0]]), grid), [5.0, 7.0])

    def test_equal_mass_midpoint(self):
        grid = make_grid([[1.0, 2.0], [5.0, 8.0]])
        np.testing.assert_allclose(soft_argmax(np.array([[0.5], [0.5]]), grid), [3.0, 5.0])

    def test_uniform_is_centroid_of_valid(self):
        samples = np.array([[0.0, 0.0], [10.0, 0.0], [20.0, 6.0], [100.0, 100.0]])
        grid = make_grid(samples, [True, True, True, False])
        C = CorrelationMap(np.array([[0.0], [0.0], [0.0], [-np.inf]]), grid)
        np.testing.assert_allclose(soft_argmax(spatial_softmax(C), grid), [10.0, 2.0])

    def test_large_temperature_approaches_hard_argmax(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            samples = rng.uniform(0.0, 300.0, size=(60, 2))
            values = rng.uniform(0.0, 0.5, size=(60, 1))
            peak = rng.integers(60)
            values[peak] = 1.0
            grid = make_grid(samples)
            x = soft_argmax(spatial_softmax(CorrelationMap(values, grid), scale=100.0), grid)
            assert np.linalg.norm(x - samples[peak]) < 0.01

    def test_jacobian_invalid_entries_zero(self):
        grid = make_grid(np.arange(8.0).reshape(4, 2), [True, False, True, True])
        C = CorrelationMap(np.array([[0.1], [-np.inf], [0.5], [0.2]]), grid)
        jac = soft_argmax_jacobian(C, scale=3.0)
        assert jac.shape == (4, 1, 2)
        np.testing.assert_array_equal(jac[1, 0], [0.0, 0.0])

    def test_jacobian_sums_to_zero(self):
        # shifting every logit equally leaves the distribution unchanged
        grid = make_grid(np.random.default_rng(2).uniform(0, 100, size=(30, 2)))
        C = CorrelationMap(np.random.default_rng(3).normal(size=(30, 1)), grid)
        np.testing.assert_allclose(soft_argmax_jacobian(C, 2.0).sum(axis=(0, 1)), 0.0, atol=1e-12)


class TestConfidenceGradient:
    def test_one_hot_at_max(self):
        grid = make_grid(np.zeros((4, 2)), [True, True, False, True])
        C = CorrelationMap(np.array([[0.1], [0.7], [-np.inf], [0.7]]), grid)
        np.testing.assert_array_equal(confidence_gradient(C)[:, 0], [0.0, 1.0, 0.0, 0.0])


class TestMatchPoint:
    def test_planted_peak(self):
        true_position = np.array([30.3, 32.0])
        result = match_point(unit(0), planted_field([true_position]), horizontal_grid(), scale=200.0)
        assert np.linalg.norm(result.position - true_position) < 0.5
        assert result.confidence >= 0.99
        assert result.normalized.sum() == pytest.approx(1.0)

    def test_orthogonal_field(self):
        grid = horizontal_grid()
        result = match_point(unit(0), constant_field(unit(1)), grid, scale=20.0)
        assert result.confidence == 0.0
        np.testing.assert_allclose(result.position, grid.valid_samples().mean(axis=0))

    def test_two_equal_peaks_midpoint(self):
        result = match_point(unit(0), planted_field([(20.0, 32.0), (40.0, 32.0)]), horizontal_grid(),
                             scale=200.0)
        np.testing.assert_allclose(result.position, [30.0, 32.0], atol=1e-9)


SMALL_K = np.array([[100.0, 0.0, 32.0], [0.0, 100.0, 24.0], [0.0, 0.0, 1.0]])


@pytest.fixture
def small_pair():
    """Rectified 64x48 pair, 10 cm baseline: anchor (40, 24) at depth z images at (40 - 10/z, 24)."""
    anchor = CameraView(K=SMALL_K, R=np.eye(3), t=np.zeros(3), image_size=(64, 48))
    aux = CameraView(K=SMALL_K, R=np.eye(3), t=np.array([-0.1, 0.0, 0.0]), image_size=(64, 48))
    return anchor, aux


class TestRefineMatch:
    TRUE_POSITION = np.array([27.3, 24.0])

    def _coarse(self, small_pair, field, n_samples=6):
        anchor, aux = small_pair
        grid = sample_epipolar_segment(anchor, aux, (40.0, 24.0), 0.5, 10.0, n_samples, 1)
        return grid, match_point(unit(0), field, grid, scale=20.0)

    def test_recovers_subpixel_peak(self, small_pair):
        field = planted_field([self.TRUE_POSITION], background_weight=0.5)
        grid, coarse = self._coarse(small_pair, field)
        refined = refine_match(unit(0), field, coarse, grid, *small_pair, scale=20.0)
        coarse_error = np.linalg.norm(coarse.position - self.TRUE_POSITION)
        refined_error = np.linalg.norm(refined.position - self.TRUE_POSITION)
        assert refined_error < 0.02
        assert refined_error < coarse_error / 5.0

    def test_same_answer_for_any_coarse_length(self, small_pair):
        field = planted_field([self.TRUE_POSITION], background_weight=0.5)
        positions = []
        for n_samples in (6, 12, 25, 50):
            grid, coarse = self._coarse(small_pair, field, n_samples)
            positions.append(refine_match(unit(0), field, coarse, grid, *small_pair, scale=20.0).position)
        np.testing.assert_allclose(positions, positions[0], atol=1e-6)

    def test_keeps_coarse_confidence_and_map(self, small_pair):
        field = planted_field([self.TRUE_POSITION], background_weight=0.5)
        grid, coarse = self._coarse(small_pair, field)
        refined = refine_match(unit(0), field, coarse, grid, *small_pair, scale=20.0)
        assert refined.confidence == coarse.confidence
        assert refined.normalized is coarse.normalized
        np.testing.assert_array_equal(refined.coarse_position, coarse.position)

    def test_peak_is_best_sample(self, small_pair):
        field = planted_field([self.TRUE_POSITION], background_weight=0.5)
        grid, coarse = self._coarse(small_pair, field)
        np.testing.assert_allclose(coarse.peak, [27.6, 24.0], atol=1e-9)

    def test_along_line_spacing(self, small_pair):
        grid, _ = self._coarse(small_pair, constant_field(unit(1)))
        assert along_line_spacing(grid) == pytest.approx(3.8)
