"""Descriptor sampling, epipolar cross-correlation and soft-argmax localization"""

from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from pipeline.errors import DimensionMismatchError, EmptyMapError, PipelineError, SamplingError
from pipeline.geometry import CameraView, EpipolarSampleGrid, sample_epipolar_window
from utils.logger import get_logger

_LOGGER = get_logger(__name__)

UNIT_NORM_TOL = 1e-6
REFINE_STEP_PX = 0.25
REFINE_RADIUS_PX = 12.0
REFINE_PASSES = 2


@dataclass(frozen=True)
class DescriptorField:
    """Unit descriptors on an (h, w) grid at ``stride`` pixels per node

    Grid node (i, j) sits at image pixel (u, v) = (j·stride, i·stride).
    ``image_size`` (width, height) bounds the pixels that may be sampled; it
    defaults to the grid extent times the stride.
    """
    values: np.ndarray
    stride: int = 8
    image_size: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        values = np.array(self.values, copy=True)
        if values.ndim != 3 or values.shape[2] < 2:
            raise PipelineError(f"descriptor field must be (h, w, N) with N >= 2, got {values.shape}")
        if self.stride < 1:
            raise PipelineError(f"stride must be >= 1, got {self.stride}")
        norms = np.linalg.norm(values.astype(np.float64), axis=-1)
        if np.max(np.abs(norms - 1.0)) > UNIT_NORM_TOL:
            raise PipelineError("descriptor field entries must have unit L2 norm")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.image_size is None:
            object.__setattr__(self, "image_size", (values.shape[1] * self.stride, values.shape[0] * self.stride))

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def contains(self, p: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(p)
        width, height = self.image_size
        with np.errstate(invalid="ignore"):
            return (p[:, 0] >= 0) & (p[:, 0] <= width - 1) & (p[:, 1] >= 0) & (p[:, 1] <= height - 1)


def _bilinear(field: DescriptorField, p: np.ndarray) -> np.ndarray:
    h, w = field.values.shape[:2]
    gx = np.clip(p[:, 0] / field.stride, 0.0, w - 1)
    gy = np.clip(p[:, 1] / field.stride, 0.0, h - 1)
    x0 = np.minimum(np.floor(gx).astype(np.int64), w - 2) if w > 1 else np.zeros(len(p), dtype=np.int64)
    y0 = np.minimum(np.floor(gy).astype(np.int64), h - 2) if h > 1 else np.zeros(len(p), dtype=np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (gx - x0)[:, None]
    fy = (gy - y0)[:, None]
    grid = field.values
    top = grid[y0, x0] * (1.0 - fx) + grid[y0, x1] * fx
    bottom = grid[y1, x0] * (1.0 - fx) + grid[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def bilinear_sample(field: DescriptorField, p) -> np.ndarray:
    """Bilinearly interpolated (not renormalized) descriptor at image pixel p

    Raises:
        SamplingError: p outside the image bounds
    """
    p = np.asarray(p, dtype=np.float64).reshape(1, 2)
    if not field.contains(p)[0]:
        raise SamplingError(f"pixel {p[0].tolist()} is outside the {field.image_size} image")
    return _bilinear(field, p)[0]


def bilinear_sample_many(field: DescriptorField, points: np.ndarray) -> np.ndarray:
    """Vectorized bilinear_sample over (n, 2) pixels"""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if not np.all(field.contains(points)):
        raise SamplingError("some sample pixels are outside the image")
    return _bilinear(field, points)


@dataclass(frozen=True)
class CorrelationMap:
    """Raw correlations on a sample grid; invalid samples hold -inf"""
    values: np.ndarray
    grid: EpipolarSampleGrid

    @property
    def valid_mask(self) -> np.ndarray:
        return self.grid.valid_mask


@dataclass(frozen=True)
class MatchResult:
    """Localized match in one auxiliary view

    ``peak`` is the grid coordinate of the largest correlation. After
    refine_match, ``position`` is the refined estimate and ``coarse_position``
    keeps the soft-argmax over the original grid.
    """
    position: np.ndarray
    confidence: float
    normalized: np.ndarray
    peak: Optional[np.ndarray] = None
    coarse_position: Optional[np.ndarray] = None


def correlate(anchor_desc, field: DescriptorField, grid: EpipolarSampleGrid,
              clamp_nonneg: bool = False) -> CorrelationMap:
    """Dot products of the anchor descriptor with field samples over the grid

    ``clamp_nonneg`` applies a ReLU to valid entries.
    """
    anchor_desc = np.asarray(anchor_desc, dtype=np.float64).reshape(-1)
    if anchor_desc.shape[0] != field.dim:
        raise DimensionMismatchError(f"anchor descriptor has {anchor_desc.shape[0]} dims, field has {field.dim}")
    values = np.full(grid.valid_mask.shape, -np.inf)
    if np.any(grid.valid_mask):
        sampled = _bilinear(field, grid.samples[grid.valid_mask])
        scores = sampled @ anchor_desc
        if clamp_nonneg:
            scores = np.maximum(scores, 0.0)
        values[grid.valid_mask] = scores
    return CorrelationMap(values=values, grid=grid)


def spatial_softmax(C: CorrelationMap, scale: float = 1.0) -> np.ndarray:
    """Max-shifted softmax of scale·C over valid samples; invalid entries get 0

    Raises:
        EmptyMapError: no valid samples
    """
    mask = C.valid_mask
    if not np.any(mask):
        raise EmptyMapError("correlation map has no valid samples")
    logits = scale * C.values[mask]
    weights = np.exp(logits - logits.max())
    out = np.zeros(mask.shape)
    out[mask] = weights / weights.sum()
    return out


def soft_argmax(normalized: np.ndarray, grid: EpipolarSampleGrid) -> np.ndarray:
    """Probability-weighted mean of the valid sample coordinates"""
    mask = grid.valid_mask
    return normalized[mask] @ grid.samples[mask]


def soft_argmax_jacobian(C: CorrelationMap, scale: float = 1.0) -> np.ndarray:
    """∂x/∂C for x = soft_argmax(spatial_softmax(C, scale)), shape (W, H, 2)

    With p = softmax(scale·C): ∂x/∂C_i = scale·p_i·(s_i − x). Invalid entries are 0.
    """
    grid = C.grid
    mask = grid.valid_mask
    p = spatial_softmax(C, scale)
    x = soft_argmax(p, grid)
    jac = np.zeros(mask.shape + (2,))
    jac[mask] = scale * p[mask][:, None] * (grid.samples[mask] - x[None, :])
    return jac


def confidence_gradient(C: CorrelationMap) -> np.ndarray:
    """Subgradient of max(C): one-hot at the first maximum in row-major order"""
    grad = np.zeros(C.values.shape)
    flat = np.where(C.valid_mask, C.values, -np.inf).reshape(-1)
    grad.reshape(-1)[int(np.argmax(flat))] = 1.0
    return grad


def match_point(anchor_desc, field: DescriptorField, grid: EpipolarSampleGrid,
                scale: float = 1.0, clamp_nonneg: bool = False) -> MatchResult:
    """correlate → spatial_softmax → soft_argmax; confidence is the raw max correlation"""
    C = correlate(anchor_desc, field, grid, clamp_nonneg=clamp_nonneg)
    normalized = spatial_softmax(C, scale)
    position = soft_argmax(normalized, grid)
    flat = np.where(C.valid_mask, C.values, -np.inf).reshape(-1)
    best = int(np.argmax(flat))
    peak = grid.samples.reshape(-1, 2)[best].copy()
    return MatchResult(position=position, confidence=float(flat[best]), normalized=normalized, peak=peak)


def along_line_spacing(grid: EpipolarSampleGrid) -> float:
    """Median pixel distance between consecutive valid on-line samples, 0 if fewer than two"""
    row = grid.row(0)
    valid = grid.valid_mask[:, grid.center_row]
    steps = np.linalg.norm(np.diff(row, axis=0), axis=1)[valid[1:] & valid[:-1]]
    return float(np.median(steps)) if len(steps) else 0.0


def refine_match(anchor_desc, field: DescriptorField, coarse: MatchResult, grid: EpipolarSampleGrid,
                 anchor: CameraView, aux: CameraView, scale: float = 1.0, clamp_nonneg: bool = False,
                 step_px: float = REFINE_STEP_PX, radius_px: float = REFINE_RADIUS_PX,
                 passes: int = REFINE_PASSES) -> MatchResult:
    """Re-run the soft-argmax on dense windows of the same epipolar line

    The first window is centered on the coarse correlation peak and spans
    ``radius_px`` plus one coarse sample spacing on each side; later passes
    re-center on the previous estimate with ``radius_px``. A pass whose window
    has no valid sample keeps the previous estimate. Confidence and the
    normalized map are those of the coarse grid.
    """
    center = coarse.peak if coarse.peak is not None else coarse.position
    half_width = radius_px + along_line_spacing(grid)
    position = coarse.position
    for i in range(passes):
        window = sample_epipolar_window(anchor, aux, grid.source_pixel, center, half_width, step_px, grid.offset_px)
        C = correlate(anchor_desc, field, window, clamp_nonneg=clamp_nonneg)
        if not np.any(C.valid_mask):
            _LOGGER.debug(f"refinement pass {i} for {grid.source_pixel} has no valid samples")
            break
        position = soft_argmax(spatial_softmax(C, scale), window)
        center = position
        half_width = radius_px
    return replace(coarse, position=position, coarse_position=coarse.position)
