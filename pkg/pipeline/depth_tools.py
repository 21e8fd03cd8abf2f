"""Sparse-depth imputation, IDW densification, depth metrics and loss terms"""

import math
from dataclasses import dataclass, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from pipeline.errors import (
    InvalidDepthError,
    LabelRangeError,
    NoValidPixelsError,
    NonFiniteLossError,
    PipelineError,
    ResolutionMismatchError,
    ScaleMismatchError,
)
from utils.logger import get_logger

_LOGGER = get_logger(__name__)

# Downsampling factor per pyramid level, original resolution to 1/16
PYRAMID_FACTORS = (1, 2, 4, 16)


@dataclass(frozen=True)
class DepthImage:
    """Depth in meters, shape (height, width); invalid entries are exactly 0

    ``source_index`` is the imputation routing record: for each pixel, the id
    of the point that wrote it, or -1.
    """
    values: np.ndarray
    valid_mask: np.ndarray
    source_index: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        mask = np.asarray(self.valid_mask, dtype=bool)
        if values.ndim != 2 or mask.shape != values.shape:
            raise PipelineError(f"depth values {values.shape} and mask {mask.shape} must be equal 2-D shapes")
        if np.any(mask & ~(np.isfinite(values) & (values > 0))):
            raise InvalidDepthError("valid depth entries must be finite and > 0")
        values[~mask] = 0.0
        values.setflags(write=False)
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid_mask", mask)

    @classmethod
    def from_values(cls, values) -> 'DepthImage':
        """Valid wherever the value is finite and positive"""
        values = np.asarray(values, dtype=np.float64)
        mask = np.isfinite(values) & (values > 0)
        return cls(values=np.where(mask, values, 0.0), valid_mask=mask)

    @classmethod
    def empty(cls, size: Tuple[int, int]) -> 'DepthImage':
        width, height = size
        return cls(values=np.zeros((height, width)), valid_mask=np.zeros((height, width), dtype=bool))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())


@dataclass(frozen=True)
class LossConfig:
    """Loss weights; depth term i is weighted w_d1·scale_damping^i"""
    w_ip: float = 0.1
    w_2d: float = 1.0
    w_3d: float = 2.0
    w_sm: float = 1.0
    w_d1: float = 2.0
    scale_damping: float = 0.7
    n_scales: int = 4
    huber_beta: float = 1.0

    def __post_init__(self):
        for name in ("w_ip", "w_2d", "w_3d", "w_sm", "w_d1"):
            if getattr(self, name) < 0:
                raise PipelineError(f"{name} must be >= 0")
        if self.n_scales < 1 or self.n_scales > len(PYRAMID_FACTORS):
            raise PipelineError(f"n_scales must be within [1, {len(PYRAMID_FACTORS)}]")
        if not 0.0 < self.scale_damping <= 1.0:
            raise PipelineError("scale_damping must be within (0, 1]")
        if self.huber_beta <= 0:
            raise PipelineError("huber_beta must be > 0")

    def depth_weights(self) -> List[float]:
        return [self.w_d1 * self.scale_damping ** i for i in range(self.n_scales)]


@dataclass(frozen=True)
class MetricsReport:
    abs_rel: float
    abs_diff: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    n_valid: int

    @staticmethod
    def header() -> List[str]:
        return [f.name for f in fields(MetricsReport)]

    def row(self) -> List[str]:
        return [repr(getattr(self, name)) for name in self.header()]


def impute_sparse_depth(points: Sequence[Tuple[Sequence[float], float, float]],
                        size: Tuple[int, int]) -> DepthImage:
    """Write (pixel, depth, confidence) points into an empty (width, height) image

    Pixels round to nearest with ties toward +inf. On a collision the higher
    confidence wins, then the smaller depth. Points landing outside the image
    are dropped.

    Raises:
        InvalidDepthError: a non-positive or non-finite depth
    """
    width, height = size
    values = np.zeros((height, width))
    confidence = np.full((height, width), -np.inf)
    source = np.full((height, width), -1, dtype=np.int64)
    dropped = 0
    for idx, (pixel, depth, conf) in enumerate(points):
        depth = float(depth)
        if not np.isfinite(depth) or depth <= 0.0:
            raise InvalidDepthError(f"point {idx} has non-positive depth {depth}")
        col = int(math.floor(float(pixel[0]) + 0.5))
        row = int(math.floor(float(pixel[1]) + 0.5))
        if not (0 <= col < width and 0 <= row < height):
            dropped += 1
            continue
        conf = float(conf)
        current = source[row, col]
        if current >= 0 and (conf < confidence[row, col]
                             or (conf == confidence[row, col] and depth >= values[row, col])):
            continue
        values[row, col] = depth
        confidence[row, col] = conf
        source[row, col] = idx
    if dropped:
        _LOGGER.warning(f"{dropped} points fell outside the {width}x{height} image and were not imputed")
    source.setflags(write=False)
    return DepthImage(values=values, valid_mask=source >= 0, source_index=source)


def route_depth_gradient(imputed: DepthImage, grad_image: np.ndarray, n_points: int) -> np.ndarray:
    """Scatter an image-space gradient back to the source points (switch unpooling)"""
    if imputed.source_index is None:
        raise PipelineError("depth image carries no routing record")
    grad_image = np.asarray(grad_image, dtype=np.float64)
    if grad_image.shape != imputed.shape:
        raise ResolutionMismatchError(f"gradient {grad_image.shape} vs image {imputed.shape}")
    grad = np.zeros(n_points)
    mask = imputed.source_index >= 0
    np.add.at(grad, imputed.source_index[mask], grad_image[mask])
    return grad


def densify_idw(sparse: DepthImage, power: float = 2.0, k_neighbors: int = 4) -> DepthImage:
    """Fill invalid pixels with the inverse-distance-weighted mean of the k nearest valid pixels

    Raises:
        NoValidPixelsError: the input has no valid pixel
    """
    if sparse.n_valid == 0:
        raise NoValidPixelsError("cannot densify an image without valid pixels")
    if k_neighbors < 1:
        raise PipelineError("k_neighbors must be >= 1")

    valid_rc = np.argwhere(sparse.valid_mask)
    holes_rc = np.argwhere(~sparse.valid_mask)
    dense = sparse.values.copy()
    if len(holes_rc):
        k = min(k_neighbors, len(valid_rc))
        tree = cKDTree(valid_rc.astype(np.float64))
        dist, idx = tree.query(holes_rc.astype(np.float64), k=k)
        dist = dist.reshape(len(holes_rc), k)
        idx = idx.reshape(len(holes_rc), k)
        weights = 1.0 / dist ** power
        depths = sparse.values[valid_rc[idx, 0], valid_rc[idx, 1]]
        dense[holes_rc[:, 0], holes_rc[:, 1]] = (weights * depths).sum(axis=1) / weights.sum(axis=1)
    return DepthImage(values=dense, valid_mask=np.ones(dense.shape, dtype=bool))


def depth_metrics(pred: DepthImage, gt: DepthImage) -> MetricsReport:
    """Standard depth metrics over pixels valid in both images

    Reductions run over row-major flattened arrays with numpy's pairwise sum.

    Raises:
        ResolutionMismatchError: shapes differ
        NoValidPixelsError: no jointly valid pixels
    """
    if pred.shape != gt.shape:
        raise ResolutionMismatchError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    mask = pred.valid_mask & gt.valid_mask
    n = int(mask.sum())
    if n == 0:
        raise NoValidPixelsError("no jointly valid pixels")
    p = pred.values[mask]
    g = gt.values[mask]
    diff = p - g
    ratio = np.maximum(p / g, g / p)
    log_diff = np.log(p) - np.log(g)
    return MetricsReport(
        abs_rel=float(np.sum(np.abs(diff) / g) / n),
        abs_diff=float(np.sum(np.abs(diff)) / n),
        sq_rel=float(np.sum(diff ** 2 / g) / n),
        rmse=float(np.sqrt(np.sum(diff ** 2) / n)),
        rmse_log=float(np.sqrt(np.sum(log_diff ** 2) / n)),
        delta1=float(np.sum(ratio < 1.25) / n),
        delta2=float(np.sum(ratio < 1.25 ** 2) / n),
        delta3=float(np.sum(ratio < 1.25 ** 3) / n),
        n_valid=n,
    )


def smooth_l1(pred, target, beta: float = 1.0) -> float:
    """Mean Huber loss: 0.5·d²/beta below beta, |d| − 0.5·beta above"""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.shape != target.shape:
        raise PipelineError(f"length mismatch: {pred.shape[0]} vs {target.shape[0]}")
    if pred.size == 0:
        return 0.0
    d = np.abs(pred - target)
    return float(np.mean(np.where(d < beta, 0.5 * d ** 2 / beta, d - 0.5 * beta)))


def edge_aware_smoothness(depth: DepthImage, image: np.ndarray) -> float:
    """mean_x(|∂x d|·e^{−|∂x I|}) + mean_y(|∂y d|·e^{−|∂y I|}) with forward differences"""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != depth.shape:
        raise ResolutionMismatchError(f"depth {depth.shape} vs image {image.shape}")
    d = depth.values
    total = 0.0
    if d.shape[1] > 1:
        total += float(np.mean(np.abs(np.diff(d, axis=1)) * np.exp(-np.abs(np.diff(image, axis=1)))))
    if d.shape[0] > 1:
        total += float(np.mean(np.abs(np.diff(d, axis=0)) * np.exp(-np.abs(np.diff(image, axis=0)))))
    return total


def detector_cross_entropy(logits, labels) -> float:
    """Mean softmax cross-entropy over detector cells; last logits axis is the class"""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise PipelineError(f"labels {labels.shape} do not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelRangeError(f"labels must lie in [0, {n_classes - 1}]")
    flat_logits = logits.reshape(-1, n_classes)
    flat_labels = labels.reshape(-1)
    picked = flat_logits[np.arange(flat_labels.size), flat_labels]
    return float(np.mean(logsumexp(flat_logits, axis=1) - picked))


def downsample_depth(gt: DepthImage, factor: int) -> DepthImage:
    """Valid-masked block mean; trailing rows/columns beyond a full block are cropped"""
    if factor == 1:
        return gt
    h, w = gt.shape[0] // factor, gt.shape[1] // factor
    values = gt.values[:h * factor, :w * factor].reshape(h, factor, w, factor)
    mask = gt.valid_mask[:h * factor, :w * factor].reshape(h, factor, w, factor)
    counts = mask.sum(axis=(1, 3))
    sums = np.where(mask, values, 0.0).sum(axis=(1, 3))
    out = np.divide(sums, counts, out=np.zeros((h, w)), where=counts > 0)
    return DepthImage(values=out, valid_mask=counts > 0)


def depth_pyramid(depth: DepthImage, n_scales: int = 4) -> List[DepthImage]:
    return [downsample_depth(depth, f) for f in PYRAMID_FACTORS[:n_scales]]


def per_scale_depth_losses(pred_pyramid: Sequence[DepthImage], gt: DepthImage,
                           config: LossConfig) -> List[float]:
    """Smooth-L1 per pyramid level over pixels valid in both prediction and downsampled GT

    Raises:
        ScaleMismatchError: wrong level count or level resolution
    """
    if len(pred_pyramid) != config.n_scales:
        raise ScaleMismatchError(f"{len(pred_pyramid)} predictions for {config.n_scales} scales")
    losses = []
    for level, (pred, factor) in enumerate(zip(pred_pyramid, PYRAMID_FACTORS)):
        gt_level = downsample_depth(gt, factor)
        if pred.shape != gt_level.shape:
            raise ScaleMismatchError(f"scale {level}: prediction {pred.shape} vs expected {gt_level.shape}")
        mask = pred.valid_mask & gt_level.valid_mask
        if not np.any(mask):
            _LOGGER.warning(f"scale {level} has no jointly valid pixels, contributing 0")
            losses.append(0.0)
            continue
        losses.append(smooth_l1(pred.values[mask], gt_level.values[mask], config.huber_beta))
    return losses


def multiscale_depth_loss(pred_pyramid: Sequence[DepthImage], gt: DepthImage, config: LossConfig) -> float:
    """Σ_i w_{d,i}·smooth_l1(pred_i, gt_i) with w_{d,i} = w_d1·damping^i"""
    losses = per_scale_depth_losses(pred_pyramid, gt, config)
    return float(sum(w * loss for w, loss in zip(config.depth_weights(), losses)))


def total_loss(l_ip: float, l_2d: float, l_3d: float, l_sm: float,
               depth_losses: Sequence[float], config: LossConfig) -> float:
    """Weighted sum of the detector, 2D, 3D, smoothness and per-scale depth terms

    Raises:
        NonFiniteLossError: a component is NaN or infinite
        ScaleMismatchError: depth_losses length differs from config.n_scales
    """
    components = [l_ip, l_2d, l_3d, l_sm, *depth_losses]
    if not all(np.isfinite(c) for c in components):
        raise NonFiniteLossError(f"non-finite loss component in {components}")
    if len(depth_losses) != config.n_scales:
        raise ScaleMismatchError(f"{len(depth_losses)} depth losses for {config.n_scales} scales")
    weighted = [config.w_ip * l_ip, config.w_2d * l_2d, config.w_3d * l_3d, config.w_sm * l_sm]
    weighted += [w * loss for w, loss in zip(config.depth_weights(), depth_losses)]
    return float(sum(weighted))
