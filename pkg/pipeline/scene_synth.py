"""Synthetic multi-view scenes with exact ground truth

Points are placed on integer anchor pixels at sampled depths, so every anchor
correspondence, score peak and GT depth is known analytically. Auxiliary views
sit along a jittered baseline; their descriptor fields carry Gaussian splats of
each point's unit descriptor over a constant per-view background vector.
"""

import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from pipeline.depth_tools import DepthImage
from pipeline.errors import InvisiblePointError, PipelineError, UnderdeterminedError, VisibilityError
from pipeline.geometry import CameraView, project
from pipeline.interest_points import ScoreMap
from pipeline.matching import DescriptorField
from utils.logger import get_logger
from utils.rng import derive_rng

_LOGGER = get_logger(__name__)

MAX_PLACEMENT_TRIES = 1000


@dataclass(frozen=True)
class SceneConfig:
    n_points: int = 512
    n_views: int = 3
    depth_min: float = 1.0
    depth_max: float = 6.0
    baseline: float = 0.3
    rotation_jitter: float = 0.01
    descriptor_dim: int = 32
    peak_sharpness: float = 1.5
    pixel_noise: float = 0.0
    seed: int = 0
    image_size: Tuple[int, int] = (320, 240)
    focal_px: float = 277.0
    descriptor_stride: int = 1
    min_separation_px: int = 5
    border_px: int = 4
    background_weight: float = 0.5
    score_sharpness: float = 1.0
    require_all_visible: bool = True

    def __post_init__(self):
        if self.n_views < 2:
            raise PipelineError(f"n_views must be >= 2, got {self.n_views}")
        if not 0.0 < self.depth_min < self.depth_max or not math.isfinite(self.depth_max):
            raise PipelineError(f"depth range must satisfy 0 < min < max < inf, got [{self.depth_min}, {self.depth_max}]")
        if self.descriptor_dim < 2:
            raise PipelineError(f"descriptor_dim must be >= 2, got {self.descriptor_dim}")
        if self.n_points < 0 or self.peak_sharpness <= 0 or self.score_sharpness <= 0 or self.pixel_noise < 0:
            raise PipelineError("n_points, sharpness and noise must be non-negative (sharpness > 0)")
        if self.descriptor_stride < 1 or self.background_weight <= 0:
            raise PipelineError("descriptor_stride must be >= 1 and background_weight > 0")
        if self.descriptor_stride > self.peak_sharpness:
            raise PipelineError(f"descriptor_stride {self.descriptor_stride} px exceeds peak_sharpness "
                                f"{self.peak_sharpness} px: planted splats would fall between grid nodes")


@dataclass(frozen=True)
class Scene:
    """Generated scene; view 0 is the anchor"""
    config: SceneConfig
    points: np.ndarray
    anchor_pixels: np.ndarray
    descriptors: np.ndarray
    views: List[CameraView]
    fields: List[DescriptorField]
    score_maps: List[ScoreMap]
    gt_depths: List[DepthImage]
    images: List[np.ndarray]
    planted: List[np.ndarray] = field(repr=False, default_factory=list)

    @property
    def n_points(self) -> int:
        return len(self.points)


def make_views(config: SceneConfig) -> List[CameraView]:
    """Anchor at the origin, auxiliary centers spread evenly over the baseline along +x"""
    width, height = config.image_size
    K = np.array([[config.focal_px, 0.0, (width - 1) / 2.0],
                  [0.0, config.focal_px, (height - 1) / 2.0],
                  [0.0, 0.0, 1.0]])
    rng = derive_rng(config.seed, "scene/views")
    views = [CameraView(K=K, R=np.eye(3), t=np.zeros(3), image_size=config.image_size)]
    for k in range(1, config.n_views):
        center = np.array([config.baseline * k / (config.n_views - 1), 0.0, 0.0])
        R = Rotation.from_rotvec(rng.normal(scale=config.rotation_jitter, size=3)).as_matrix()
        views.append(CameraView(K=K, R=R, t=-R @ center, image_size=config.image_size))
    return views


def _inside(view: CameraView, uv: np.ndarray, border: int) -> bool:
    return (border <= uv[0] <= view.width - 1 - border) and (border <= uv[1] <= view.height - 1 - border)


def _place_points(config: SceneConfig, views: List[CameraView]) -> Tuple[np.ndarray, np.ndarray]:
    rng = derive_rng(config.seed, "scene/points")
    width, height = config.image_size
    sep = config.min_separation_px
    check_views = views if config.require_all_visible else views[:1]
    taken = [np.zeros((height, width), dtype=bool) for _ in check_views]

    pixels, points = [], []
    for j in range(config.n_points):
        for _ in range(MAX_PLACEMENT_TRIES):
            u = int(rng.integers(config.border_px, width - config.border_px))
            v = int(rng.integers(config.border_px, height - config.border_px))
            depth = float(rng.uniform(config.depth_min, config.depth_max))
            X = views[0].unproject([[u, v]], [depth])[0]
            cells = []
            for view, occupied in zip(check_views, taken):
                uv, d = view.project_points(X[None, :])
                if not d[0] > 0.0 or not _inside(view, uv[0], config.border_px):
                    break
                col, row = int(math.floor(uv[0, 0] + 0.5)), int(math.floor(uv[0, 1] + 0.5))
                if occupied[row, col]:
                    break
                cells.append((col, row))
            else:
                for (col, row), occupied in zip(cells, taken):
                    occupied[max(row - sep + 1, 0):row + sep, max(col - sep + 1, 0):col + sep] = True
                pixels.append((u, v))
                points.append(X)
                break
        else:
            raise VisibilityError(f"could not place point {j} after {MAX_PLACEMENT_TRIES} tries")
    return np.asarray(pixels, dtype=np.int64).reshape(-1, 2), np.asarray(points).reshape(-1, 3)


def _splat_window(center: np.ndarray, sigma: float, node_step: int, shape: Tuple[int, int]):
    """Grid-node window (rows, cols) around a pixel position and the Gaussian weights on it"""
    radius = int(math.ceil(4.0 * sigma / node_step)) + 1
    gc, gr = center[0] / node_step, center[1] / node_step
    r0, r1 = max(int(math.floor(gr)) - radius, 0), min(int(math.floor(gr)) + radius + 1, shape[0])
    c0, c1 = max(int(math.floor(gc)) - radius, 0), min(int(math.floor(gc)) + radius + 1, shape[1])
    rows = np.arange(r0, r1)
    cols = np.arange(c0, c1)
    dy = rows[:, None] * node_step - center[1]
    dx = cols[None, :] * node_step - center[0]
    weights = np.exp(-(dx ** 2 + dy ** 2) / (2.0 * sigma ** 2))
    return slice(r0, r1), slice(c0, c1), weights


def _render_view(config: SceneConfig, view: CameraView, positions: np.ndarray, exact: np.ndarray,
                 depths: np.ndarray, descriptors: np.ndarray, background: np.ndarray, albedo: np.ndarray):
    width, height = config.image_size
    stride = config.descriptor_stride
    grid_shape = (height // stride, width // stride)

    accum = np.broadcast_to(config.background_weight * background, grid_shape + (config.descriptor_dim,)).copy()
    score = np.zeros((height, width))
    intensity = np.zeros((height, width))
    gt = np.zeros((height, width))
    for j in range(len(positions)):
        if not np.all(np.isfinite(positions[j])):
            continue
        rs, cs, w = _splat_window(positions[j], config.peak_sharpness, stride, grid_shape)
        accum[rs, cs] += w[:, :, None] * descriptors[j][None, None, :]

        if not np.all(np.isfinite(exact[j])):
            continue
        rs, cs, w = _splat_window(exact[j], config.score_sharpness, 1, (height, width))
        score[rs, cs] = np.maximum(score[rs, cs], w)
        rs, cs, w = _splat_window(exact[j], 2.0 * config.peak_sharpness, 1, (height, width))
        intensity[rs, cs] += albedo[j] * w

        col, row = int(math.floor(exact[j, 0] + 0.5)), int(math.floor(exact[j, 1] + 0.5))
        if 0 <= col < width and 0 <= row < height and (gt[row, col] == 0.0 or depths[j] < gt[row, col]):
            gt[row, col] = depths[j]

    accum /= np.linalg.norm(accum, axis=-1, keepdims=True)
    descriptor_field = DescriptorField(values=accum.astype(np.float32), stride=stride, image_size=config.image_size)
    score_map = ScoreMap(np.clip(score, 0.0, 1.0).astype(np.float32))
    image = np.round(np.clip(intensity, 0.0, 1.0) * 255.0).astype(np.uint8)
    return descriptor_field, score_map, DepthImage.from_values(gt), image


def generate_scene(config: SceneConfig) -> Scene:
    """Generate a scene deterministically from ``config.seed``

    Raises:
        VisibilityError: a point could not be placed within 1000 rejection rounds
    """
    views = make_views(config)
    anchor_pixels, points = _place_points(config, views)

    rng = derive_rng(config.seed, "scene/descriptors")
    descriptors = rng.normal(size=(len(points), config.descriptor_dim))
    descriptors /= np.linalg.norm(descriptors, axis=1, keepdims=True)
    backgrounds = rng.normal(size=(config.n_views, config.descriptor_dim))
    backgrounds /= np.linalg.norm(backgrounds, axis=1, keepdims=True)
    albedo = derive_rng(config.seed, "scene/albedo").uniform(0.2, 1.0, size=len(points))
    noise_rng = derive_rng(config.seed, "scene/pixel_noise")

    fields, score_maps, gt_depths, images, planted = [], [], [], [], []
    for k, view in enumerate(views):
        exact, depths = view.project_points(points)
        in_view = (depths > 0.0) & view.in_bounds(exact)
        if k == 0:
            exact = anchor_pixels.astype(np.float64)
        else:
            exact = np.where(in_view[:, None], exact, np.nan)
        positions = exact.copy()
        if k > 0 and config.pixel_noise > 0:
            positions += noise_rng.normal(scale=config.pixel_noise, size=positions.shape)
        descriptor_field, score_map, gt, image = _render_view(
            config, view, positions, exact, depths, descriptors, backgrounds[k], albedo)
        fields.append(descriptor_field)
        score_maps.append(score_map)
        gt_depths.append(gt)
        images.append(image)
        planted.append(positions)

    _LOGGER.info(f"generated scene: {len(points)} points, {len(views)} views, seed {config.seed}")
    return Scene(config=config, points=points, anchor_pixels=anchor_pixels, descriptors=descriptors,
                 views=views, fields=fields, score_maps=score_maps, gt_depths=gt_depths,
                 images=images, planted=planted)


def oracle_match(scene: Scene, point_id: int, view_id: int) -> np.ndarray:
    """Exact projection of a scene point into a view

    Raises:
        InvisiblePointError: behind the camera or outside the image
    """
    view = scene.views[view_id]
    try:
        pixel, _ = project(view, scene.points[point_id])
    except PipelineError as e:
        raise InvisiblePointError(f"point {point_id} not visible in view {view_id}: {e}") from e
    if not view.in_bounds(pixel)[0]:
        raise InvisiblePointError(f"point {point_id} projects outside view {view_id}")
    return pixel


def oracle_triangulate(scene: Scene, point_id: int, pixel_noise_sd: float = 0.0, seed: int = 0) -> np.ndarray:
    """Unweighted DLT solved through the eigen-decomposition of AᵀA

    Independent of the SVD path in the triangulation module.
    """
    rng = derive_rng(seed, f"oracle/{point_id}")
    rows = []
    for view_id, view in enumerate(scene.views):
        try:
            pixel = oracle_match(scene, point_id, view_id)
        except InvisiblePointError:
            continue
        if pixel_noise_sd > 0:
            pixel = pixel + rng.normal(scale=pixel_noise_sd, size=2)
        P = view.P
        rows.append(pixel[0] * P[2] - P[0])
        rows.append(pixel[1] * P[2] - P[1])
    if len(rows) < 4:
        raise UnderdeterminedError(f"point {point_id} is visible in fewer than two views")
    A = np.asarray(rows)
    _, eigvecs = np.linalg.eigh(A.T @ A)
    z_bar = eigvecs[:, 0]
    return z_bar[:3] / z_bar[3]
